//! Gradient-weighted temporal saliency at an encoder's final convolutional
//! layer, group profiles and threshold-crossing onset estimates.


use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::{DiffError, Graph, Tensor};
use crate::model::{forward_unimodal, token_count, ModelError, ModelParams};

/// Onset threshold on the max-normalised profile.
pub const DEFAULT_THRESHOLD: f64 = 0.4;

#[derive(Debug, Error)]
pub enum SaliencyError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<DiffError> for SaliencyError {
    fn from(e: DiffError) -> Self {
        Self::Model(ModelError::Diff(e))
    }
}

/// Tap activations and the gradient of one class score with respect to
/// them, for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationCapture {
    /// `[N_K × T′]`.
    pub activations: Array2<f64>,
    /// `[N_K × T′]`, `∂y_c / ∂A`.
    pub gradients: Array2<f64>,
    pub class_id: usize,
    pub sample_id: usize,
}

impl ActivationCapture {
    pub fn new(
        activations: Array2<f64>,
        gradients: Array2<f64>,
        class_id: usize,
        sample_id: usize,
    ) -> Result<Self, SaliencyError> {
        if activations.dim() != gradients.dim() {
            return Err(SaliencyError::Shape(format!(
                "activations {:?} vs gradients {:?}",
                activations.dim(),
                gradients.dim()
            )));
        }
        Ok(Self {
            activations,
            gradients,
            class_id,
            sample_id,
        })
    }
}

fn to_array(t: &Tensor) -> Array2<f64> {
    Array2::from_shape_vec((t.shape()[0], t.shape()[1]), t.data().to_vec()).expect("rank-2 tensor")
}

/// Forward pass of a single-modality classifier, then backward from the
/// pre-softmax score of `class_id`, recording the tap activations and their
/// gradient. Also returns the predicted class.
pub fn capture(
    params: &ModelParams,
    head_id: &str,
    epoch: &Array2<f64>,
    class_id: usize,
    sample_id: usize,
) -> Result<(ActivationCapture, usize), SaliencyError> {
    let spec = params
        .heads
        .get(head_id)
        .ok_or_else(|| SaliencyError::Contract(format!("no trained head `{head_id}`")))?;
    if class_id >= spec.n_classes {
        return Err(SaliencyError::Contract(format!(
            "class {class_id} outside the {} outputs of head `{head_id}`",
            spec.n_classes
        )));
    }
    let mut g = Graph::new();
    // every parameter tracks gradients so the interior tap node does too
    let b = params.bind(&mut g, |_| true);
    let out = forward_unimodal(&mut g, &b, params, epoch, head_id)?;
    let score = g.slice(out.logits, 1, class_id, 1)?;
    let score = g.sum_all(score)?;
    g.backward(score)?;
    let activations = to_array(g.value(out.encoder.tap));
    let gradients = g
        .grad_tensor(out.encoder.tap)
        .map(|t| to_array(&t))
        .unwrap_or_else(|| Array2::zeros(activations.raw_dim()));
    let logits = g.value(out.logits).data();
    let predicted = (0..logits.len())
        .max_by(|&a, &b| logits[a].total_cmp(&logits[b]))
        .unwrap_or(0);
    Ok((
        ActivationCapture::new(activations, gradients, class_id, sample_id)?,
        predicted,
    ))
}

/// Channel weights are the temporal mean gradient; the map is the channel
/// mean of `ReLU(weight · activation)`.
pub fn sample_saliency(cap: &ActivationCapture) -> Vec<f64> {
    let (k, t) = cap.activations.dim();
    if k == 0 || t == 0 {
        return vec![0.0; t];
    }
    let weights = cap.gradients.mean_axis(Axis(1)).expect("non-empty time axis");
    let mut out = vec![0.0; t];
    for (row, w) in cap.activations.axis_iter(Axis(0)).zip(weights.iter()) {
        for (o, a) in out.iter_mut().zip(row.iter()) {
            *o += (w * a).max(0.0);
        }
    }
    out.iter_mut().for_each(|v| *v /= k as f64);
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    MaxUnit,
}

/// Group-averaged, max-normalised saliency over feature frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaliencyProfile {
    pub profile: Vec<f64>,
    pub n_samples: usize,
    pub normalization: Normalization,
    /// Feature frames per second.
    pub fs_feature: f64,
    /// Time of frame 0 in seconds.
    pub time_offset_s: f64,
    pub threshold: f64,
    /// True when the mean profile was identically zero.
    pub degenerate: bool,
}

impl SaliencyProfile {
    pub fn time_of(&self, index: f64) -> f64 {
        self.time_offset_s + index / self.fs_feature
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.profile.len()).map(|i| self.time_of(i as f64)).collect()
    }
}

/// Element-wise mean of per-sample maps, scaled so the maximum is 1.
pub fn group_profile(
    samples: &[Vec<f64>],
    fs_feature: f64,
    time_offset_s: f64,
) -> Result<SaliencyProfile, SaliencyError> {
    let first = samples
        .first()
        .ok_or_else(|| SaliencyError::Contract("no sample profiles to average".into()))?;
    if let Some((i, s)) = samples.iter().enumerate().find(|(_, s)| s.len() != first.len()) {
        return Err(SaliencyError::Shape(format!(
            "profile {i} has {} frames, profile 0 has {}",
            s.len(),
            first.len()
        )));
    }
    if !(fs_feature > 0.0) {
        return Err(SaliencyError::Contract(format!(
            "feature rate must be positive, got {fs_feature}"
        )));
    }
    let mut mean = vec![0.0; first.len()];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= samples.len() as f64);
    let peak = mean.iter().cloned().fold(0.0, f64::max);
    let degenerate = peak <= 0.0;
    if !degenerate {
        mean.iter_mut().for_each(|m| *m /= peak);
    }
    Ok(SaliencyProfile {
        profile: mean,
        n_samples: samples.len(),
        normalization: Normalization::MaxUnit,
        fs_feature,
        time_offset_s,
        threshold: DEFAULT_THRESHOLD,
        degenerate,
    })
}

/// First threshold crossing in seconds, linearly interpolated between the
/// bracketing frames; `None` if the profile never reaches the threshold.
pub fn onset_delay(p: &SaliencyProfile) -> Option<f64> {
    let i = p.profile.iter().position(|&v| v >= p.threshold)?;
    if i == 0 {
        return Some(p.time_of(0.0));
    }
    let (a, b) = (p.profile[i - 1], p.profile[i]);
    Some(p.time_of(i as f64 - 1.0 + (p.threshold - a) / (b - a)))
}

/// Which captured samples enter the group average.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleFilter {
    #[default]
    All,
    /// Only samples the model assigns to the analysed class.
    CorrectOnly,
}

/// Group profile of one class over a set of epochs of the head's modality.
/// Frames are centred: frame `i` maps to `(i + 0.5)·T/T′/fs` seconds.
pub fn class_profile(
    params: &ModelParams,
    head_id: &str,
    epochs: &[&Array2<f64>],
    class_id: usize,
    fs: f64,
    filter: SampleFilter,
) -> Result<SaliencyProfile, SaliencyError> {
    let first = epochs
        .first()
        .ok_or_else(|| SaliencyError::Contract("no epochs to analyse".into()))?;
    let t = first.ncols();
    let frames = token_count(&params.config, t);
    let fs_feature = fs * frames as f64 / t as f64;
    let mut maps = Vec::with_capacity(epochs.len());
    for (i, e) in epochs.iter().enumerate() {
        let (cap, predicted) = capture(params, head_id, e, class_id, i)?;
        if filter == SampleFilter::CorrectOnly && predicted != class_id {
            continue;
        }
        maps.push(sample_saliency(&cap));
    }
    if maps.is_empty() {
        return Err(SaliencyError::Contract(format!(
            "no epoch was assigned to class {class_id}"
        )));
    }
    group_profile(&maps, fs_feature, 0.5 / fs_feature)
}

/// Writes `time_s,saliency` rows.
pub fn write_profile_csv(p: &SaliencyProfile, path: &Path) -> Result<(), SaliencyError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["time_s", "saliency"])?;
    for (t, v) in p.times().iter().zip(&p.profile) {
        w.write_record([t.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Threshold and crossing time for a labelled profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossingSummary {
    pub label: String,
    pub threshold: f64,
    pub crossing_s: Option<f64>,
    pub n_samples: usize,
    pub degenerate: bool,
}

impl CrossingSummary {
    pub fn of(label: &str, p: &SaliencyProfile) -> Self {
        Self {
            label: label.to_string(),
            threshold: p.threshold,
            crossing_s: onset_delay(p),
            n_samples: p.n_samples,
            degenerate: p.degenerate,
        }
    }
}

pub fn write_summary_csv(rows: &[CrossingSummary], path: &Path) -> Result<(), SaliencyError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
