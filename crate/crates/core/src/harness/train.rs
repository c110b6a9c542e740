use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tasks::{build_task, TaskId, TaskOptions, TaskSample, TaskSet};
use super::HarnessError;
use crate::diffcore::{DiffError, Graph, NodeId, Tensor};
use crate::model::{
    contrastive_loss, cross_entropy, encode, forward_full, forward_unimodal, fuse_and_gate, similarity_logits, Bound,
    HeadInput, Modality, ModelConfig, ModelError, ModelParams,
};
use crate::signalio::{Dataset, Group};

/// Which epochs feed the contrastive stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignData {
    #[default]
    All,
    ControlsOnly,
}

/// Classifier family evaluated by cross-validation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Aligned encoders, cross-attention, gating and a fused head.
    #[default]
    Fused,
    /// A single encoder trained end to end with its own head.
    Eeg,
    Fnirs,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Fused => "fused",
            Self::Eeg => "eeg",
            Self::Fnirs => "fnirs",
        }
    }

    pub fn head_input(self) -> HeadInput {
        match self {
            Self::Fused => HeadInput::Fused,
            Self::Eeg => HeadInput::Eeg,
            Self::Fnirs => HeadInput::Fnirs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Contrastive stage.
    pub lr_align: f64,
    /// Task stage: fusion, gating and head.
    pub lr_task: f64,
    /// Encoder learning rate in the task stage, relative to `lr_task`.
    pub encoder_lr_multiplier: f64,
    pub momentum: f64,
    pub epochs_align: usize,
    pub epochs_task: usize,
    pub seed: u64,
    pub freeze_encoders_stage2: bool,
    pub task_id: String,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
    pub align_data: AlignData,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            lr_align: 0.01,
            lr_task: 0.01,
            encoder_lr_multiplier: 0.1,
            momentum: 0.9,
            epochs_align: 5,
            epochs_task: 15,
            seed: 0,
            freeze_encoders_stage2: false,
            task_id: TaskId::HcVsMbt.as_str().into(),
            grad_clip: 5.0,
            align_data: AlignData::All,
        }
    }
}

impl TrainConfig {
    /// Rates must be finite and non-negative; a zero rate is accepted so a
    /// stage can be run as a no-op.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |field: &str, why: &str| Err(HarnessError::Config(format!("train.{field}: {why}")));
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        for (field, v) in [
            ("lr_align", self.lr_align),
            ("lr_task", self.lr_task),
            ("encoder_lr_multiplier", self.encoder_lr_multiplier),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(field, "must be finite and non-negative");
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", "must lie in [0, 1)");
        }
        if !(self.grad_clip.is_finite() && self.grad_clip >= 0.0) {
            return bad("grad_clip", "must be finite and non-negative");
        }
        Ok(())
    }

    pub fn task(&self) -> Result<TaskId, HarnessError> {
        self.task_id.parse()
    }
}

/// Trained parameters and the per-step training loss.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub loss_curve: Vec<f64>,
}

/// Momentum gradient descent over named tensors.
struct Momentum {
    coefficient: f64,
    clip: f64,
    velocity: BTreeMap<String, Tensor>,
}

impl Momentum {
    fn new(coefficient: f64, clip: f64) -> Self {
        Self {
            coefficient,
            clip,
            velocity: BTreeMap::new(),
        }
    }

    fn step(&mut self, params: &mut ModelParams, grads: &BTreeMap<String, Tensor>, rate: impl Fn(&str) -> f64) {
        let norm = grads.values().flat_map(|t| t.data()).map(|g| g * g).sum::<f64>().sqrt();
        let factor = if self.clip > 0.0 && norm > self.clip {
            self.clip / norm
        } else {
            1.0
        };
        for (name, grad) in grads {
            let lr = rate(name);
            let v = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(grad.shape().to_vec()));
            let p = params.tensors.get_mut(name).expect("gradient of a known parameter");
            for ((vi, gi), pi) in v.data_mut().iter_mut().zip(grad.data()).zip(p.data_mut()) {
                *vi = self.coefficient * *vi + factor * gi;
                *pi -= lr * *vi;
            }
        }
    }
}

fn is_encoder(name: &str) -> bool {
    name.starts_with("eeg.") || name.starts_with("fnirs.")
}

fn batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

fn scalar(g: &Graph, id: NodeId) -> f64 {
    g.value(id).data()[0]
}

/// Stage one: symmetric contrastive alignment of the two encoders on
/// paired epochs. Only encoder and alignment parameters move.
pub fn train_alignment(ds: &Dataset, model: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome, HarnessError> {
    let pairs: Vec<(&Array2<f64>, &Array2<f64>)> = ds
        .epochs
        .iter()
        .filter(|e| cfg.align_data == AlignData::All || e.group == Group::Hc)
        .map(|e| (&e.eeg, &e.fnirs))
        .collect();
    let params = ModelParams::init(model.clone(), cfg.seed)?;
    align_pairs(params, &pairs, cfg)
}

/// Upper bound on `exp(tau)`; an unbounded scale lets a few confident
/// pairs dominate the loss and destabilise the encoders.
pub const MAX_LOGIT_SCALE: f64 = 100.0;

fn clamp_logit_scale(params: &mut ModelParams) {
    if let Some(tau) = params.tensors.get_mut("align.tau") {
        let v = &mut tau.data_mut()[0];
        *v = v.min(MAX_LOGIT_SCALE.ln());
    }
}

/// Stacks unit embeddings into `[B × D]`, removes the batch mean and
/// renormalises. Freshly initialised encoders map every epoch close to one
/// shared direction; centring exposes the per-pair differences.
fn center_batch(g: &mut Graph, rows: &[NodeId]) -> Result<NodeId, HarnessError> {
    let x = g.concat(rows, 0)?;
    if rows.len() < 2 {
        return Ok(x);
    }
    let mean = g.mean(x, 0)?;
    let neg = g.scale(mean, -1.0)?;
    let centered = g.add(x, neg)?;
    Ok(g.l2_normalize(centered, 1)?)
}

type Grads = BTreeMap<String, Tensor>;

/// Non-finite values raised inside a training step mean the run diverged.
fn as_divergence(e: HarnessError, stage: &'static str, step: usize) -> HarnessError {
    match e {
        HarnessError::Model(ModelError::Diff(DiffError::NonFinite(_))) => HarnessError::Divergence { stage, step },
        e => e,
    }
}

fn alignment_step(
    params: &ModelParams,
    pairs: &[(&Array2<f64>, &Array2<f64>)],
    batch: &[usize],
    trainable: impl Fn(&str) -> bool,
) -> Result<(f64, Grads), HarnessError> {
    let mut g = Graph::new();
    let b = params.bind(&mut g, trainable);
    let mut xe = Vec::with_capacity(batch.len());
    let mut xf = Vec::with_capacity(batch.len());
    for &i in batch {
        let (eeg, fnirs) = pairs[i];
        xe.push(encode(&mut g, &b, &params.config, Modality::Eeg, eeg)?.pooled);
        xf.push(encode(&mut g, &b, &params.config, Modality::Fnirs, fnirs)?.pooled);
    }
    let xe = center_batch(&mut g, &xe)?;
    let xf = center_batch(&mut g, &xf)?;
    let s = similarity_logits(&mut g, xe, xf, b.get("align.tau")?, b.get("align.beta")?)?;
    let loss = contrastive_loss(&mut g, s)?;
    let value = scalar(&g, loss);
    if value.is_finite() {
        g.backward(loss)?;
    }
    Ok((value, b.grads(&g)))
}

pub(crate) fn align_pairs(
    mut params: ModelParams,
    pairs: &[(&Array2<f64>, &Array2<f64>)],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, HarnessError> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(HarnessError::Data("no paired epochs to align".into()));
    }
    let trainable = |n: &str| is_encoder(n) || n.starts_with("align.");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x000a_119e);
    let mut opt = Momentum::new(cfg.momentum, cfg.grad_clip);
    let mut curve = Vec::new();
    for _ in 0..cfg.epochs_align {
        for batch in batches(pairs.len(), cfg.batch_size, &mut rng) {
            let (value, grads) = alignment_step(&params, pairs, &batch, trainable)
                .map_err(|e| as_divergence(e, "alignment", curve.len()))?;
            if !value.is_finite() {
                return Err(HarnessError::Divergence {
                    stage: "alignment",
                    step: curve.len(),
                });
            }
            curve.push(value);
            opt.step(&mut params, &grads, |_| cfg.lr_align);
            clamp_logit_scale(&mut params);
        }
    }
    Ok(TrainOutcome {
        params,
        loss_curve: curve,
    })
}

/// Stage two on a whole dataset: builds the configured task and fits a
/// fused head on every sample.
pub fn train_task(
    ds: &Dataset,
    base: &ModelParams,
    cfg: &TrainConfig,
    opts: &TaskOptions,
) -> Result<TrainOutcome, HarnessError> {
    let task = cfg.task()?;
    let set = build_task(ds, task, opts)?;
    let all: Vec<usize> = (0..set.samples.len()).collect();
    fit_task(&set, &all, base, cfg)
}

fn check_classes(set: &TaskSet, indices: &[usize]) -> Result<(), HarnessError> {
    let present = set.classes_present(indices);
    if present.len() < 2 {
        return Err(HarnessError::Data(format!(
            "task `{}` training data holds {} class(es); need at least 2",
            set.task,
            present.len()
        )));
    }
    Ok(())
}

/// Attaches a fused decoder head named after the task and trains fusion,
/// gating and head (encoders at a reduced rate, or frozen) with
/// cross-entropy on `set.samples[indices]`.
pub fn fit_task(
    set: &TaskSet,
    indices: &[usize],
    base: &ModelParams,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, HarnessError> {
    cfg.validate()?;
    check_classes(set, indices)?;
    let head = set.task.as_str();
    let mut params = base.clone();
    params.add_head(head, set.n_classes, HeadInput::Fused, cfg.seed);
    let frozen = cfg.freeze_encoders_stage2;
    let trainable = |n: &str| !n.starts_with("align.") && !(frozen && is_encoder(n));
    let rate = |n: &str| {
        if is_encoder(n) {
            cfg.lr_task * cfg.encoder_lr_multiplier
        } else {
            cfg.lr_task
        }
    };
    let curve = supervised_loop(&mut params, set, indices, cfg, "task", trainable, rate, |g, b, p, s| {
        Ok(forward_full(g, b, p, &s.eeg, &s.fnirs, head)?.logits)
    })?;
    Ok(TrainOutcome {
        params,
        loss_curve: curve,
    })
}

/// Head id of a single-modality classifier for `task`.
pub fn unimodal_head(task: TaskId, kind: ModelKind) -> String {
    format!("{}-{}", task.as_str(), kind.as_str())
}

/// A fresh single-encoder classifier trained end to end at `lr_task` for
/// `epochs_task` epochs.
pub fn fit_unimodal(
    set: &TaskSet,
    indices: &[usize],
    model: &ModelConfig,
    kind: ModelKind,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, HarnessError> {
    cfg.validate()?;
    if kind == ModelKind::Fused {
        return Err(HarnessError::Config(
            "unimodal training needs the eeg or fnirs model kind".into(),
        ));
    }
    check_classes(set, indices)?;
    let head = unimodal_head(set.task, kind);
    let mut params = ModelParams::init(model.clone(), cfg.seed)?;
    params.add_head(&head, set.n_classes, kind.head_input(), cfg.seed);
    let prefix = if kind == ModelKind::Eeg { "eeg." } else { "fnirs." };
    let trainable = |n: &str| n.starts_with(prefix) || n.starts_with("head.");
    let curve = supervised_loop(
        &mut params,
        set,
        indices,
        cfg,
        "unimodal",
        trainable,
        |_| cfg.lr_task,
        |g, b, p, s| {
            let x = if kind == ModelKind::Eeg { &s.eeg } else { &s.fnirs };
            Ok(forward_unimodal(g, b, p, x, &head)?.logits)
        },
    )?;
    Ok(TrainOutcome {
        params,
        loss_curve: curve,
    })
}

#[allow(clippy::too_many_arguments)]
fn supervised_loop(
    params: &mut ModelParams,
    set: &TaskSet,
    indices: &[usize],
    cfg: &TrainConfig,
    stage: &'static str,
    trainable: impl Fn(&str) -> bool,
    rate: impl Fn(&str) -> f64,
    forward: impl Fn(&mut Graph, &Bound, &ModelParams, &TaskSample) -> Result<NodeId, HarnessError>,
) -> Result<Vec<f64>, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7a5c);
    let mut opt = Momentum::new(cfg.momentum, cfg.grad_clip);
    let mut curve = Vec::new();
    for _ in 0..cfg.epochs_task {
        for batch in batches(indices.len(), cfg.batch_size, &mut rng) {
            let step = curve.len();
            let (value, grads) = supervised_step(params, set, indices, &batch, &trainable, &forward)
                .map_err(|e| as_divergence(e, stage, step))?;
            if !value.is_finite() {
                return Err(HarnessError::Divergence { stage, step });
            }
            curve.push(value);
            opt.step(params, &grads, &rate);
        }
    }
    Ok(curve)
}

fn supervised_step(
    params: &ModelParams,
    set: &TaskSet,
    indices: &[usize],
    batch: &[usize],
    trainable: impl Fn(&str) -> bool,
    forward: impl Fn(&mut Graph, &Bound, &ModelParams, &TaskSample) -> Result<NodeId, HarnessError>,
) -> Result<(f64, Grads), HarnessError> {
    let mut g = Graph::new();
    let b = params.bind(&mut g, trainable);
    let mut total: Option<NodeId> = None;
    for &k in batch {
        let sample = &set.samples[indices[k]];
        let logits = forward(&mut g, &b, params, sample)?;
        let l = cross_entropy(&mut g, logits, sample.label)?;
        total = Some(match total {
            None => l,
            Some(t) => g.add(t, l)?,
        });
    }
    let loss = g.scale(total.expect("non-empty batch"), 1.0 / batch.len() as f64)?;
    let value = scalar(&g, loss);
    if value.is_finite() {
        g.backward(loss)?;
    }
    Ok((value, b.grads(&g)))
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap_or(0)
}

/// Predicted class of each selected sample under `head`, dispatching on
/// the head's input kind.
pub fn predict(params: &ModelParams, head: &str, set: &TaskSet, indices: &[usize]) -> Result<Vec<usize>, HarnessError> {
    let input = params.head(head)?.input;
    indices
        .iter()
        .map(|&i| {
            let s = &set.samples[i];
            let mut g = Graph::new();
            let b = params.bind(&mut g, |_| false);
            let logits = match input {
                HeadInput::Fused => forward_full(&mut g, &b, params, &s.eeg, &s.fnirs, head)?.logits,
                HeadInput::Eeg => forward_unimodal(&mut g, &b, params, &s.eeg, head)?.logits,
                HeadInput::Fnirs => forward_unimodal(&mut g, &b, params, &s.fnirs, head)?.logits,
            };
            Ok(argmax(g.value(logits).data()))
        })
        .collect()
}

/// Gated fused embedding (temporal mean of the refined tokens) of one pair.
pub fn embed(params: &ModelParams, eeg: &Array2<f64>, fnirs: &Array2<f64>) -> Result<Vec<f64>, HarnessError> {
    let mut g = Graph::new();
    let b = params.bind(&mut g, |_| false);
    let out = fuse_and_gate(&mut g, &b, params, eeg, fnirs)?;
    Ok(g.value(out.embedding).data().to_vec())
}
