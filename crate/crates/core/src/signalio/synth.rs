use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::labels::mocd_levels;
use super::{Cohort, Cue, Dataset, Group, MultimodalEpoch, Provenance, SignalIoError, SubjectRecord};
use crate::dsp::RoiMap;

/// Parameters of the synthetic paired-signal generator.
///
/// The class signal is sign coded: controls carry `-1`, pre-treatment
/// patients `+1` and post-treatment sessions `1 - 2·mat_recovery`, so a
/// post-treatment session sits `mat_recovery` of the way back toward the
/// controls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_subjects_per_group: usize,
    pub epochs_per_subject: usize,
    pub fs_eeg: f64,
    pub fs_fnirs: f64,
    pub epoch_seconds: f64,
    /// Time at which the fNIRS class response reaches half its peak.
    pub fnirs_onset_delay: f64,
    /// Share of the class amplitude carried by the EEG channels.
    pub class_effect_split: f64,
    pub noise_sd: f64,
    pub subject_effect_sd: f64,
    pub seed: u64,
    pub eeg_channels: usize,
    pub fnirs_channels: usize,
    /// Total class amplitude split between the modalities.
    pub class_amplitude: f64,
    pub burst_hz: f64,
    pub burst_seconds: f64,
    /// Time stretch of the double-gamma kernel; 1.0 is the canonical
    /// 6 s / 16 s shape.
    pub hrf_time_scale: f64,
    /// Amplitude of the class-independent hemodynamic response.
    pub common_response: f64,
    /// Amplitude of the class-independent EEG burst; the class effect
    /// raises or lowers it.
    pub common_burst: f64,
    /// Extra amplitude per craving level step on methamphetamine cues.
    pub craving_effect: f64,
    pub include_mat: bool,
    pub mat_recovery: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects_per_group: 4,
            epochs_per_subject: 30,
            fs_eeg: 40.0,
            fs_fnirs: 10.0,
            epoch_seconds: 7.0,
            fnirs_onset_delay: 2.8,
            class_effect_split: 0.5,
            noise_sd: 1.0,
            subject_effect_sd: 0.2,
            seed: 0,
            eeg_channels: 4,
            fnirs_channels: 7,
            class_amplitude: 1.0,
            burst_hz: 10.0,
            burst_seconds: 2.0,
            hrf_time_scale: 0.15,
            common_response: 1.0,
            common_burst: 1.0,
            craving_effect: 0.0,
            include_mat: true,
            mat_recovery: 0.7,
        }
    }
}

fn bad(field: &'static str, reason: impl Into<String>) -> SignalIoError {
    SignalIoError::Config {
        field,
        reason: reason.into(),
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SignalIoError> {
        let counts = [
            ("n_subjects_per_group", self.n_subjects_per_group),
            ("epochs_per_subject", self.epochs_per_subject),
            ("eeg_channels", self.eeg_channels),
            ("fnirs_channels", self.fnirs_channels),
        ];
        for (field, v) in counts {
            if v == 0 {
                return Err(bad(field, "must be at least 1"));
            }
        }
        let positive = [
            ("fs_eeg", self.fs_eeg),
            ("fs_fnirs", self.fs_fnirs),
            ("epoch_seconds", self.epoch_seconds),
            ("hrf_time_scale", self.hrf_time_scale),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(bad(field, format!("must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("noise_sd", self.noise_sd),
            ("subject_effect_sd", self.subject_effect_sd),
            ("class_amplitude", self.class_amplitude),
            ("common_response", self.common_response),
            ("common_burst", self.common_burst),
            ("craving_effect", self.craving_effect),
            ("burst_seconds", self.burst_seconds),
        ];
        for (field, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(bad(field, format!("must be non-negative, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.class_effect_split) {
            return Err(bad(
                "class_effect_split",
                format!("must lie in [0, 1], got {}", self.class_effect_split),
            ));
        }
        if !(0.0..=1.0).contains(&self.mat_recovery) {
            return Err(bad(
                "mat_recovery",
                format!("must lie in [0, 1], got {}", self.mat_recovery),
            ));
        }
        if !(self.fnirs_onset_delay >= 0.0 && self.fnirs_onset_delay < self.epoch_seconds) {
            return Err(bad(
                "fnirs_onset_delay",
                format!(
                    "must lie in [0, {}), got {}",
                    self.epoch_seconds, self.fnirs_onset_delay
                ),
            ));
        }
        if !(self.burst_hz > 0.0 && self.burst_hz < self.fs_eeg / 2.0) {
            return Err(bad(
                "burst_hz",
                format!("must lie in (0, {}), got {}", self.fs_eeg / 2.0, self.burst_hz),
            ));
        }
        if (self.epoch_seconds * self.fs_eeg).round() < 2.0 || (self.epoch_seconds * self.fs_fnirs).round() < 2.0 {
            return Err(bad("epoch_seconds", "epochs need at least two samples per modality"));
        }
        Ok(())
    }

    pub fn eeg_samples(&self) -> usize {
        (self.epoch_seconds * self.fs_eeg).round() as usize
    }

    pub fn fnirs_samples(&self) -> usize {
        (self.epoch_seconds * self.fs_fnirs).round() as usize
    }

    /// Class sign of a session group.
    pub fn class_sign(&self, group: Group) -> f64 {
        match group {
            Group::Hc => -1.0,
            Group::Mbt => 1.0,
            Group::Mat => 1.0 - 2.0 * self.mat_recovery,
        }
    }

    /// Noise-free class response of the fNIRS channels, peak 1, sampled at
    /// `fs_fnirs`.
    pub fn fnirs_response(&self) -> Vec<f64> {
        let (grid, dt) = response_grid(self);
        let half_rise = first_crossing(&grid, 0.5).unwrap_or(0.0) * dt;
        let shift = self.fnirs_onset_delay - half_rise;
        (0..self.fnirs_samples())
            .map(|i| sample_at(&grid, dt, i as f64 / self.fs_fnirs - shift))
            .collect()
    }

    /// Envelope of the EEG burst sampled at `fs_eeg`.
    pub fn eeg_envelope(&self) -> Vec<f64> {
        (0..self.eeg_samples())
            .map(|i| burst_envelope(i as f64 / self.fs_eeg, self.burst_seconds))
            .collect()
    }
}

fn gamma_pdf(t: f64, shape: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        ((shape - 1.0) * t.ln() - t - libm::lgamma(shape)).exp()
    }
}

/// Double-gamma hemodynamic kernel (peak shape 6, undershoot shape 16,
/// undershoot ratio 1/6) with its time axis divided by `time_scale`.
pub fn double_gamma_hrf(t: f64, time_scale: f64) -> f64 {
    let u = t / time_scale;
    (gamma_pdf(u, 6.0) - gamma_pdf(u, 16.0) / 6.0) / time_scale
}

fn burst_envelope(t: f64, burst_seconds: f64) -> f64 {
    if burst_seconds == 0.0 {
        return 0.0;
    }
    if (0.0..burst_seconds).contains(&t) {
        1.0
    } else {
        0.0
    }
}

const FINE_DT: f64 = 1e-3;

/// Boxcar of `burst_seconds` convolved with the kernel, on a fine grid
/// starting at the stimulus and normalised to a peak of 1.
fn response_grid(cfg: &SynthConfig) -> (Vec<f64>, f64) {
    let kernel_len = (32.0 * cfg.hrf_time_scale / FINE_DT).ceil() as usize + 1;
    let n = ((cfg.epoch_seconds + cfg.burst_seconds) / FINE_DT).ceil() as usize + kernel_len;
    let kernel: Vec<f64> = (0..kernel_len)
        .map(|i| double_gamma_hrf(i as f64 * FINE_DT, cfg.hrf_time_scale) * FINE_DT)
        .collect();
    // running integral of the kernel; boxcar response = K(t) - K(t - L)
    let mut cumulative = Vec::with_capacity(n);
    let mut acc = 0.0;
    for i in 0..n {
        acc += kernel.get(i).copied().unwrap_or(0.0);
        cumulative.push(acc);
    }
    let width = (cfg.burst_seconds / FINE_DT).round() as usize;
    let mut grid: Vec<f64> = (0..n)
        .map(|i| {
            if width == 0 {
                kernel.get(i).copied().unwrap_or(0.0)
            } else {
                cumulative[i] - if i >= width { cumulative[i - width] } else { 0.0 }
            }
        })
        .collect();
    let peak = grid.iter().cloned().fold(0.0, f64::max);
    if peak > 0.0 {
        grid.iter_mut().for_each(|v| *v /= peak);
    }
    (grid, FINE_DT)
}

fn first_crossing(grid: &[f64], level: f64) -> Option<f64> {
    let i = grid.iter().position(|&v| v >= level)?;
    if i == 0 {
        return Some(0.0);
    }
    let (a, b) = (grid[i - 1], grid[i]);
    Some(i as f64 - 1.0 + (level - a) / (b - a))
}

fn sample_at(grid: &[f64], dt: f64, t: f64) -> f64 {
    if t < 0.0 {
        return 0.0;
    }
    let x = t / dt;
    let i = x.floor() as usize;
    if i + 1 >= grid.len() {
        return 0.0;
    }
    let f = x - i as f64;
    grid[i] * (1.0 - f) + grid[i + 1] * f
}

struct SubjectDraw {
    eeg_offset: Vec<f64>,
    fnirs_offset: Vec<f64>,
    gain: f64,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Fixed spatial pattern: weights in [0.5, 1] with alternating sign.
fn spatial_pattern(n: usize, phase: f64) -> Vec<f64> {
    (0..n)
        .map(|c| {
            let w = 0.75 + 0.25 * (phase + c as f64 * 1.3).cos();
            if c.is_multiple_of(2) {
                w
            } else {
                -w
            }
        })
        .collect()
}

pub fn generate_synthetic_dataset(cfg: &SynthConfig) -> Result<Dataset, SignalIoError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (te, tf) = (cfg.eeg_samples(), cfg.fnirs_samples());
    let (ce, cf) = (cfg.eeg_channels, cfg.fnirs_channels);

    let envelope = cfg.eeg_envelope();
    let response = cfg.fnirs_response();
    let eeg_class = spatial_pattern(ce, 0.0);
    let eeg_craving = spatial_pattern(ce, 2.0);
    let fnirs_class = spatial_pattern(cf, 1.0);
    let fnirs_common: Vec<f64> = spatial_pattern(cf, 3.0).iter().map(|w| w.abs()).collect();
    let fnirs_craving = spatial_pattern(cf, 4.0);
    let phases: Vec<f64> = (0..ce).map(|c| c as f64 * PI / 4.0).collect();
    let carrier: Vec<Vec<f64>> = phases
        .iter()
        .map(|ph| {
            (0..te)
                .map(|i| (2.0 * PI * cfg.burst_hz * i as f64 / cfg.fs_eeg + ph).sin())
                .collect()
        })
        .collect();
    let a_eeg = cfg.class_amplitude * cfg.class_effect_split;
    let a_fnirs = cfg.class_amplitude * (1.0 - cfg.class_effect_split);
    let images = mocd_levels();

    let n = cfg.n_subjects_per_group as u32;
    let mut subjects = Vec::new();
    let mut sessions: Vec<(u32, Group)> = Vec::new();
    for id in 0..n {
        subjects.push(SubjectRecord {
            subject_id: id,
            cohort: Cohort::Control,
        });
        sessions.push((id, Group::Hc));
    }
    for id in n..2 * n {
        subjects.push(SubjectRecord {
            subject_id: id,
            cohort: Cohort::Patient,
        });
        sessions.push((id, Group::Mbt));
        if cfg.include_mat {
            sessions.push((id, Group::Mat));
        }
    }

    let mut draws: Vec<SubjectDraw> = Vec::new();
    for _ in 0..2 * n {
        let eeg_offset = (0..ce).map(|_| cfg.subject_effect_sd * normal(&mut rng)).collect();
        let fnirs_offset = (0..cf).map(|_| cfg.subject_effect_sd * normal(&mut rng)).collect();
        let gain = (cfg.subject_effect_sd * normal(&mut rng)).exp();
        draws.push(SubjectDraw {
            eeg_offset,
            fnirs_offset,
            gain,
        });
    }

    let mut epochs = Vec::new();
    for &(id, group) in &sessions {
        let draw = &draws[id as usize];
        let sign = cfg.class_sign(group);
        let mut meth_seen = 0usize;
        for k in 0..cfg.epochs_per_subject {
            let cue = if k.is_multiple_of(2) { Cue::Neutral } else { Cue::Meth };
            let (image_id, craving_level) = match cue {
                Cue::Meth => {
                    let (img, level) = images[meth_seen % images.len()];
                    meth_seen += 1;
                    (Some(img.to_string()), Some(level))
                }
                Cue::Neutral => (None, None),
            };
            let craving = match (craving_level, group) {
                (Some(level), Group::Mbt | Group::Mat) => cfg.craving_effect * (level.index() as f64 - 1.0),
                _ => 0.0,
            };

            let mut eeg = Array2::zeros((ce, te));
            for c in 0..ce {
                let amp = (cfg.common_burst + sign * a_eeg) * eeg_class[c] + craving * eeg_craving[c];
                for t in 0..te {
                    let clean = amp * envelope[t] * carrier[c][t];
                    eeg[[c, t]] = draw.eeg_offset[c] + draw.gain * clean + cfg.noise_sd * normal(&mut rng);
                }
            }
            let mut fnirs = Array2::zeros((cf, tf));
            for c in 0..cf {
                let amp = cfg.common_response * fnirs_common[c]
                    + sign * a_fnirs * fnirs_class[c]
                    + craving * fnirs_craving[c];
                for t in 0..tf {
                    fnirs[[c, t]] =
                        draw.fnirs_offset[c] + draw.gain * amp * response[t] + cfg.noise_sd * normal(&mut rng);
                }
            }
            epochs.push(MultimodalEpoch {
                eeg,
                fnirs,
                subject_id: id,
                group,
                cue,
                craving_level,
                epoch_index: k as u32,
                image_id,
            });
        }
    }

    let roi_map = RoiMap::standard(1);
    let retained = roi_map.retained_names();
    let roi_names = (0..cf)
        .map(|c| retained.get(c).cloned().unwrap_or_else(|| format!("ROI{}", c + 1)))
        .collect();
    let mut ds = Dataset {
        epochs,
        fs_eeg: cfg.fs_eeg,
        fs_fnirs: cfg.fs_fnirs,
        epoch_seconds: cfg.epoch_seconds,
        eeg_channel_names: (0..ce).map(|c| format!("EEG{}", c + 1)).collect(),
        roi_names,
        provenance: Provenance::Synthetic,
        seed: Some(cfg.seed),
        subjects,
    };
    ds.quantize_f32();
    Ok(ds)
}
