//! Paired EEG/fNIRS epochs, their on-disk layout, and a parametric
//! synthetic generator.

mod format;
mod labels;
mod synth;

pub use format::{read_dataset, write_dataset, BLOB_EEG, BLOB_FNIRS, CHECKSUM_FILE, MANIFEST_FILE};
pub use labels::{craving_level_labels, MOCD_METH_SCORES};
pub use synth::{double_gamma_hrf, generate_synthetic_dataset, SynthConfig};

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SignalIoError {
    #[error("invalid configuration field `{field}`: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("corrupt dataset: {0}")]
    Corrupt(String),
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Clinical group of the session an epoch was recorded in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    /// Healthy control.
    #[serde(rename = "HC")]
    Hc,
    /// Patient before treatment.
    #[serde(rename = "MBT")]
    Mbt,
    /// Patient after treatment.
    #[serde(rename = "MAT")]
    Mat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cue {
    Neutral,
    Meth,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CravingLevel {
    Low,
    Medium,
    High,
}

impl CravingLevel {
    pub const ALL: [CravingLevel; 3] = [Self::Low, Self::Medium, Self::High];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Hc => "HC",
            Self::Mbt => "MBT",
            Self::Mat => "MAT",
        })
    }
}

impl FromStr for Group {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "HC" => Ok(Self::Hc),
            "MBT" => Ok(Self::Mbt),
            "MAT" => Ok(Self::Mat),
            other => Err(format!("unknown group `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Synthetic,
    Imported,
}

/// One time-aligned EEG/fNIRS pair with its labels.
#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalEpoch {
    /// `[C_e × T_e]`.
    pub eeg: Array2<f64>,
    /// `[C_f × T_f]`.
    pub fnirs: Array2<f64>,
    pub subject_id: u32,
    pub group: Group,
    pub cue: Cue,
    pub craving_level: Option<CravingLevel>,
    pub epoch_index: u32,
    /// Stimulus image for cue epochs, e.g. `Meth13`.
    pub image_id: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cohort {
    Control,
    Patient,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: u32,
    pub cohort: Cohort,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub epochs: Vec<MultimodalEpoch>,
    pub fs_eeg: f64,
    pub fs_fnirs: f64,
    pub epoch_seconds: f64,
    pub eeg_channel_names: Vec<String>,
    pub roi_names: Vec<String>,
    pub provenance: Provenance,
    pub seed: Option<u64>,
    pub subjects: Vec<SubjectRecord>,
}

impl Dataset {
    pub fn eeg_samples(&self) -> usize {
        (self.epoch_seconds * self.fs_eeg).round() as usize
    }

    pub fn fnirs_samples(&self) -> usize {
        (self.epoch_seconds * self.fs_fnirs).round() as usize
    }

    pub fn eeg_channels(&self) -> usize {
        self.eeg_channel_names.len()
    }

    pub fn fnirs_channels(&self) -> usize {
        self.roi_names.len()
    }

    pub fn subject_ids(&self) -> BTreeSet<u32> {
        self.epochs.iter().map(|e| e.subject_id).collect()
    }

    /// Checks shapes, finiteness and the subject table.
    pub fn validate(&self) -> Result<(), SignalIoError> {
        let (te, tf) = (self.eeg_samples(), self.fnirs_samples());
        let (ce, cf) = (self.eeg_channels(), self.fnirs_channels());
        let known: BTreeSet<u32> = self.subjects.iter().map(|s| s.subject_id).collect();
        for (i, e) in self.epochs.iter().enumerate() {
            if e.eeg.dim() != (ce, te) {
                return Err(SignalIoError::Invalid(format!(
                    "epoch {i}: EEG shape {:?}, expected ({ce}, {te})",
                    e.eeg.dim()
                )));
            }
            if e.fnirs.dim() != (cf, tf) {
                return Err(SignalIoError::Invalid(format!(
                    "epoch {i}: fNIRS shape {:?}, expected ({cf}, {tf})",
                    e.fnirs.dim()
                )));
            }
            if e.eeg.iter().chain(e.fnirs.iter()).any(|v| !v.is_finite()) {
                return Err(SignalIoError::Invalid(format!("epoch {i}: non-finite sample")));
            }
            if !known.contains(&e.subject_id) {
                return Err(SignalIoError::Invalid(format!(
                    "epoch {i}: subject {} missing from the subject table",
                    e.subject_id
                )));
            }
        }
        Ok(())
    }

    /// Rounds every sample to the nearest 32-bit float so the dataset
    /// survives a write/read cycle unchanged.
    pub fn quantize_f32(&mut self) {
        for e in &mut self.epochs {
            e.eeg.mapv_inplace(|v| v as f32 as f64);
            e.fnirs.mapv_inplace(|v| v as f32 as f64);
        }
    }

    /// Same metadata, selected epochs.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            epochs: indices.iter().map(|&i| self.epochs[i].clone()).collect(),
            fs_eeg: self.fs_eeg,
            fs_fnirs: self.fs_fnirs,
            epoch_seconds: self.epoch_seconds,
            eeg_channel_names: self.eeg_channel_names.clone(),
            roi_names: self.roi_names.clone(),
            provenance: self.provenance,
            seed: self.seed,
            subjects: self.subjects.clone(),
        }
    }
}
