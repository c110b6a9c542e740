use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::dsp::{bandpass_filter, downsample, zscore_epoch, FilterSpec};
use crate::signalio::Dataset;

/// Per-epoch cleaning applied by `preprocess`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub eeg_filter: Option<FilterSpec>,
    /// Target EEG rate after filtering.
    pub eeg_downsample_hz: Option<f64>,
    pub fnirs_filter: Option<FilterSpec>,
    /// Per-channel z-score of every epoch, both modalities.
    pub zscore: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            eeg_filter: Some(FilterSpec::eeg_default()),
            eeg_downsample_hz: None,
            fnirs_filter: Some(FilterSpec::fnirs_default()),
            zscore: true,
        }
    }
}

impl PreprocessConfig {
    /// Band edges checked against the dataset's rates.
    pub fn validate(&self, fs_eeg: f64, fs_fnirs: f64) -> Result<(), HarnessError> {
        let wrap = |field: &str, e: crate::dsp::DspError| HarnessError::Config(format!("preprocess.{field}: {e}"));
        if let Some(f) = &self.eeg_filter {
            f.validate(fs_eeg).map_err(|e| wrap("eeg_filter", e))?;
        }
        if let Some(f) = &self.fnirs_filter {
            f.validate(fs_fnirs).map_err(|e| wrap("fnirs_filter", e))?;
        }
        if let Some(hz) = self.eeg_downsample_hz {
            let ratio = fs_eeg / hz;
            if !(hz > 0.0 && hz <= fs_eeg) || (ratio - ratio.round()).abs() > 1e-9 {
                return Err(HarnessError::Config(format!(
                    "preprocess.eeg_downsample_hz: {hz} Hz must divide {fs_eeg} Hz"
                )));
            }
            if let Some(f) = &self.eeg_filter {
                if f.high_hz >= 0.4 * hz {
                    log::warn!(
                        "EEG band edge {} Hz sits above the decimation anti-alias cutoff",
                        f.high_hz
                    );
                }
            }
        }
        Ok(())
    }
}

/// Filters, decimates and standardises every epoch of `ds`.
pub fn preprocess_dataset(ds: &Dataset, cfg: &PreprocessConfig) -> Result<Dataset, HarnessError> {
    cfg.validate(ds.fs_eeg, ds.fs_fnirs)?;
    let mut out = ds.clone();
    for e in &mut out.epochs {
        if let Some(f) = &cfg.eeg_filter {
            e.eeg = bandpass_filter(&e.eeg, f, ds.fs_eeg)?;
        }
        if let Some(hz) = cfg.eeg_downsample_hz {
            e.eeg = downsample(&e.eeg, ds.fs_eeg, hz)?;
        }
        if let Some(f) = &cfg.fnirs_filter {
            e.fnirs = bandpass_filter(&e.fnirs, f, ds.fs_fnirs)?;
        }
        if cfg.zscore {
            e.eeg = zscore_epoch(&e.eeg);
            e.fnirs = zscore_epoch(&e.fnirs);
        }
    }
    if let Some(hz) = cfg.eeg_downsample_hz {
        out.fs_eeg = hz;
    }
    out.validate()?;
    Ok(out)
}
