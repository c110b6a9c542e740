//! Preprocessing for both modalities: band-pass filtering, decimation,
//! optical-density to HbO conversion, per-epoch z-scoring, epoching,
//! overlapping windows and ROI averaging.

mod epochs;
mod filter;
mod mbll;
mod roi;

pub use epochs::{segment_epochs, sliding_window_starts, sliding_windows, zscore_epoch};
pub use filter::{
    bandpass_filter, cascade_magnitude, design_bandpass, design_lowpass, Biquad, FilterFamily, FilterSpec,
};
pub use mbll::{mbll_concentrations, mbll_convert, mbll_from_delta_od, MbllParams};
pub use roi::{map_rois, RoiMap, DEFAULT_ROI_NAMES};

use ndarray::Array2;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DspError {
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("signal too short: need at least {needed} samples, got {got}")]
    Length { needed: usize, got: usize },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("event {event} window [{start}, {end}) exceeds signal length {len}")]
    Range {
        event: usize,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("cannot impute ROI '{roi}': all of its channels are marked bad")]
    Imputation { roi: String },
}

/// Order of the internal anti-alias low-pass used by [`downsample`].
pub const ANTI_ALIAS_ORDER: usize = 8;

/// Integer-factor decimation after a zero-phase low-pass at `0.4 * fs_out`.
///
/// Keeps samples `0, r, 2r, ...` and returns `floor(T / r)` of them, where
/// `r = fs_in / fs_out`.
pub fn downsample(signal: &Array2<f64>, fs_in: f64, fs_out: f64) -> Result<Array2<f64>, DspError> {
    if !(fs_in > 0.0 && fs_out > 0.0) || fs_out > fs_in {
        return Err(DspError::Parameter(format!(
            "cannot downsample from {fs_in} Hz to {fs_out} Hz"
        )));
    }
    let ratio = fs_in / fs_out;
    let r = ratio.round();
    if (ratio - r).abs() > 1e-9 {
        return Err(DspError::Parameter(format!(
            "{fs_in} Hz is not an integer multiple of {fs_out} Hz"
        )));
    }
    let r = r as usize;
    if r == 1 {
        return Ok(signal.clone());
    }
    let pad = 3 * ANTI_ALIAS_ORDER;
    let t = signal.ncols();
    if t <= pad {
        return Err(DspError::Length {
            needed: pad + 1,
            got: t,
        });
    }
    let sos = design_lowpass(ANTI_ALIAS_ORDER, 0.4 * fs_out, fs_in)?;
    let out_len = t / r;
    Ok(filter::apply_rows(signal, |row| {
        let smooth = filter::zero_phase(&sos, row, pad);
        (0..out_len).map(|i| smooth[i * r]).collect()
    }))
}
