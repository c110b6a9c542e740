use ndarray::{s, Array2, Axis};

use super::DspError;

/// Per-channel z-score using the sample (n − 1) standard deviation.
/// Constant channels map to zeros.
pub fn zscore_epoch(epoch: &Array2<f64>) -> Array2<f64> {
    let mut out = epoch.clone();
    let n = epoch.ncols();
    for mut row in out.axis_iter_mut(Axis(0)) {
        if n < 2 {
            row.fill(0.0);
            continue;
        }
        let mean = row.sum() / n as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sd = var.sqrt();
        if sd == 0.0 || !sd.is_finite() {
            row.fill(0.0);
        } else {
            row.mapv_inplace(|v| (v - mean) / sd);
        }
    }
    out
}

/// Cuts one `[C × round(duration_s·fs)]` epoch per event start, in order.
pub fn segment_epochs(
    continuous: &Array2<f64>,
    event_starts: &[usize],
    duration_s: f64,
    fs: f64,
) -> Result<Vec<Array2<f64>>, DspError> {
    let len = (duration_s * fs).round() as usize;
    if len == 0 {
        return Err(DspError::Parameter(format!(
            "epoch of {duration_s} s at {fs} Hz has no samples"
        )));
    }
    let total = continuous.ncols();
    event_starts
        .iter()
        .enumerate()
        .map(|(event, &start)| {
            let end = start + len;
            if end > total {
                return Err(DspError::Range {
                    event,
                    start,
                    end,
                    len: total,
                });
            }
            Ok(continuous.slice(s![.., start..end]).to_owned())
        })
        .collect()
}

/// Window starts `0, stride, 2·stride, …` with `stride = max(1, floor(window·(1 − overlap)))`.
/// A trailing partial window is dropped.
pub fn sliding_window_starts(len: usize, window: usize, overlap_fraction: f64) -> Result<Vec<usize>, DspError> {
    if window == 0 || window > len {
        return Err(DspError::Parameter(format!(
            "window of {window} samples does not fit a signal of {len}"
        )));
    }
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(DspError::Parameter(format!(
            "overlap fraction {overlap_fraction} outside [0, 1)"
        )));
    }
    let stride = ((window as f64 * (1.0 - overlap_fraction)).floor() as usize).max(1);
    Ok((0..=(len - window) / stride).map(|i| i * stride).collect())
}

pub fn sliding_windows(
    signal: &Array2<f64>,
    window: usize,
    overlap_fraction: f64,
) -> Result<Vec<Array2<f64>>, DspError> {
    Ok(sliding_window_starts(signal.ncols(), window, overlap_fraction)?
        .into_iter()
        .map(|start| signal.slice(s![.., start..start + window]).to_owned())
        .collect())
}
