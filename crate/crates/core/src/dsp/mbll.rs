use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use super::DspError;

/// Modified Beer–Lambert parameters.
///
/// `extinction[w][s]` is the coefficient of species `s` (0 = HbO, 1 = HbR)
/// at wavelength `w` (0 = 760 nm, 1 = 850 nm), in 1/(mM·cm), for base-10
/// optical density. Defaults are the commonly tabulated molar values
/// divided by 1000; they are configuration, not constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MbllParams {
    pub extinction: [[f64; 2]; 2],
    pub dpf: [f64; 2],
    pub distance_cm: f64,
}

impl Default for MbllParams {
    fn default() -> Self {
        Self {
            extinction: [[0.586, 1.548_52], [1.058, 0.691_32]],
            dpf: [6.0, 6.0],
            distance_cm: 3.0,
        }
    }
}

impl MbllParams {
    fn validate(&self) -> Result<[[f64; 2]; 2], DspError> {
        if !(self.distance_cm > 0.0) {
            return Err(DspError::Parameter(format!(
                "source-detector distance must be positive, got {}",
                self.distance_cm
            )));
        }
        if self.dpf.iter().any(|d| !(*d > 0.0)) {
            return Err(DspError::Parameter(format!(
                "pathlength factors must be positive, got {:?}",
                self.dpf
            )));
        }
        let [[a, b], [c, d]] = self.extinction;
        let det = a * d - b * c;
        let scale = a.abs().max(b.abs()).max(c.abs()).max(d.abs());
        if !det.is_finite() || scale == 0.0 || det.abs() <= 1e-12 * scale * scale {
            return Err(DspError::Parameter("extinction matrix is singular".to_string()));
        }
        Ok([[d / det, -b / det], [-c / det, a / det]])
    }
}

/// Solves the 2×2 system for every `(channel, time)` of a `[C × T × 2]`
/// optical-density change, returning `[C × T × 2]` of (ΔHbO, ΔHbR).
pub fn mbll_from_delta_od(delta_od: &Array3<f64>, p: &MbllParams) -> Result<Array3<f64>, DspError> {
    if delta_od.shape()[2] != 2 {
        return Err(DspError::Parameter(format!(
            "expected two wavelengths, got {}",
            delta_od.shape()[2]
        )));
    }
    let inv = p.validate()?;
    let path = [p.distance_cm * p.dpf[0], p.distance_cm * p.dpf[1]];
    let mut out = Array3::zeros(delta_od.raw_dim());
    for ((c, t, _), _) in delta_od.indexed_iter().filter(|((_, _, w), _)| *w == 0) {
        let od0 = delta_od[[c, t, 0]] / path[0];
        let od1 = delta_od[[c, t, 1]] / path[1];
        out[[c, t, 0]] = inv[0][0] * od0 + inv[0][1] * od1;
        out[[c, t, 1]] = inv[1][0] * od0 + inv[1][1] * od1;
    }
    Ok(out)
}

fn delta_od(intensity: &Array3<f64>, baseline: &Array2<f64>) -> Result<Array3<f64>, DspError> {
    let (c, _, w) = intensity.dim();
    if baseline.dim() != (c, w) {
        return Err(DspError::Parameter(format!(
            "baseline shape {:?} does not match intensity channels/wavelengths ({c}, {w})",
            baseline.dim()
        )));
    }
    if intensity.iter().any(|v| !(*v > 0.0)) || baseline.iter().any(|v| !(*v > 0.0)) {
        return Err(DspError::Domain("intensities must be strictly positive".to_string()));
    }
    let mut od = intensity.clone();
    for ((ci, _, wi), v) in od.indexed_iter_mut() {
        *v = -(*v / baseline[[ci, wi]]).log10();
    }
    Ok(od)
}

/// Raw intensities `[C × T × 2]` and per-channel baselines `[C × 2]` to
/// (ΔHbO, ΔHbR) `[C × T × 2]`.
pub fn mbll_concentrations(
    intensity: &Array3<f64>,
    baseline: &Array2<f64>,
    p: &MbllParams,
) -> Result<Array3<f64>, DspError> {
    mbll_from_delta_od(&delta_od(intensity, baseline)?, p)
}

/// ΔHbO `[C × T]` from raw intensities.
pub fn mbll_convert(intensity: &Array3<f64>, baseline: &Array2<f64>, p: &MbllParams) -> Result<Array2<f64>, DspError> {
    Ok(mbll_concentrations(intensity, baseline, p)?
        .index_axis(Axis(2), 0)
        .to_owned())
}
