use std::collections::BTreeSet;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::DspError;

pub const DEFAULT_ROI_NAMES: [&str; 8] = [
    "DLPFC",
    "FEF",
    "Motor Cortex",
    "Left Broca",
    "Right Broca",
    "Left Temporal",
    "Right Temporal",
    "Visual Cortex",
];

/// Channel-to-region assignment for fNIRS optodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiMap {
    pub roi_names: Vec<String>,
    pub channel_to_roi: Vec<usize>,
    #[serde(default)]
    pub excluded_rois: BTreeSet<usize>,
    #[serde(default)]
    pub bad_channels: BTreeSet<usize>,
}

impl RoiMap {
    /// The eight default regions with Visual Cortex excluded and
    /// `channels_per_roi` consecutive channels per region.
    pub fn standard(channels_per_roi: usize) -> Self {
        let roi_names: Vec<String> = DEFAULT_ROI_NAMES.iter().map(|s| s.to_string()).collect();
        let channel_to_roi = (0..roi_names.len())
            .flat_map(|r| std::iter::repeat_n(r, channels_per_roi))
            .collect();
        Self {
            excluded_rois: BTreeSet::from([roi_names.len() - 1]),
            roi_names,
            channel_to_roi,
            bad_channels: BTreeSet::new(),
        }
    }

    /// Names of the rows [`map_rois`] emits, in order.
    pub fn retained_names(&self) -> Vec<String> {
        (0..self.roi_names.len())
            .filter(|r| !self.excluded_rois.contains(r))
            .map(|r| self.roi_names[r].clone())
            .collect()
    }
}

/// Averages channels into ROI rows, imputing bad channels from the good
/// channels of the same ROI and dropping excluded ROIs.
pub fn map_rois(fnirs: &Array2<f64>, map: &RoiMap) -> Result<Array2<f64>, DspError> {
    if map.channel_to_roi.len() != fnirs.nrows() {
        return Err(DspError::Parameter(format!(
            "ROI map covers {} channels, signal has {}",
            map.channel_to_roi.len(),
            fnirs.nrows()
        )));
    }
    if let Some(&bad) = map.channel_to_roi.iter().find(|&&r| r >= map.roi_names.len()) {
        return Err(DspError::Parameter(format!("unknown ROI index {bad}")));
    }
    let retained: Vec<usize> = (0..map.roi_names.len())
        .filter(|r| !map.excluded_rois.contains(r))
        .collect();
    let mut out = Array2::zeros((retained.len(), fnirs.ncols()));
    for (row, &roi) in retained.iter().enumerate() {
        let members: Vec<usize> = (0..fnirs.nrows()).filter(|&c| map.channel_to_roi[c] == roi).collect();
        if members.is_empty() {
            return Err(DspError::Parameter(format!(
                "ROI '{}' has no channels",
                map.roi_names[roi]
            )));
        }
        let good: Vec<usize> = members
            .iter()
            .copied()
            .filter(|c| !map.bad_channels.contains(c))
            .collect();
        if good.is_empty() {
            return Err(DspError::Imputation {
                roi: map.roi_names[roi].clone(),
            });
        }
        let good_mean = good
            .iter()
            .map(|&c| fnirs.index_axis(Axis(0), c).to_owned())
            .reduce(|a, b| a + b)
            .expect("non-empty")
            / good.len() as f64;
        // imputed channels take the good-channel mean, then all members are averaged
        let mut acc = good_mean.clone() * (members.len() - good.len()) as f64;
        for &c in &good {
            acc += &fnirs.index_axis(Axis(0), c);
        }
        out.row_mut(row).assign(&(acc / members.len() as f64));
    }
    Ok(out)
}
