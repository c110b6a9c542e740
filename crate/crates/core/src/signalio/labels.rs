use std::cmp::Ordering;

use super::{CravingLevel, SignalIoError};

/// Mean craving ratings of the fifteen methamphetamine cue images.
pub const MOCD_METH_SCORES: [(&str, f64); 15] = [
    ("Meth13", 94.14),
    ("Meth11", 94.00),
    ("Meth23", 93.93),
    ("Meth43", 93.79),
    ("Meth77", 93.64),
    ("Meth98", 93.21),
    ("Meth62", 93.11),
    ("Meth48", 92.54),
    ("Meth101", 92.50),
    ("Meth68", 92.46),
    ("Meth46", 92.40),
    ("Meth94", 92.21),
    ("Meth73", 92.21),
    ("Meth69", 92.18),
    ("Meth01", 92.07),
];

/// Splits scored images into equal high/medium/low thirds by descending
/// score. Equal scores are ordered by image id so the split is stable.
/// Labels come back in input order.
pub fn craving_level_labels(scores: &[(String, f64)]) -> Result<Vec<CravingLevel>, SignalIoError> {
    if scores.is_empty() || !scores.len().is_multiple_of(3) {
        return Err(SignalIoError::Invalid(format!(
            "craving levels need a positive multiple of 3 images, got {}",
            scores.len()
        )));
    }
    if let Some((id, s)) = scores.iter().find(|(_, s)| !s.is_finite()) {
        return Err(SignalIoError::Invalid(format!("image {id} has non-finite score {s}")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .1
            .partial_cmp(&scores[a].1)
            .unwrap_or(Ordering::Equal)
            .then_with(|| scores[a].0.cmp(&scores[b].0))
    });
    let third = scores.len() / 3;
    let mut out = vec![CravingLevel::Low; scores.len()];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = match rank / third {
            0 => CravingLevel::High,
            1 => CravingLevel::Medium,
            _ => CravingLevel::Low,
        };
    }
    Ok(out)
}

pub(crate) fn mocd_levels() -> Vec<(&'static str, CravingLevel)> {
    let scores: Vec<(String, f64)> = MOCD_METH_SCORES.iter().map(|(id, s)| (id.to_string(), *s)).collect();
    let levels = craving_level_labels(&scores).expect("table has 15 finite entries");
    MOCD_METH_SCORES
        .iter()
        .zip(levels)
        .map(|((id, _), l)| (*id, l))
        .collect()
}
