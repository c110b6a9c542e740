use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::train::embed;
use super::HarnessError;
use crate::model::ModelParams;

/// Distances of patient embeddings to the healthy-control centroid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub n_mbt: usize,
    pub n_mat: usize,
    pub n_hc: usize,
    /// Mean Euclidean distance of pre-treatment embeddings to the control centroid.
    pub d_mbt_hc: f64,
    pub d_mat_hc: f64,
    /// Mean distance of control embeddings to their own centroid.
    pub hc_dispersion: f64,
    /// `d_mat_hc / d_mbt_hc`.
    pub ratio: f64,
    /// The same ratio between group centroids, free of within-group spread.
    pub centroid_ratio: f64,
}

impl fmt::Display for ShiftReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "epochs            MBT {}  MAT {}  HC {}",
            self.n_mbt, self.n_mat, self.n_hc
        )?;
        writeln!(f, "d(MBT, HC)        {:.6}", self.d_mbt_hc)?;
        writeln!(f, "d(MAT, HC)        {:.6}", self.d_mat_hc)?;
        writeln!(f, "HC dispersion     {:.6}", self.hc_dispersion)?;
        writeln!(f, "shift ratio       {:.6}", self.ratio)?;
        write!(f, "centroid ratio    {:.6}", self.centroid_ratio)
    }
}

type Pair<'a> = (&'a Array2<f64>, &'a Array2<f64>);

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn centroid(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut c = vec![0.0; rows[0].len()];
    for r in rows {
        for (ci, v) in c.iter_mut().zip(r) {
            *ci += v;
        }
    }
    c.iter_mut().for_each(|v| *v /= rows.len() as f64);
    c
}

fn mean_distance(rows: &[Vec<f64>], to: &[f64]) -> f64 {
    rows.iter().map(|r| distance(r, to)).sum::<f64>() / rows.len() as f64
}

/// Embeds every (EEG, fNIRS) pair through the fused, gated path and
/// compares both patient groups against the control centroid.
pub fn normalization_shift(
    params: &ModelParams,
    mbt: &[Pair],
    mat: &[Pair],
    hc: &[Pair],
) -> Result<ShiftReport, HarnessError> {
    for (name, group) in [("MBT", mbt), ("MAT", mat), ("HC", hc)] {
        if group.is_empty() {
            return Err(HarnessError::Data(format!("{name} group has no epochs")));
        }
    }
    let embed_all = |group: &[Pair]| -> Result<Vec<Vec<f64>>, HarnessError> {
        group.iter().map(|(e, f)| embed(params, e, f)).collect()
    };
    let (zb, za, zh) = (embed_all(mbt)?, embed_all(mat)?, embed_all(hc)?);
    let hc_c = centroid(&zh);
    let d_mbt_hc = mean_distance(&zb, &hc_c);
    let d_mat_hc = mean_distance(&za, &hc_c);
    if d_mbt_hc == 0.0 {
        return Err(HarnessError::Data(
            "pre-treatment embeddings coincide with the control centroid; ratio undefined".into(),
        ));
    }
    Ok(ShiftReport {
        n_mbt: mbt.len(),
        n_mat: mat.len(),
        n_hc: hc.len(),
        d_mbt_hc,
        d_mat_hc,
        hc_dispersion: mean_distance(&zh, &hc_c),
        ratio: d_mat_hc / d_mbt_hc,
        centroid_ratio: distance(&centroid(&za), &hc_c) / distance(&centroid(&zb), &hc_c),
    })
}
