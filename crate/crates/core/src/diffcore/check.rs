use super::{DiffError, Graph, NodeId, Tensor};

/// Outcome of comparing reverse-mode gradients against central differences.
#[derive(Clone, Debug)]
pub struct FiniteDiffReport {
    pub max_rel_error: f64,
    /// `(input index, element index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

/// Central-difference check of `build` at `point`.
///
/// `build` receives a fresh graph plus one leaf per entry of `point` and must
/// return a scalar node. `subset` optionally limits the checked elements per
/// input (`None` checks all). Relative error uses the denominator
/// `max(|analytic|, |numeric|, 1e-8)`. Callers keep points away from the
/// kinks of piecewise-linear primitives; those are not differentiable and are
/// excluded by construction rather than detected here.
pub fn finite_diff_check<F>(
    build: F,
    point: &[Tensor],
    eps: f64,
    subset: Option<&[Vec<usize>]>,
) -> Result<FiniteDiffReport, DiffError>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId, DiffError>,
{
    let eval = |inputs: &[Tensor]| -> Result<f64, DiffError> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &ids)?;
        scalar_of(&g, out)
    };

    let mut g = Graph::new();
    let ids: Vec<NodeId> = point.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &ids)?;
    scalar_of(&g, out)?;
    g.backward(out)?;

    let mut report = FiniteDiffReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let mut probe: Vec<Tensor> = point.to_vec();
    for (input, id) in ids.iter().enumerate() {
        let analytic = g
            .grad(*id)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; point[input].numel()]);
        let all: Vec<usize>;
        let elements: &[usize] = match subset {
            Some(s) => &s[input],
            None => {
                all = (0..point[input].numel()).collect();
                &all
            }
        };
        for &e in elements {
            let original = point[input].data()[e];
            probe[input].data_mut()[e] = original + eps;
            let plus = eval(&probe)?;
            probe[input].data_mut()[e] = original - eps;
            let minus = eval(&probe)?;
            probe[input].data_mut()[e] = original;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                if rel >= report.max_rel_error {
                    report.worst = Some((input, e));
                }
            }
        }
    }
    Ok(report)
}

fn scalar_of(g: &Graph, id: NodeId) -> Result<f64, DiffError> {
    let v = g.value(id);
    if v.numel() != 1 {
        return Err(DiffError::Contract(format!(
            "finite-difference target must be scalar, got shape {:?}",
            v.shape()
        )));
    }
    Ok(v.data()[0])
}
