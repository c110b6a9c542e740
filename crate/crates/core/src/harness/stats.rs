use serde::{Deserialize, Serialize};

use super::HarnessError;

/// Largest effective sample size handled by the exact null distribution.
pub const EXACT_MAX_N: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    Exact,
    /// Normal approximation with continuity and tie corrections.
    Normal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Rank sum of the positive differences `pre - post`.
    pub w_plus: f64,
    pub w_minus: f64,
    /// Differences left after dropping zeros.
    pub n_effective: usize,
    pub p_value: f64,
    pub method: PValueMethod,
}

/// Mid-ranks of `|d|`, doubled so tied ranks stay integral.
fn doubled_ranks(abs: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..abs.len()).collect();
    order.sort_by(|&a, &b| abs[a].total_cmp(&abs[b]));
    let mut ranks = vec![0u64; abs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && abs[order[j + 1]] == abs[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their mean; doubled that is i + j + 2
        for &k in &order[i..=j] {
            ranks[k] = (i + j + 2) as u64;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided signed-rank test of paired samples.
///
/// Zero differences are dropped and tied magnitudes share mid-ranks. Up to
/// [`EXACT_MAX_N`] differences the p-value is exact over all `2^n` sign
/// assignments (counted by dynamic programming over rank sums); above it
/// the normal approximation is used.
pub fn wilcoxon_signed_rank(pre: &[f64], post: &[f64]) -> Result<WilcoxonResult, HarnessError> {
    if pre.len() != post.len() {
        return Err(HarnessError::Data(format!(
            "paired samples differ in length: {} vs {}",
            pre.len(),
            post.len()
        )));
    }
    if pre.iter().chain(post).any(|v| !v.is_finite()) {
        return Err(HarnessError::Data("paired samples contain non-finite values".into()));
    }
    let diffs: Vec<f64> = pre.iter().zip(post).map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n == 0 {
        return Err(HarnessError::Data(
            "all paired differences are zero; the test is undefined".into(),
        ));
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = doubled_ranks(&abs);
    let plus2: u64 = ranks
        .iter()
        .zip(&diffs)
        .filter(|(_, d)| **d > 0.0)
        .map(|(r, _)| r)
        .sum();
    let total2: u64 = ranks.iter().sum();
    let w_plus = plus2 as f64 / 2.0;
    let w_minus = (total2 - plus2) as f64 / 2.0;

    let (p_value, method) = if n <= EXACT_MAX_N {
        (exact_p(&ranks, plus2), PValueMethod::Exact)
    } else {
        (normal_p(&abs, n, w_plus), PValueMethod::Normal)
    };
    Ok(WilcoxonResult {
        w_plus,
        w_minus,
        n_effective: n,
        p_value,
        method,
    })
}

fn exact_p(ranks: &[u64], observed: u64) -> f64 {
    let total: u64 = ranks.iter().sum();
    // counts[s] = number of sign assignments whose positive doubled-rank sum is s
    let mut counts = vec![0f64; total as usize + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &r in ranks {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let all = 2f64.powi(ranks.len() as i32);
    let obs = observed as usize;
    let lower: f64 = counts[..=obs].iter().sum();
    let upper: f64 = counts[obs..].iter().sum();
    (2.0 * lower.min(upper) / all).min(1.0)
}

fn normal_p(abs: &[f64], n: usize, w_plus: f64) -> f64 {
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut sorted = abs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&v| v == sorted[i]).count();
        let t = j as f64;
        tie_term += t * t * t - t;
        i += j;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    libm::erfc(z / std::f64::consts::SQRT_2).min(1.0)
}

/// Brute-force two-sided p over every sign pattern, with ranks counted
/// directly; the reference the dynamic programme is checked against.
#[cfg(test)]
pub(crate) fn enumerate_p(diffs: &[f64]) -> f64 {
    let d: Vec<f64> = diffs.iter().copied().filter(|v| *v != 0.0).collect();
    let rank = |i: usize| {
        let below = d.iter().filter(|x| x.abs() < d[i].abs()).count() as f64;
        let equal = d.iter().filter(|x| x.abs() == d[i].abs()).count() as f64;
        below + (equal + 1.0) / 2.0
    };
    let ranks: Vec<f64> = (0..d.len()).map(rank).collect();
    let observed: f64 = (0..d.len()).filter(|&i| d[i] > 0.0).map(|i| ranks[i]).sum();
    let n = d.len();
    let (mut lo, mut hi) = (0u64, 0u64);
    for mask in 0u64..(1 << n) {
        let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if s <= observed {
            lo += 1;
        }
        if s >= observed {
            hi += 1;
        }
    }
    (2.0 * lo.min(hi) as f64 / (1u64 << n) as f64).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn five_positive_differences() {
        let r = wilcoxon_signed_rank(&[5.0, 6.0, 7.0, 8.0, 9.0], &[4.0, 4.0, 4.0, 4.0, 4.0]).unwrap();
        assert_eq!(r.w_plus, 15.0);
        assert_eq!(r.p_value, 0.0625);
        assert_eq!(r.method, PValueMethod::Exact);
    }

    #[test]
    fn swapping_samples_keeps_p() {
        let pre = [3.1, 2.0, 5.5, 4.0, 1.0, 7.2];
        let post = [2.0, 2.5, 3.0, 4.0, 0.1, 5.0];
        let a = wilcoxon_signed_rank(&pre, &post).unwrap();
        let b = wilcoxon_signed_rank(&post, &pre).unwrap();
        assert_eq!(a.p_value, b.p_value);
        assert_eq!(a.w_plus, b.w_minus);
        assert_eq!(a.n_effective, 5);
    }

    #[test]
    fn exact_path_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for case in 0..100 {
            let n = 1 + case % 10;
            let diffs: Vec<f64> = (0..n).map(|_| rng.gen_range(-4i32..=4) as f64).collect();
            if diffs.iter().all(|d| *d == 0.0) {
                continue;
            }
            let zeros = vec![0.0; n];
            let r = wilcoxon_signed_rank(&diffs, &zeros).unwrap();
            assert!((r.p_value - enumerate_p(&diffs)).abs() < 1e-12, "{diffs:?}");
        }
    }

    #[test]
    fn ties_share_mid_ranks() {
        let r = wilcoxon_signed_rank(&[1.0, -1.0, 2.0], &[0.0; 3]).unwrap();
        // |d| = 1, 1, 2 → ranks 1.5, 1.5, 3
        assert_eq!(r.w_plus, 4.5);
        assert_eq!(r.w_minus, 1.5);
    }

    #[test]
    fn large_samples_use_normal_approximation() {
        let pre: Vec<f64> = (1..=30).map(|i| i as f64).collect();
        let post = vec![0.0; 30];
        let r = wilcoxon_signed_rank(&pre, &post).unwrap();
        assert_eq!(r.method, PValueMethod::Normal);
        // z = (465 - 232.5 - 0.5) / sqrt(2363.75)
        let z: f64 = 232.0 / 2363.75f64.sqrt();
        assert!((r.p_value - libm::erfc(z / 2f64.sqrt())).abs() < 1e-15);
        assert!(r.p_value < 1e-5);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(
            wilcoxon_signed_rank(&[1.0, 2.0], &[1.0, 2.0]),
            Err(HarnessError::Data(_))
        ));
        assert!(matches!(
            wilcoxon_signed_rank(&[1.0], &[1.0, 2.0]),
            Err(HarnessError::Data(_))
        ));
    }
}
