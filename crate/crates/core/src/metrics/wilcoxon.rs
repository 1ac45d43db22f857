use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest number of nonzero differences handled with the exact null
/// distribution; larger samples use the normal approximation.
pub const EXACT_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of ranks of the positive differences.
    pub w_plus: f64,
    /// Nonzero pairs that entered the test.
    pub n_used: usize,
    pub p_value: f64,
    pub exact: bool,
}

/// Average ranks (1-based) of `|d|`, returned doubled so tied ranks stay
/// integral.
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
        // mean of ranks i+1..=j+1, doubled
        let doubled = (i + j + 2) as u64;
        for &k in &order[i..=j] {
            ranks[k] = doubled;
        }
        i = j + 1;
    }
    ranks
}

/// `P(W+ ≥ observed)` under the sign-flip null, counting sign assignments
/// with a subset-sum table over doubled ranks.
pub fn wilcoxon_exact_upper_tail(doubled: &[u64], observed_doubled: u64) -> f64 {
    let total: u64 = doubled.iter().sum();
    let mut ways = vec![0f64; total as usize + 1];
    ways[0] = 1.0;
    let mut reach = 0usize;
    for &r in doubled {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if ways[s] != 0.0 {
                ways[s + r] += ways[s];
            }
        }
        reach += r;
    }
    let tail: f64 = ways[observed_doubled as usize..].iter().sum();
    tail / 2f64.powi(doubled.len() as i32)
}

/// One-sided paired Wilcoxon signed-rank test of `median(x − y) > 0`.
///
/// Zero differences are dropped, tied magnitudes share average ranks. Up to
/// [`EXACT_LIMIT`] pairs the p-value is exact; beyond that a normal
/// approximation with tie-corrected variance and continuity correction is used.
pub fn wilcoxon_one_sided(x: &[f64], y: &[f64]) -> Result<WilcoxonResult> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("paired samples differ in length: {} vs {}", x.len(), y.len())));
    }
    if x.is_empty() {
        return Err(Error::InvalidArgument("Wilcoxon test needs at least one pair".into()));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite difference".into()));
    }
    if d.is_empty() {
        return Err(Error::Degenerate("no nonzero pairs".into()));
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = doubled_ranks(&abs);
    let w2: u64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| *r).sum();
    let m = d.len();
    let w_plus = w2 as f64 / 2.0;

    if m <= EXACT_LIMIT {
        return Ok(WilcoxonResult {
            w_plus,
            n_used: m,
            p_value: wilcoxon_exact_upper_tail(&ranks, w2),
            exact: true,
        });
    }

    let mf = m as f64;
    let mean = mf * (mf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = ranks.clone();
    sorted.sort_unstable();
    for group in sorted.chunk_by(|a, b| a == b) {
        let t = group.len() as f64;
        tie_term += t * t * t - t;
    }
    let var = mf * (mf + 1.0) * (2.0 * mf + 1.0) / 24.0 - tie_term / 48.0;
    let z = (w_plus - mean - 0.5) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(WilcoxonResult {
        w_plus,
        n_used: m,
        p_value: 1.0 - normal.cdf(z),
        exact: false,
    })
}
