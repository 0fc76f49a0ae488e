//! Paired two-sided Wilcoxon signed-rank test.

use crate::error::{Error, Result};

/// Largest effective sample size handled by exact enumeration; beyond this
/// the normal approximation with tie and continuity corrections is used.
pub const EXACT_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WilcoxonMethod {
    Exact,
    NormalApproximation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WilcoxonResult {
    /// Sum of the ranks of positive differences.
    pub statistic: f64,
    pub p_two_sided: f64,
    /// Pairs remaining after zero differences are dropped.
    pub n_effective: usize,
    pub method: WilcoxonMethod,
    /// True when every difference was zero.
    pub degenerate: bool,
}

/// Ranks of |d| in ascending order, averaging over exact ties.
fn average_ranks(abs_d: &[f64]) -> Vec<f64> {
    let n = abs_d.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| abs_d[a].partial_cmp(&abs_d[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && abs_d[order[j + 1]] == abs_d[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share the average of ranks i+1..=j+1.
        let avg = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Exact two-sided p-value by dynamic programming over the distribution of
/// the positive-rank sum across all 2^n sign patterns. Tied (half-integer)
/// ranks are doubled so every achievable sum is an integer.
fn exact_p(ranks: &[f64], w: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut ways = vec![0u64; total + 1];
    ways[0] = 1;
    for &r in &doubled {
        for s in (r..=total).rev() {
            ways[s] += ways[s - r];
        }
    }
    let patterns = (1u64 << ranks.len()) as f64;
    let w2 = (2.0 * w).round() as usize;
    let le: u64 = ways[..=w2].iter().sum();
    let ge: u64 = ways[w2..].iter().sum();
    let p = 2.0 * (le.min(ge) as f64) / patterns;
    p.min(1.0)
}

/// Normal approximation with tie correction and a continuity correction of
/// one half toward the mean.
fn normal_p(ranks: &[f64], w: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0;
    // Tie groups reduce the variance by sum(t^3 - t)/48.
    let mut sorted = ranks.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        var -= (t * t * t - t) / 48.0;
        i = j + 1;
    }
    let diff = w - mean;
    if diff == 0.0 {
        return 1.0;
    }
    let z = (diff.abs() - 0.5) / var.sqrt();
    let p = statrs::function::erf::erfc(z / std::f64::consts::SQRT_2);
    p.clamp(0.0, 1.0)
}

/// Two-sided signed-rank test on paired samples. Zero differences are
/// dropped; |differences| are ranked with average ranks for ties; the
/// statistic is the sum of positive-difference ranks. Exact enumeration is
/// used up to [`EXACT_LIMIT`] effective pairs.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "paired samples of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::InvalidInput("need at least one pair".into()));
    }
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.is_empty() {
        return Ok(WilcoxonResult {
            statistic: 0.0,
            p_two_sided: 1.0,
            n_effective: 0,
            method: WilcoxonMethod::Exact,
            degenerate: true,
        });
    }
    let abs_d: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs_d);
    let w: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| *r)
        .sum();
    let n = diffs.len();
    let (p, method) = if n <= EXACT_LIMIT {
        (exact_p(&ranks, w), WilcoxonMethod::Exact)
    } else {
        (normal_p(&ranks, w), WilcoxonMethod::NormalApproximation)
    };
    Ok(WilcoxonResult {
        statistic: w,
        p_two_sided: p,
        n_effective: n,
        method,
        degenerate: false,
    })
}
