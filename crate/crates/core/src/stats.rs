//! Correlation, concordance and paired signed-rank statistics.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest sample size for which the Wilcoxon p-value is computed exactly.
pub const WILCOXON_EXACT_MAX_N: usize = 25;

/// Product-moment correlation of two equal-length samples.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::TooFew { what: "points", needed: 2, got: x.len() });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("x"));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("y"));
    }
    Ok((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

fn check_permutation(row: &[u32]) -> Result<()> {
    let n = row.len();
    let mut seen = vec![false; n];
    for &r in row {
        let i = r as usize;
        if i == 0 || i > n || seen[i - 1] {
            return Err(Error::NotPermutation(row.to_vec()));
        }
        seen[i - 1] = true;
    }
    Ok(())
}

/// Kendall's coefficient of concordance for `m` judges ranking `n` items
/// without ties: `W = 12 S / (m² (n³ − n))`.
///
/// Each row holds one judge's ranks, indexed by item.
pub fn kendalls_w(rankings: &[Vec<u32>]) -> Result<f64> {
    let m = rankings.len();
    if m < 2 {
        return Err(Error::TooFew { what: "judges", needed: 2, got: m });
    }
    let n = rankings[0].len();
    if n < 2 {
        return Err(Error::TooFew { what: "items", needed: 2, got: n });
    }
    for row in rankings {
        if row.len() != n {
            return Err(Error::LengthMismatch(n, row.len()));
        }
        check_permutation(row)?;
    }
    let sums: Vec<f64> = (0..n).map(|j| rankings.iter().map(|r| f64::from(r[j])).sum()).collect();
    let mean = sums.iter().sum::<f64>() / n as f64;
    let s: f64 = sums.iter().map(|r| (r - mean) * (r - mean)).sum();
    let (m, n) = (m as f64, n as f64);
    Ok(12.0 * s / (m * m * (n * n * n - n)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WilcoxonMethod {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(W+, W-)`.
    pub statistic: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Pairs left after discarding zero differences.
    pub n: usize,
    /// Two-sided.
    pub p_value: f64,
    pub method: WilcoxonMethod,
    /// Every difference was zero; `p_value` is 1.
    pub degenerate: bool,
}

/// Average ranks of `values` (1-based), doubled so ties stay integral.
pub(crate) fn doubled_ranks(values: &[f64]) -> Vec<u64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0u64; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        // positions i..=j hold ranks i+1..=j+1; their mean doubled is i+j+2
        for &k in &idx[i..=j] {
            ranks[k] = (i + j + 2) as u64;
        }
        i = j + 1;
    }
    ranks
}

/// Wilcoxon signed-rank test on paired samples `(a, b)`, testing `a − b`.
///
/// Zero differences are discarded; tied magnitudes get average ranks. Up
/// to [`WILCOXON_EXACT_MAX_N`] pairs the two-sided p-value is exact (null
/// distribution of the signed rank sum over all sign assignments, tied
/// ranks included); above it a normal approximation with continuity and
/// tie correction is used.
pub fn wilcoxon_signed_rank(pairs: &[(f64, f64)]) -> Result<WilcoxonResult> {
    if pairs.is_empty() {
        return Err(Error::TooFew { what: "pairs", needed: 1, got: 0 });
    }
    let diffs: Vec<f64> = pairs.iter().map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            statistic: 0.0,
            w_plus: 0.0,
            w_minus: 0.0,
            n: 0,
            p_value: 1.0,
            method: WilcoxonMethod::Exact,
            degenerate: true,
        });
    }
    let mags: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks2 = doubled_ranks(&mags);
    let plus2: u64 = ranks2.iter().zip(&diffs).filter(|(_, d)| **d > 0.0).map(|(r, _)| *r).sum();
    let total2: u64 = ranks2.iter().sum();
    let minus2 = total2 - plus2;
    let t2 = plus2.min(minus2);

    let (p, method) = if n <= WILCOXON_EXACT_MAX_N {
        // counts[s] = number of sign assignments whose doubled W+ equals s
        let mut counts = vec![0u64; total2 as usize + 1];
        counts[0] = 1;
        for &r in &ranks2 {
            let r = r as usize;
            for s in (r..counts.len()).rev() {
                counts[s] += counts[s - r];
            }
        }
        let tail: u64 = counts[..=t2 as usize].iter().sum();
        let p = 2.0 * tail as f64 / libm::pow(2.0, n as f64);
        (p.min(1.0), WilcoxonMethod::Exact)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let mut var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0;
        let mut sorted = ranks2.clone();
        sorted.sort_unstable();
        for group in sorted.chunk_by(|a, b| a == b) {
            let t = group.len() as f64;
            var -= (t * t * t - t) / 48.0;
        }
        let z = ((mean - t2 as f64 / 2.0).abs() - 0.5).max(0.0) / libm::sqrt(var);
        (libm::erfc(z / core::f64::consts::SQRT_2).min(1.0), WilcoxonMethod::NormalApprox)
    };

    Ok(WilcoxonResult {
        statistic: t2 as f64 / 2.0,
        w_plus: plus2 as f64 / 2.0,
        w_minus: minus2 as f64 / 2.0,
        n,
        p_value: p,
        method,
        degenerate: false,
    })
}
