// SPDX-License-Identifier: Apache-2.0

//! Paired two-sided Wilcoxon signed-rank test.
//!
//! Zero differences are discarded. Tied magnitudes share their average rank.
//! Up to [`EXACT_MAX_N`] non-zero pairs the null distribution of W+ is
//! counted exactly over all 2^m sign assignments; beyond that a normal
//! approximation with tie and continuity corrections is used.

use thiserror::Error;

pub const EXACT_MAX_N: usize = 20;

/// Differences (and gaps between magnitudes) at or below this are treated as
/// exactly zero (tied), so `0.3 - 0.2` and `0.2 - 0.1` rank together.
pub const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WilcoxonError {
    #[error("paired samples differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("paired samples are empty")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WilcoxonResult {
    /// Sum of ranks of positive differences (`a - b > 0`).
    pub w_plus: f64,
    /// Non-zero differences kept.
    pub n: usize,
    pub p_value: f64,
    pub exact: bool,
}

/// Average ranks (1-based) of `magnitudes`, with near-equal values tied.
/// Returns the ranks in input order and the sizes of tie groups.
pub fn average_ranks(magnitudes: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..magnitudes.len()).collect();
    order.sort_by(|&a, &b| magnitudes[a].total_cmp(&magnitudes[b]));
    let mut ranks = vec![0.0; magnitudes.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && magnitudes[order[end]] - magnitudes[order[end - 1]] <= TIE_EPS {
            end += 1;
        }
        // Positions start..end hold ranks start+1 ..= end.
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        if end - start > 1 {
            ties.push(end - start);
        }
        start = end;
    }
    (ranks, ties)
}

pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult, WilcoxonError> {
    if a.len() != b.len() {
        return Err(WilcoxonError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(WilcoxonError::Empty);
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| d.abs() > TIE_EPS).collect();
    let n = diffs.len();
    if n == 0 {
        return Ok(WilcoxonResult { w_plus: 0.0, n: 0, p_value: 1.0, exact: true });
    }
    let magnitudes: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = average_ranks(&magnitudes);
    let w_plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();

    if n <= EXACT_MAX_N {
        let p_value = exact_p(&ranks, w_plus);
        Ok(WilcoxonResult { w_plus, n, p_value, exact: true })
    } else {
        let p_value = normal_p(n, &ties, w_plus);
        Ok(WilcoxonResult { w_plus, n, p_value, exact: false })
    }
}

/// Exact two-sided p-value by counting sign assignments.
///
/// Average ranks are multiples of 1/2, so doubled ranks are integers and the
/// distribution of 2·W+ can be accumulated as subset-sum counts.
fn exact_p(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let w = (w_plus * 2.0).round() as usize;
    let all = (1u64 << ranks.len()) as f64;
    let lower: u64 = counts[..=w].iter().sum();
    let upper: u64 = counts[w..].iter().sum();
    (2.0 * lower.min(upper) as f64 / all).min(1.0)
}

fn normal_p(n: usize, ties: &[usize], w_plus: f64) -> f64 {
    let n = n as f64;
    let mean = n * (n + 1.0) / 4.0;
    let tie_term: f64 = ties.iter().map(|&t| (t as f64).powi(3) - t as f64).sum::<f64>() / 48.0;
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term;
    let dev = ((w_plus - mean).abs() - 0.5).max(0.0);
    let z = dev / var.sqrt();
    libm::erfc(z / std::f64::consts::SQRT_2).min(1.0)
}
