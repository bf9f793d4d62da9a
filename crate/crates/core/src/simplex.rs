//! Euclidean projection onto the unit probability simplex.
//!
//! Sort-based: with `e_(1) ≥ … ≥ e_(n)` the cut-off `J` is the largest index
//! with `e_(J) > (Σ_{j≤J} e_(j) − 1)/J`, and the projection is
//! `(e − (Σ_{j≤J} e_(j) − 1)/J)₊`.

use crate::error::SimplexError;

/// Values below this after the shift are set to exactly zero.
pub const ZERO_CLAMP: f64 = 1e-15;

#[derive(Clone, Debug, PartialEq)]
pub struct SimplexProjection {
    pub weights: Vec<f64>,
    /// Number of strictly positive weights.
    pub cutoff: usize,
    /// Indices of the positive weights, ascending.
    pub support: Vec<usize>,
}

/// Indices sorted by value descending, ties by index ascending.
pub fn descending_order(e: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..e.len()).collect();
    idx.sort_by(|&a, &b| e[b].total_cmp(&e[a]));
    idx
}

/// Cut-off integer for a vector already sorted in descending order.
pub fn cutoff_integer(e_sorted_desc: &[f64]) -> usize {
    cutoff_and_sum(e_sorted_desc.iter().copied()).0
}

fn cutoff_and_sum(sorted: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut sum = 0.0;
    let mut best = (0, 0.0);
    for (j, v) in sorted.enumerate() {
        sum += v;
        let k = (j + 1) as f64;
        if v - (sum - 1.0) / k > 0.0 {
            best = (j + 1, sum);
        }
    }
    best
}

pub fn project_simplex(e: &[f64]) -> Result<SimplexProjection, SimplexError> {
    if e.is_empty() {
        return Err(SimplexError::Empty);
    }
    if e.iter().any(|v| !v.is_finite()) {
        return Err(SimplexError::NonFinite);
    }
    let order = descending_order(e);
    let (j, sum) = cutoff_and_sum(order.iter().map(|&i| e[i]));
    let theta = (sum - 1.0) / j as f64;
    let mut weights = vec![0.0; e.len()];
    let mut support = Vec::with_capacity(j);
    for &i in &order[..j] {
        let w = e[i] - theta;
        if w >= ZERO_CLAMP {
            weights[i] = w;
            support.push(i);
        }
    }
    support.sort_unstable();
    Ok(SimplexProjection { cutoff: support.len(), weights, support })
}
