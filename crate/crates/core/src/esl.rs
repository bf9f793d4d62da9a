//! Ellipsoidal support lifting.
//!
//! Given losses `f` on a sampling set `X` of size `N`, the lifted weights are
//! `α = Π_Δ(−N^η/γ · f)` and the estimate is the Riemannian barycentre of the
//! discrete measure `Σ α_x δ_x`, computed by gradient descent with step 1/2:
//! `x ← exp_x(Σ α_i log_x(x_i))`.

use std::f64::consts::FRAC_PI_2;

use crate::error::EslError;
use crate::manifold::{unit_ball_volume, BilinearForm, Manifold, Tangent};
use crate::simplex::project_simplex;

/// Sparse probability vector on a sampling set.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftedWeights {
    entries: Vec<(usize, f64)>,
    n_total: usize,
}

impl LiftedWeights {
    /// Builds from `(index, weight)` pairs; zero weights are dropped.
    pub fn from_entries(mut entries: Vec<(usize, f64)>, n_total: usize) -> Result<Self, EslError> {
        entries.retain(|&(_, w)| w != 0.0);
        entries.sort_by_key(|&(i, _)| i);
        if entries.iter().any(|&(i, w)| i >= n_total || !(w > 0.0) || !w.is_finite()) {
            return Err(EslError::InvalidConfig("weights must be positive and index into the set".into()));
        }
        if entries.windows(2).any(|p| p[0].0 == p[1].0) {
            return Err(EslError::InvalidConfig("duplicate weight index".into()));
        }
        Ok(LiftedWeights { entries, n_total })
    }

    pub fn from_dense(w: &[f64]) -> Result<Self, EslError> {
        let entries = w.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, v)| (i, *v)).collect();
        Self::from_entries(entries, w.len())
    }

    /// Uniform weights on the given indices.
    pub fn uniform_on(indices: &[usize], n_total: usize) -> Result<Self, EslError> {
        let w = 1.0 / indices.len() as f64;
        Self::from_entries(indices.iter().map(|&i| (i, w)).collect(), n_total)
    }

    /// `(index, weight)` pairs with ascending index.
    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    /// Support size ‖α‖₀.
    pub fn l0(&self) -> usize {
        self.entries.len()
    }

    pub fn sum(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    pub fn dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.n_total];
        for &(i, w) in &self.entries {
            v[i] = w;
        }
        v
    }

    /// Index of the largest weight; ties go to the lowest index.
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for &(i, w) in &self.entries {
            if best.is_none_or(|(_, bw)| w > bw) {
                best = Some((i, w));
            }
        }
        best.map(|b| b.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EslConfig {
    pub eta: f64,
    pub j0: f64,
    /// Explicit γ; when `None` it is estimated from the losses.
    pub gamma: Option<f64>,
    pub bary_max_iters: usize,
    pub bary_tol: f64,
}

impl Default for EslConfig {
    fn default() -> Self {
        EslConfig { eta: 0.66, j0: 15.0, gamma: None, bary_max_iters: 20, bary_tol: 1e-10 }
    }
}

impl EslConfig {
    /// Checks `1/(d+1) < η < 2/d` and `J₀ ≥ 3^{−d/(d+2)}`.
    pub fn validate(&self, dim: usize) -> Result<(), EslError> {
        let d = dim as f64;
        if !(self.eta > 1.0 / (d + 1.0) && self.eta < 2.0 / d) {
            return Err(EslError::InvalidConfig(format!(
                "eta = {} outside ({}, {})",
                self.eta,
                1.0 / (d + 1.0),
                2.0 / d
            )));
        }
        if !(self.j0 >= 3f64.powf(-d / (d + 2.0))) {
            return Err(EslError::InvalidConfig(format!("j0 = {} below 3^(-d/(d+2))", self.j0)));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0) {
                return Err(EslError::NonPositiveGamma(g));
            }
        }
        if !(self.bary_tol >= 0.0) {
            return Err(EslError::InvalidConfig("bary_tol must be nonnegative".into()));
        }
        Ok(())
    }
}

/// `α = Π_Δ(−N^η/γ · f)`.
pub fn lifted_weights(f: &[f64], gamma: f64, eta: f64) -> Result<LiftedWeights, EslError> {
    if f.is_empty() {
        return Err(EslError::EmptySampling);
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(EslError::NonFinite);
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(EslError::NonPositiveGamma(gamma));
    }
    let scale = -(f.len() as f64).powf(eta) / gamma;
    let e: Vec<f64> = f.iter().map(|v| scale * v).collect();
    if e.iter().any(|v| !v.is_finite()) {
        return Err(EslError::NonFinite);
    }
    let p = project_simplex(&e)?;
    let entries = p.support.iter().map(|&i| (i, p.weights[i])).collect();
    Ok(LiftedWeights { entries, n_total: f.len() })
}

/// `J = ⌊J₀ N^{(2−dη)/(d+2)}⌋`.
pub fn support_cutoff(n: usize, j0: f64, eta: f64, dim: usize) -> usize {
    let d = dim as f64;
    (j0 * (n as f64).powf((2.0 - d * eta) / (d + 2.0))).floor() as usize
}

/// γ̂ = ½ J₀ N^{(2+2η)/(d+2)} (f_(J+1) − (1/J) Σ_{j≤J} f_(j)) over ascending losses.
pub fn estimate_gamma(f: &[f64], j0: f64, eta: f64, dim: usize) -> Result<f64, EslError> {
    let n = f.len();
    if n == 0 {
        return Err(EslError::EmptySampling);
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(EslError::NonFinite);
    }
    let j = support_cutoff(n, j0, eta, dim);
    if j < 1 || n < j + 2 {
        return Err(EslError::SamplingTooSmall { n, j });
    }
    let mut s = f.to_vec();
    s.select_nth_unstable_by(j, f64::total_cmp);
    let next = s[j];
    let head = &mut s[..j];
    head.sort_unstable_by(f64::total_cmp);
    let mean = head.iter().sum::<f64>() / j as f64;
    let d = dim as f64;
    let gamma = 0.5 * j0 * (n as f64).powf((2.0 + 2.0 * eta) / (d + 2.0)) * (next - mean);
    if gamma > 0.0 {
        Ok(gamma)
    } else {
        Err(EslError::DegenerateLosses)
    }
}

/// γ = (1/(2(d+2))) J₀^{(d+2)/d} (det H · (vol/ω_d)²)^{1/d}.
pub fn gamma_exact(hess: &BilinearForm, j0: f64, vol: f64, dim: usize) -> f64 {
    let d = dim as f64;
    let r = vol / unit_ball_volume(dim);
    j0.powf((d + 2.0) / d) * (hess.det() * r * r).powf(1.0 / d) / (2.0 * (d + 2.0))
}

/// Bounds `3^{−d/(d+2)} J₀ N^{(2−dη)/(d+2)} ≤ ‖α‖₀ ≤ J₀ N^{(2−dη)/(d+2)}`.
pub fn sparsity_bounds(n: usize, j0: f64, eta: f64, dim: usize) -> (f64, f64) {
    let d = dim as f64;
    let upper = j0 * (n as f64).powf((2.0 - d * eta) / (d + 2.0));
    (3f64.powf(-d / (d + 2.0)) * upper, upper)
}

/// ρ = (J₀ vol/ω_d)^{1/d} N^{−(1+η)/(d+2)}.
pub fn ellipsoid_radius(n: usize, j0: f64, eta: f64, vol: f64, dim: usize) -> f64 {
    let d = dim as f64;
    (j0 * vol / unit_ball_volume(dim)).powf(1.0 / d) * (n as f64).powf(-(1.0 + eta) / (d + 2.0))
}

/// `2 sqrt(det(H)^{1/d}/λ_min(H)) ρ`.
pub fn error_bound(hess: &BilinearForm, n: usize, j0: f64, eta: f64, vol: f64, dim: usize) -> Result<f64, EslError> {
    if !hess.is_positive_definite() {
        return Err(crate::error::ManifoldError::NotPositiveDefinite.into());
    }
    if hess.dim() != dim {
        return Err(crate::error::ManifoldError::DimensionMismatch.into());
    }
    let ratio = hess.det().powf(1.0 / dim as f64) / hess.lambda_min();
    Ok(2.0 * ratio.sqrt() * ellipsoid_radius(n, j0, eta, vol, dim))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Barycentre<P> {
    pub point: P,
    pub iters: usize,
    pub converged: bool,
    /// Norm of the last weighted log-sum.
    pub residual: f64,
}

/// Weighted log-sum `Σ α_i log_x(x_i)` at `x`.
pub fn weighted_log_sum<M: Manifold>(
    m: &M,
    points: &[M::Point],
    weights: &LiftedWeights,
    x: &M::Point,
) -> Result<M::Tangent, EslError> {
    let mut g = M::Tangent::zero();
    for &(i, w) in weights.entries() {
        g.axpy(w, &m.log(x, &points[i])?);
    }
    Ok(g)
}

/// Riemannian barycentre by gradient descent with step 1/2.
pub fn barycentre<M: Manifold>(
    m: &M,
    points: &[M::Point],
    weights: &LiftedWeights,
    init: &M::Point,
    max_iters: usize,
    tol: f64,
) -> Result<Barycentre<M::Point>, EslError> {
    if weights.n_total() != points.len() {
        return Err(EslError::InvalidConfig(format!(
            "weights over {} points but {} points given",
            weights.n_total(),
            points.len()
        )));
    }
    if weights.l0() == 0 {
        return Err(EslError::EmptySampling);
    }
    for &(i, _) in weights.entries() {
        let d = m.distance(init, &points[i]);
        if d >= FRAC_PI_2 {
            return Err(EslError::SupportTooSpread { distance: d });
        }
    }
    let mut x = *init;
    let mut residual = f64::INFINITY;
    for k in 0..max_iters {
        let g = weighted_log_sum(m, points, weights, &x)?;
        residual = g.norm();
        if residual <= tol {
            return Ok(Barycentre { point: x, iters: k, converged: true, residual });
        }
        x = m.exp(&x, &g)?;
    }
    if max_iters > 0 {
        residual = weighted_log_sum(m, points, weights, &x)?.norm();
    }
    Ok(Barycentre { point: x, iters: max_iters, converged: residual <= tol, residual })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EslResult<P> {
    pub weights: LiftedWeights,
    pub barycentre: P,
    pub init_point: P,
    pub init_index: usize,
    /// γ used for the weights; `None` when the degenerate-loss fallback applied.
    pub gamma_used: Option<f64>,
    pub bary_iters_run: usize,
    pub bary_converged: bool,
}

/// Full ESL solve on a dense loss vector.
pub fn esl_minimise<M: Manifold>(
    m: &M,
    f: &[f64],
    points: &[M::Point],
    config: &EslConfig,
) -> Result<EslResult<M::Point>, EslError> {
    if points.is_empty() {
        return Err(EslError::EmptySampling);
    }
    if f.len() != points.len() {
        return Err(EslError::InvalidConfig(format!("{} losses for {} points", f.len(), points.len())));
    }
    let gamma = match config.gamma {
        Some(g) => Ok(g),
        None => estimate_gamma(f, config.j0, config.eta, m.dim()),
    };
    let (weights, gamma_used) = match gamma {
        Ok(g) => (lifted_weights(f, g, config.eta)?, Some(g)),
        Err(EslError::DegenerateLosses) => (argmin_uniform(f)?, None),
        Err(e) => return Err(e),
    };
    let init_index = weights.argmax().ok_or(EslError::EmptySampling)?;
    let init_point = points[init_index];
    let b = barycentre(m, points, &weights, &init_point, config.bary_max_iters, config.bary_tol)?;
    Ok(EslResult {
        weights,
        barycentre: b.point,
        init_point,
        init_index,
        gamma_used,
        bary_iters_run: b.iters,
        bary_converged: b.converged,
    })
}

/// Uniform weights on the set of minimal loss values.
pub fn argmin_uniform(f: &[f64]) -> Result<LiftedWeights, EslError> {
    if f.iter().any(|v| !v.is_finite()) {
        return Err(EslError::NonFinite);
    }
    let min = f.iter().copied().fold(f64::INFINITY, f64::min);
    let idx: Vec<usize> = (0..f.len()).filter(|&i| f[i] == min).collect();
    if idx.is_empty() {
        return Err(EslError::EmptySampling);
    }
    LiftedWeights::uniform_on(&idx, f.len())
}
