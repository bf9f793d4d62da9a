//! Local discrepancy of sampling sets inside small ellipsoids.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};

use super::lds::IntervalLds;
use super::SamplingSet;
use crate::error::SamplingError;
use crate::manifold::{unit_ball_volume, Ellipsoid, Manifold, Rotation, Tangent, VOL_SO3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscrepancyReport {
    /// `|#(X∩E)/|X| − vol(E)/vol(M)|`.
    pub count_gap: f64,
    /// `|Σ_{x∈X∩E} Q(log_p x, log_p x)/|X| − ∫_E Q(log_p·, log_p·)/vol(M)|`.
    pub quad_gap: f64,
    pub radius: f64,
    pub level: usize,
}

/// Reference volume and quadratic-form integral of an ellipsoid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EllipsoidIntegrals {
    pub volume: f64,
    pub quad: f64,
}

/// Leading-order volume `ω_d ρ^d`.
pub fn ellipsoid_volume_estimate<P>(e: &Ellipsoid<P>, dim: usize) -> f64 {
    unit_ball_volume(dim) * e.radius.powi(dim as i32)
}

/// Flat closed forms `ω_d ρ^d` and `det(Q)^{1/d} ω_d d/(d+2) ρ^{d+2}`;
/// exact on the interval.
pub fn flat_ellipsoid_integrals<P>(e: &Ellipsoid<P>) -> EllipsoidIntegrals {
    let d = e.form.dim();
    let w = unit_ball_volume(d);
    let rho = e.radius;
    EllipsoidIntegrals {
        volume: w * rho.powi(d as i32),
        quad: e.form.det().powf(1.0 / d as f64) * w * d as f64 / (d as f64 + 2.0) * rho.powi(d as i32 + 2),
    }
}

/// Monte-Carlo reference for an ellipsoid in SO(3) under the Haar measure
/// normalised to total volume `8π²`.
///
/// Samples are drawn from the geodesic ball that encloses the ellipsoid, in
/// exponential coordinates at the centre, where the rotation angle has
/// density proportional to `1 − cos θ`.
pub fn so3_ellipsoid_integrals(e: &Ellipsoid<Rotation>, samples: usize, seed: u64) -> EllipsoidIntegrals {
    let thr = e.threshold();
    let r_ball = (thr / e.form.lambda_min()).sqrt().min(std::f64::consts::PI);
    let mass = r_ball - r_ball.sin();
    let ball_vol = VOL_SO3 * mass / std::f64::consts::PI;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut inside, mut quad) = (0usize, 0.0f64);
    for _ in 0..samples {
        let u: f64 = rng.random::<f64>() * mass;
        let th = invert_angle_cdf(u, r_ball);
        let axis: [f64; 3] = UnitSphere.sample(&mut rng);
        let v = [th * axis[0], th * axis[1], th * axis[2]];
        let qv = e.form.eval(&v, &v);
        if qv < thr {
            inside += 1;
            quad += qv;
        }
    }
    let n = samples as f64;
    EllipsoidIntegrals { volume: ball_vol * inside as f64 / n, quad: ball_vol * quad / n }
}

/// θ in [0, R] with θ − sin θ = u.
fn invert_angle_cdf(u: f64, r: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, r);
    let mut th = (6.0 * u).cbrt().min(r);
    for _ in 0..60 {
        let g = th - th.sin() - u;
        if g > 0.0 {
            hi = th;
        } else {
            lo = th;
        }
        let dg = 1.0 - th.cos();
        let next = if dg > 1e-300 { th - g / dg } else { 0.5 * (lo + hi) };
        th = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
        if hi - lo < 1e-15 {
            break;
        }
    }
    th
}

/// Discrepancy of a materialised set at a single ellipsoid.
pub fn local_discrepancy<M: Manifold>(
    m: &M,
    set: &SamplingSet<M::Point>,
    e: &Ellipsoid<M::Point>,
    reference: EllipsoidIntegrals,
) -> Result<DiscrepancyReport, SamplingError> {
    if e.form.dim() != m.dim() {
        return Err(crate::error::ManifoldError::DimensionMismatch.into());
    }
    let thr = e.threshold();
    let reach = (thr / e.form.lambda_min()).sqrt();
    let (mut count, mut quad) = (0usize, 0.0f64);
    for x in set.points() {
        if m.distance(&e.center, x) >= reach {
            continue;
        }
        let v = m.log(&e.center, x)?;
        let q = e.form.eval(v.coords(), v.coords());
        if q < thr {
            count += 1;
            quad += q;
        }
    }
    let n = set.len() as f64;
    let vol = m.volume();
    Ok(DiscrepancyReport {
        count_gap: (count as f64 / n - reference.volume / vol).abs(),
        quad_gap: (quad / n - reference.quad / vol).abs(),
        radius: e.radius,
        level: set.level(),
    })
}

/// Worst case over all centres of the m-th interval grid, for the ball of
/// radius `r(M_m)` and `Q = a·xy`, scaled by `M^{(1+η)/3}` (count) and
/// `M^{1+η}` (quadratic form).
///
/// Works in grid units: the window is `(u − h/2, u + h/2)` with `h = h(M)`,
/// and the pattern of enclosed grid points is periodic in the left edge
/// `t = u − h/2`, so `t ∈ [0, min(1, M+1−h)]` covers every admissible centre.
pub fn interval_lds_discrepancy(
    lds: &mut IntervalLds,
    level: usize,
    a: f64,
) -> Result<(DiscrepancyReport, f64, f64), SamplingError> {
    let m = lds.size(level)?;
    let mf = m as f64;
    let (k_int, delta) = lds.split_diameter(m)?;
    let k = k_int as f64;
    let h = k + delta;
    let half = 0.5 * h;
    let t_max = (mf + 1.0 - h).min(1.0);
    if t_max < 0.0 {
        return Err(SamplingError::InvalidParameter(format!("ball wider than (0,1) at M = {m}")));
    }
    // Pieces of constant point count c: t ∈ [0, 1−δ] has c = k, beyond it
    // c = k+1. δ > 0 always, so the second piece exists whenever t_max = 1.
    let mut pieces = vec![(0.0, (1.0 - delta).min(t_max), k)];
    if t_max >= 1.0 || t_max > 1.0 - delta {
        pieces.push(((1.0 - delta).min(t_max), t_max, k + 1.0));
    }
    let mut count_gap = 0.0f64;
    let mut quad_gap = 0.0f64;
    let ref_quad = h * h * h / 12.0;
    for (t0, t1, c) in pieces {
        // c/M − h/(M+1) = (c + M(c − h)) / (M(M+1))
        let num = c + mf * ((c - k) - delta);
        count_gap = count_gap.max(num.abs() / (mf * (mf + 1.0)));
        // Σ_{j=1}^{c} (j − u)² = c u² − c(c+1) u + c(c+1)(2c+1)/6
        let sum_sq = |u: f64| c * u * u - c * (c + 1.0) * u + c * (c + 1.0) * (2.0 * c + 1.0) / 6.0;
        let mut cand = vec![t0, t1];
        let t_vertex = 0.5 * (c + 1.0) - half;
        if t_vertex > t0 && t_vertex < t1 {
            cand.push(t_vertex);
        }
        for t in cand {
            let s = sum_sq(t + half);
            let g = (s + s / mf - ref_quad).abs() / (mf + 1.0).powi(3);
            quad_gap = quad_gap.max(a * g);
        }
    }
    let ln_m = mf.ln();
    let e = (1.0 + lds.eta()) / 3.0;
    let count_scaled = count_gap * (e * ln_m).exp();
    let quad_scaled = quad_gap * ((1.0 + lds.eta()) * ln_m).exp();
    let report = DiscrepancyReport { count_gap, quad_gap, radius: lds.radius(m), level };
    Ok((report, count_scaled, quad_scaled))
}
