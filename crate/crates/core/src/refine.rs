//! Alternating joint reconstruction: per-image ESL rotation updates and the
//! regularised least-squares map update.
//!
//! Norms are the L² norms of the unit image square and unit cube, i.e. mean
//! squares over pixels and voxels, so losses and regularisation weights do not
//! depend on the grid size.
//!
//! The map update minimises
//! `Σ_i (1/2σ)‖W(r_i.v) − g_i‖² + (1/2τ₁)‖v‖² + (1/2τ₂)‖K*v‖²`, `K̂(ξ) = |ξ|`,
//! by preconditioned conjugate gradients on the normal equations, started at
//! and preconditioned by the Fourier-diagonal closed form in which each
//! image contributes its CTF² weights on the rotated central slice.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::cryoem::fft::{signed_freq, Plans};
use crate::cryoem::{ForwardModel, ImageStack, Volume};
use crate::error::{EslError, RefineError};
use crate::esl::{argmin_uniform, barycentre, esl_minimise, estimate_gamma, lifted_weights, EslConfig, LiftedWeights};
use crate::manifold::{Manifold, Rotation, So3};
use crate::metrics::{align_rotations, mean_std, w2_to_dirac};

/// Images per block in ordered reductions.
const REDUCE_BLOCK: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct RefinementConfig {
    pub eta: f64,
    pub j0: f64,
    pub outer_iters: usize,
    pub bary_iters: usize,
    /// Noise level; estimated from the images when `None`.
    pub sigma: Option<f64>,
    /// Regularisation weights; `‖v⁰‖²` when `None`.
    pub tau1: Option<f64>,
    pub tau2: Option<f64>,
    pub sampling_level: usize,
    /// Fixed γ instead of the per-image estimate.
    pub gamma: Option<f64>,
    pub solver: SolverOptions,
    /// Rotations projected at once when evaluating losses.
    pub chunk: usize,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        RefinementConfig {
            eta: 0.66,
            j0: 15.0,
            outer_iters: 10,
            bary_iters: 20,
            sigma: None,
            tau1: None,
            tau2: None,
            sampling_level: 1,
            gamma: None,
            solver: SolverOptions::default(),
            chunk: 512,
        }
    }
}

impl RefinementConfig {
    pub fn validate(&self) -> Result<(), RefineError> {
        if !(self.eta > 0.25 && self.eta < 2.0 / 3.0) {
            return Err(RefineError::InvalidConfig(format!("eta = {} outside (1/4, 2/3)", self.eta)));
        }
        if !(self.j0 >= 1.0) {
            return Err(RefineError::InvalidConfig(format!("j0 = {} below 1", self.j0)));
        }
        for (name, v) in [("sigma", self.sigma), ("tau1", self.tau1), ("tau2", self.tau2), ("gamma", self.gamma)] {
            if let Some(x) = v {
                if !(x > 0.0) || !x.is_finite() {
                    return Err(RefineError::InvalidConfig(format!("{name} must be positive, got {x}")));
                }
            }
        }
        if self.chunk == 0 {
            return Err(RefineError::InvalidConfig("chunk must be positive".into()));
        }
        Ok(())
    }

    pub fn esl(&self) -> EslConfig {
        EslConfig { eta: self.eta, j0: self.j0, gamma: self.gamma, bary_max_iters: self.bary_iters, bary_tol: 0.0 }
    }
}

/// Stopping rule of the map solver.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    /// Relative residual `‖b − Hv‖ / ‖b‖`.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-9, max_iters: 300 }
    }
}

/// `σ` = mean per-image pixel variance, `τ₁ = τ₂ = ‖v⁰‖²` (mean square).
pub fn default_parameters(images: &ImageStack, v0: &Volume) -> Result<(f64, f64, f64), RefineError> {
    if images.is_empty() {
        return Err(RefineError::InvalidConfig("empty image stack".into()));
    }
    let px = (images.n() * images.n()) as f64;
    let sigma = images
        .images()
        .map(|g| {
            let m = g.iter().sum::<f64>() / px;
            g.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / px
        })
        .sum::<f64>()
        / images.len() as f64;
    let tau = v0.norm_sq() / v0.data().len() as f64;
    if tau == 0.0 {
        return Err(RefineError::ZeroVolume);
    }
    if !(sigma > 0.0) {
        return Err(RefineError::NonPositiveSigma);
    }
    Ok((sigma, tau, tau))
}

/// Row-major `N_img × |X|` losses.
#[derive(Clone, Debug, PartialEq)]
pub struct LossMatrix {
    n_images: usize,
    n_points: usize,
    data: Vec<f64>,
}

impl LossMatrix {
    /// Losses given directly, one row per image.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, RefineError> {
        let n_points = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_points) {
            return Err(RefineError::InvalidConfig("loss rows differ in length".into()));
        }
        Ok(LossMatrix { n_images: rows.len(), n_points, data: rows.concat() })
    }

    pub fn n_images(&self) -> usize {
        self.n_images
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_points..(i + 1) * self.n_points]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

fn check_images(model: &ForwardModel, images: &ImageStack) -> Result<(), RefineError> {
    if images.n() != model.n() {
        return Err(RefineError::InvalidConfig(format!("images are {}², model is {}²", images.n(), model.n())));
    }
    if (images.pixel_size() - model.voxel_size()).abs() > 1e-12 * model.voxel_size() {
        return Err(RefineError::InvalidConfig(format!(
            "pixel size {} differs from voxel size {}",
            images.pixel_size(),
            model.voxel_size()
        )));
    }
    Ok(())
}

/// `loss[i][x] = ‖W(x.v) − g_i‖² / 2σ`, all projections held at once;
/// refuses when `|X|·n²` exceeds `budget` values.
pub fn rotation_losses(
    model: &ForwardModel,
    v: &Volume,
    images: &ImageStack,
    points: &[Rotation],
    sigma: f64,
    budget: usize,
) -> Result<LossMatrix, RefineError> {
    let needed = points.len().saturating_mul(model.n() * model.n());
    if needed > budget {
        return Err(RefineError::MemoryBudget { needed, budget });
    }
    rotation_losses_chunked(model, v, images, points, sigma, points.len().max(1))
}

/// [`rotation_losses`] with at most `chunk` projections alive at a time.
pub fn rotation_losses_chunked(
    model: &ForwardModel,
    v: &Volume,
    images: &ImageStack,
    points: &[Rotation],
    sigma: f64,
    chunk: usize,
) -> Result<LossMatrix, RefineError> {
    check_images(model, images)?;
    if !(sigma > 0.0) {
        return Err(RefineError::NonPositiveSigma);
    }
    if chunk == 0 {
        return Err(RefineError::InvalidConfig("chunk must be positive".into()));
    }
    let (n_images, n_points) = (images.len(), points.len());
    let mut data = vec![0.0; n_images * n_points];
    let scale = 0.5 / (sigma * (model.n() * model.n()) as f64);
    for start in (0..n_points).step_by(chunk) {
        let end = (start + chunk).min(n_points);
        let projs = points[start..end].par_iter().map(|r| model.apply(v, r)).collect::<Result<Vec<_>, _>>()?;
        data.par_chunks_mut(n_points.max(1)).enumerate().for_each(|(i, row)| {
            let g = images.image(i);
            for (j, p) in projs.iter().enumerate() {
                row[start + j] = p.iter().zip(g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() * scale;
            }
        });
    }
    Ok(LossMatrix { n_images, n_points, data })
}

/// Output of one rotation update.
#[derive(Clone, Debug, PartialEq)]
pub struct RotationUpdate {
    pub rotations: Vec<Rotation>,
    /// Sampling point with the largest weight (the barycentre start).
    pub init_rotations: Vec<Rotation>,
    pub weights: Vec<LiftedWeights>,
    /// `None` where the degenerate-loss fallback applied.
    pub gammas: Vec<Option<f64>>,
}

impl RotationUpdate {
    pub fn mean_l0(&self) -> f64 {
        self.weights.iter().map(|w| w.l0() as f64).sum::<f64>() / self.weights.len().max(1) as f64
    }

    /// Mean over images with an estimated γ; NaN if there are none.
    pub fn mean_gamma(&self) -> f64 {
        let g: Vec<f64> = self.gammas.iter().flatten().copied().collect();
        if g.is_empty() {
            f64::NAN
        } else {
            g.iter().sum::<f64>() / g.len() as f64
        }
    }
}

/// Weights whose support reaches beyond π/2 of the argmax: the barycentre
/// is taken over the renormalised part of the support inside that ball,
/// while the full weights are reported.
fn local_fallback(
    f: &[f64],
    points: &[Rotation],
    config: &EslConfig,
) -> Result<(Rotation, Rotation, LiftedWeights, Option<f64>), RefineError> {
    let gamma = match config.gamma {
        Some(g) => g,
        None => estimate_gamma(f, config.j0, config.eta, 3)?,
    };
    let w = lifted_weights(f, gamma, config.eta)?;
    let init = points[w.argmax().expect("nonempty support")];
    let mut near: Vec<(usize, f64)> = w
        .entries()
        .iter()
        .copied()
        .filter(|&(i, _)| So3.distance(&init, &points[i]) < std::f64::consts::FRAC_PI_2)
        .collect();
    let mass: f64 = near.iter().map(|e| e.1).sum();
    for e in near.iter_mut() {
        e.1 /= mass;
    }
    let local = LiftedWeights::from_entries(near, points.len())?;
    let b = barycentre(&So3, points, &local, &init, config.bary_max_iters, config.bary_tol)?;
    Ok((b.point, init, w, Some(gamma)))
}

/// Per image: γ, simplex weights, argmax start and barycentre. Supports
/// wider than π/2 are restricted to the ball around the argmax; degenerate
/// losses fall back to the uniform measure on the minimisers.
pub fn update_rotations(losses: &LossMatrix, points: &[Rotation], config: &EslConfig) -> Result<RotationUpdate, RefineError> {
    config.validate(3)?;
    if losses.n_points() != points.len() {
        return Err(RefineError::InvalidConfig(format!(
            "{} loss columns for {} sampling points",
            losses.n_points(),
            points.len()
        )));
    }
    let results: Vec<(Rotation, Rotation, LiftedWeights, Option<f64>)> = (0..losses.n_images())
        .into_par_iter()
        .map(|i| {
            let f = losses.row(i);
            match esl_minimise(&So3, f, points, config) {
                Ok(r) => Ok((r.barycentre, r.init_point, r.weights, r.gamma_used)),
                Err(EslError::SupportTooSpread { .. }) => local_fallback(f, points, config),
                Err(_) => {
                    let w = argmin_uniform(f)?;
                    let x = points[w.argmax().expect("nonempty support")];
                    Ok((x, x, w, None))
                }
            }
        })
        .collect::<Result<_, RefineError>>()?;
    let mut out = RotationUpdate {
        rotations: Vec::with_capacity(results.len()),
        init_rotations: Vec::with_capacity(results.len()),
        weights: Vec::with_capacity(results.len()),
        gammas: Vec::with_capacity(results.len()),
    };
    for (r, x, w, g) in results {
        out.rotations.push(r);
        out.init_rotations.push(x);
        out.weights.push(w);
        out.gammas.push(g);
    }
    Ok(out)
}

/// `|ξ|²` on the `n³` DFT grid.
fn frequency_sq(n: usize, voxel_size: f64) -> Vec<f64> {
    let unit = 2.0 * std::f64::consts::PI / (n as f64 * voxel_size);
    let f: Vec<f64> = (0..n).map(|k| (signed_freq(k, n) * unit).powi(2)).collect();
    let mut out = vec![0.0; n * n * n];
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                out[(z * n + y) * n + x] = f[z] + f[y] + f[x];
            }
        }
    }
    out
}

/// Quadratic map-update problem for fixed rotations.
pub struct VolumeProblem<'a> {
    model: &'a ForwardModel,
    images: &'a ImageStack,
    rotations: &'a [Rotation],
    sigma: f64,
    tau1: f64,
    tau2: f64,
    plans: Plans,
    xi_sq: Vec<f64>,
}

impl<'a> VolumeProblem<'a> {
    pub fn new(
        model: &'a ForwardModel,
        images: &'a ImageStack,
        rotations: &'a [Rotation],
        sigma: f64,
        tau1: f64,
        tau2: f64,
    ) -> Result<Self, RefineError> {
        check_images(model, images)?;
        if rotations.len() != images.len() {
            return Err(RefineError::InvalidConfig(format!(
                "{} rotations for {} images",
                rotations.len(),
                images.len()
            )));
        }
        for (name, x) in [("sigma", sigma), ("tau1", tau1), ("tau2", tau2)] {
            if !(x > 0.0) {
                return Err(RefineError::InvalidConfig(format!("{name} must be positive, got {x}")));
            }
        }
        let n = model.n();
        Ok(VolumeProblem {
            model,
            images,
            rotations,
            sigma,
            tau1,
            tau2,
            plans: Plans::new(n),
            xi_sq: frequency_sq(n, model.voxel_size()),
        })
    }

    /// Data weight `n τ₁/σ` of the normal equations scaled by `n³ τ₁`.
    fn data_weight(&self) -> f64 {
        self.tau1 * self.model.n() as f64 / self.sigma
    }

    fn len(&self) -> usize {
        let n = self.model.n();
        n * n * n
    }

    /// Ordered block reduction of per-image volumes.
    fn reduce(&self, f: impl Fn(usize, &mut [f64]) -> Result<(), RefineError> + Sync) -> Result<Vec<f64>, RefineError> {
        let len = self.len();
        let n_img = self.rotations.len();
        let blocks: Vec<Vec<f64>> = (0..n_img.div_ceil(REDUCE_BLOCK))
            .into_par_iter()
            .map(|b| {
                let mut acc = vec![0.0; len];
                for i in b * REDUCE_BLOCK..((b + 1) * REDUCE_BLOCK).min(n_img) {
                    f(i, &mut acc)?;
                }
                Ok(acc)
            })
            .collect::<Result<_, RefineError>>()?;
        let mut out = vec![0.0; len];
        for b in blocks {
            for (o, x) in out.iter_mut().zip(&b) {
                *o += x;
            }
        }
        Ok(out)
    }

    /// `b = (nτ₁/σ) Σ (W∘r_i)ᵀ g_i`.
    pub fn rhs(&self) -> Result<Vec<f64>, RefineError> {
        let s = self.data_weight();
        let mut b = self.reduce(|i, acc| Ok(self.model.adjoint_into(self.images.image(i), &self.rotations[i], acc)?))?;
        for x in b.iter_mut() {
            *x *= s;
        }
        Ok(b)
    }

    /// `IFFT(|ξ|² FFT v)`.
    fn regulariser(&self, v: &[f64]) -> Vec<f64> {
        let mut c: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.plans.full(&mut c, 3, false);
        for (z, w) in c.iter_mut().zip(&self.xi_sq) {
            *z *= *w;
        }
        self.plans.full(&mut c, 3, true);
        c.into_iter().map(|z| z.re).collect()
    }

    /// `H v = (nτ₁/σ) Σ AᵢᵀAᵢ v + v + (τ₁/τ₂) Kᵀ K v`.
    pub fn apply(&self, v: &Volume) -> Result<Vec<f64>, RefineError> {
        let s = self.data_weight();
        let data = self.reduce(|i, acc| {
            let img = self.model.apply(v, &self.rotations[i])?;
            Ok(self.model.adjoint_into(&img, &self.rotations[i], acc)?)
        })?;
        let reg = self.regulariser(v.data());
        let t = self.tau1 / self.tau2;
        Ok(data.iter().zip(v.data()).zip(&reg).map(|((d, x), k)| s * d + x + t * k).collect())
    }

    /// Fourier diagonal `(nτ₁/σ) Σ_i c̃²|slice_i + (τ₁/τ₂)|ξ|² + 1`, with each
    /// image's CTF² spread trilinearly around its rotated central plane.
    pub fn preconditioner(&self) -> Vec<f64> {
        let n = self.model.n();
        let vs = self.model.voxel_size();
        let unit = 2.0 * std::f64::consts::PI / (n as f64 * vs);
        let ctf = *self.model.ctf();
        let mut w2d = vec![0.0; n * n];
        for ky in 0..n {
            for kx in 0..n {
                let s = (signed_freq(kx, n) * unit).hypot(signed_freq(ky, n) * unit);
                w2d[ky * n + kx] = vs * vs * n as f64 * ctf.radial(s).powi(2);
            }
        }
        let weights = self
            .reduce(|i, acc| {
                let m = self.rotations[i].matrix();
                for ky in 0..n {
                    let fy = signed_freq(ky, n);
                    for kx in 0..n {
                        let fx = signed_freq(kx, n);
                        let q = [
                            m[(0, 0)] * fx + m[(1, 0)] * fy,
                            m[(0, 1)] * fx + m[(1, 1)] * fy,
                            m[(0, 2)] * fx + m[(1, 2)] * fy,
                        ];
                        splat_periodic(acc, n, q, w2d[ky * n + kx]);
                    }
                }
                Ok(())
            })
            .expect("gridding cannot fail");
        let s = self.data_weight();
        let t = self.tau1 / self.tau2;
        weights.iter().zip(&self.xi_sq).map(|(w, x)| s * w + t * x + 1.0).collect()
    }

    fn precondition(&self, diag: &[f64], r: &[f64]) -> Vec<f64> {
        let mut c: Vec<Complex64> = r.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.plans.full(&mut c, 3, false);
        for (z, d) in c.iter_mut().zip(diag) {
            *z /= *d;
        }
        self.plans.full(&mut c, 3, true);
        c.into_iter().map(|z| z.re).collect()
    }

    /// Objective value at `v`.
    pub fn objective(&self, v: &Volume) -> Result<f64, RefineError> {
        let fit: Vec<f64> = (0..self.rotations.len())
            .into_par_iter()
            .map(|i| {
                let img = self.model.apply(v, &self.rotations[i])?;
                Ok(img.iter().zip(self.images.image(i)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            })
            .collect::<Result<_, RefineError>>()?;
        let reg: f64 = {
            let mut c: Vec<Complex64> = v.data().iter().map(|&x| Complex64::new(x, 0.0)).collect();
            self.plans.full(&mut c, 3, false);
            c.iter().zip(&self.xi_sq).map(|(z, w)| w * z.norm_sqr()).sum::<f64>() / (self.len() * self.len()) as f64
        };
        let n = self.model.n() as f64;
        let vol = v.norm_sq() / self.len() as f64;
        Ok(fit.iter().sum::<f64>() / (2.0 * self.sigma * n * n) + vol / (2.0 * self.tau1) + reg / (2.0 * self.tau2))
    }

    /// Gradient of the objective at `v`, scaled by `n³τ₁`: `H v − b`.
    pub fn gradient(&self, v: &Volume) -> Result<Vec<f64>, RefineError> {
        let hv = self.apply(v)?;
        let b = self.rhs()?;
        Ok(hv.iter().zip(&b).map(|(a, c)| a - c).collect())
    }

    /// Fourier closed form `v = IFFT(FFT(b) / D)`.
    pub fn closed_form(&self) -> Result<Volume, RefineError> {
        let d = self.preconditioner();
        let b = self.rhs()?;
        Ok(Volume::new(self.model.n(), self.model.voxel_size(), self.precondition(&d, &b))?)
    }

    /// Exact minimiser by preconditioned CG from the closed form.
    pub fn solve(&self, opts: &SolverOptions) -> Result<VolumeSolve, RefineError> {
        let n = self.model.n();
        let vs = self.model.voxel_size();
        let b = self.rhs()?;
        let b_norm = norm(&b);
        if b_norm == 0.0 {
            return Ok(VolumeSolve { volume: Volume::zeros(n, vs)?, iterations: 0, relative_residual: 0.0 });
        }
        let diag = self.preconditioner();
        let mut x = self.precondition(&diag, &b);
        let hx = self.apply(&Volume::new(n, vs, x.clone())?)?;
        let mut r: Vec<f64> = b.iter().zip(&hx).map(|(a, c)| a - c).collect();
        let mut z = self.precondition(&diag, &r);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut it = 0;
        while norm(&r) > opts.tol * b_norm && it < opts.max_iters {
            let hp = self.apply(&Volume::new(n, vs, p.clone())?)?;
            let php = dot(&p, &hp);
            if !(php > 0.0) {
                break;
            }
            let a = rz / php;
            for k in 0..x.len() {
                x[k] += a * p[k];
                r[k] -= a * hp[k];
            }
            z = self.precondition(&diag, &r);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for k in 0..p.len() {
                p[k] = z[k] + beta * p[k];
            }
            it += 1;
        }
        Ok(VolumeSolve { volume: Volume::new(n, vs, x)?, iterations: it, relative_residual: norm(&r) / b_norm })
    }
}

/// Adds `w` at fractional index `q` with periodic trilinear weights.
fn splat_periodic(acc: &mut [f64], n: usize, q: [f64; 3], w: f64) {
    let ni = n as isize;
    let mut base = [0isize; 3];
    let mut t = [0.0f64; 3];
    for k in 0..3 {
        let f = q[k].floor();
        base[k] = f as isize;
        t[k] = q[k] - f;
    }
    for dz in 0..2 {
        let wz = if dz == 0 { 1.0 - t[2] } else { t[2] };
        let iz = (base[2] + dz).rem_euclid(ni) as usize;
        for dy in 0..2 {
            let wy = if dy == 0 { 1.0 - t[1] } else { t[1] };
            let iy = (base[1] + dy).rem_euclid(ni) as usize;
            for dx in 0..2 {
                let wx = if dx == 0 { 1.0 - t[0] } else { t[0] };
                let ix = (base[0] + dx).rem_euclid(ni) as usize;
                acc[(iz * n + iy) * n + ix] += w * wz * wy * wx;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct VolumeSolve {
    pub volume: Volume,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Minimiser of the map objective for fixed rotations.
pub fn update_volume(
    model: &ForwardModel,
    images: &ImageStack,
    rotations: &[Rotation],
    sigma: f64,
    tau1: f64,
    tau2: f64,
    opts: &SolverOptions,
) -> Result<VolumeSolve, RefineError> {
    VolumeProblem::new(model, images, rotations, sigma, tau1, tau2)?.solve(opts)
}

/// One row of the per-iteration log.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationMetrics {
    pub iter: usize,
    /// Aligned rotation error in degrees; NaN without ground truth.
    pub mean_err_deg: f64,
    pub std_err_deg: f64,
    pub mean_l0: f64,
    /// `W₂(μ_i, δ_{r_i^GT})` in degrees; NaN without ground truth.
    pub mean_w2_deg: f64,
    pub mean_gamma: f64,
    /// Objective after the map update.
    pub objective: f64,
    pub solver_iters: usize,
}

#[derive(Clone, Debug)]
pub struct RefinementState {
    pub volume: Volume,
    pub rotations: Vec<Rotation>,
    pub weights: Vec<LiftedWeights>,
    pub iteration: usize,
    pub log: Vec<IterationMetrics>,
}

/// Aligned error and W₂ statistics of a rotation update, in degrees.
pub fn update_errors(update: &RotationUpdate, points: &[Rotation], gt: &[Rotation]) -> Result<(f64, f64, f64), RefineError> {
    let al = align_rotations(&update.rotations, gt)?;
    let deg = 180.0 / std::f64::consts::PI;
    let w2: Vec<f64> = update
        .weights
        .iter()
        .zip(gt)
        .map(|(w, g)| {
            let mapped: Vec<Rotation> = w.entries().iter().map(|&(i, _)| al.apply(&points[i])).collect();
            let local = LiftedWeights::from_entries(
                w.entries().iter().enumerate().map(|(k, &(_, a))| (k, a)).collect(),
                mapped.len(),
            )
            .expect("valid weights");
            w2_to_dirac(&So3, &mapped, &local, g)
        })
        .collect();
    Ok((al.mean * deg, al.std * deg, mean_std(&w2).0 * deg))
}

/// Algorithm loop: rotation update first, then the map update, for
/// `outer_iters` rounds. `on_iter` sees the state after every round and may
/// abort the run by returning an error.
pub fn joint_refine(
    model: &ForwardModel,
    images: &ImageStack,
    v0: &Volume,
    points: &[Rotation],
    config: &RefinementConfig,
    gt: Option<&[Rotation]>,
    mut on_iter: impl FnMut(&RefinementState) -> Result<(), RefineError>,
) -> Result<RefinementState, RefineError> {
    config.validate()?;
    if let Some(g) = gt {
        if g.len() != images.len() {
            return Err(RefineError::InvalidConfig(format!("{} ground-truth rotations for {} images", g.len(), images.len())));
        }
    }
    let (s0, t1, t2) = default_parameters(images, v0)?;
    let sigma = config.sigma.unwrap_or(s0);
    let tau1 = config.tau1.unwrap_or(t1);
    let tau2 = config.tau2.unwrap_or(t2);
    let esl = config.esl();
    let mut state = RefinementState {
        volume: v0.clone(),
        rotations: Vec::new(),
        weights: Vec::new(),
        iteration: 0,
        log: Vec::new(),
    };
    for k in 1..=config.outer_iters {
        let losses = rotation_losses_chunked(model, &state.volume, images, points, sigma, config.chunk)?;
        let upd = update_rotations(&losses, points, &esl)?;
        let (mean_err_deg, std_err_deg, mean_w2_deg) = match gt {
            Some(g) => update_errors(&upd, points, g)?,
            None => (f64::NAN, f64::NAN, f64::NAN),
        };
        let problem = VolumeProblem::new(model, images, &upd.rotations, sigma, tau1, tau2)?;
        let solved = problem.solve(&config.solver)?;
        let objective = problem.objective(&solved.volume)?;
        state.log.push(IterationMetrics {
            iter: k,
            mean_err_deg,
            std_err_deg,
            mean_l0: upd.mean_l0(),
            mean_w2_deg,
            mean_gamma: upd.mean_gamma(),
            objective,
            solver_iters: solved.iterations,
        });
        state.volume = solved.volume;
        state.rotations = upd.rotations;
        state.weights = upd.weights;
        state.iteration = k;
        on_iter(&state)?;
    }
    Ok(state)
}
