//! Evaluation: global gauge alignment, error statistics, ZYZ Euler angles,
//! Wasserstein-2 distance to a Dirac and the softmax baseline weights.

use nalgebra::Matrix3;

use crate::error::MetricsError;
use crate::esl::LiftedWeights;
use crate::manifold::{so3_distance, Manifold, Rotation};

/// Optimal global orthogonal gauge between estimated and true rotations.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentResult {
    /// Proper rotation applied on the left of the (possibly conjugated) estimates.
    pub transform: Matrix3<f64>,
    /// The unconstrained optimum was improper; estimates were conjugated by
    /// `diag(1, 1, −1)` before aligning.
    pub reflected: bool,
    pub aligned_errors: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl AlignmentResult {
    /// Maps an estimate into the ground-truth frame.
    pub fn apply(&self, r: &Rotation) -> Rotation {
        let mut m = r.matrix();
        if self.reflected {
            let j = Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, 1.0, -1.0));
            m = j * m * j;
        }
        Rotation::from_matrix(&(self.transform * m)).expect("proper rotation")
    }
}

/// `(mean, population std)`.
pub fn mean_std(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

fn procrustes(est: &[Matrix3<f64>], gt: &[Rotation]) -> Result<(Matrix3<f64>, f64), MetricsError> {
    let mut m = Matrix3::zeros();
    for (e, g) in est.iter().zip(gt) {
        m += g.matrix() * e.transpose();
    }
    let svd = m.svd(true, true);
    let s = svd.singular_values;
    if s.min() <= 1e-12 * s.max().max(1e-300) {
        return Err(MetricsError::DegenerateAlignment);
    }
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    Ok((u * vt, (u * vt).determinant()))
}

/// `O = argmin Σ ‖O R_est − R_gt‖²_F` over O(3), via the SVD of
/// `Σ R_gt R_estᵀ`; reflections are absorbed by conjugating the estimates.
pub fn align_rotations(est: &[Rotation], gt: &[Rotation]) -> Result<AlignmentResult, MetricsError> {
    if est.len() != gt.len() {
        return Err(MetricsError::LengthMismatch(est.len(), gt.len()));
    }
    if est.is_empty() {
        return Err(MetricsError::EmptyRun);
    }
    let mut mats: Vec<Matrix3<f64>> = est.iter().map(|r| r.matrix()).collect();
    let (mut o, det) = procrustes(&mats, gt)?;
    let reflected = det < 0.0;
    if reflected {
        let j = Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, 1.0, -1.0));
        for m in mats.iter_mut() {
            *m = j * *m * j;
        }
        let mut acc = Matrix3::zeros();
        for (e, g) in mats.iter().zip(gt) {
            acc += g.matrix() * e.transpose();
        }
        let svd = acc.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let d = (u * vt).determinant().signum();
        o = u * Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, 1.0, d)) * vt;
    }
    let oq = Rotation::from_matrix(&o)?;
    let aligned_errors = mats
        .iter()
        .zip(gt)
        .map(|(m, g)| Ok(so3_distance(&oq.compose(&Rotation::from_matrix(m)?), g)))
        .collect::<Result<Vec<f64>, MetricsError>>()?;
    let (mean, std) = mean_std(&aligned_errors);
    Ok(AlignmentResult { transform: oq.matrix(), reflected, aligned_errors, mean, std })
}

/// `W₂(μ, δ_p) = sqrt(Σ α_x d(x, p)²)`.
pub fn w2_to_dirac<M: Manifold>(m: &M, points: &[M::Point], mu: &LiftedWeights, p: &M::Point) -> f64 {
    mu.entries().iter().map(|&(i, a)| a * m.distance(&points[i], p).powi(2)).sum::<f64>().sqrt()
}

fn rz(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn ry(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn wrap(a: f64) -> f64 {
    if a <= -std::f64::consts::PI {
        a + 2.0 * std::f64::consts::PI
    } else {
        a
    }
}

/// `r = Rz(φ) Ry(θ) Rz(ψ)` with θ ∈ [0, π] and φ, ψ ∈ (−π, π]; ψ = 0 when
/// θ is within 1e-9 of 0 or π.
pub fn euler_zyz(r: &Rotation) -> (f64, f64, f64) {
    let m = r.matrix();
    let st = m[(0, 2)].hypot(m[(1, 2)]);
    let theta = st.atan2(m[(2, 2)]);
    if theta < 1e-9 {
        return (wrap(m[(1, 0)].atan2(m[(0, 0)])), theta, 0.0);
    }
    if std::f64::consts::PI - theta < 1e-9 {
        return (wrap((-m[(1, 0)]).atan2(-m[(0, 0)])), theta, 0.0);
    }
    let phi = m[(1, 2)].atan2(m[(0, 2)]);
    let psi = m[(2, 1)].atan2(-m[(2, 0)]);
    (wrap(phi), theta, wrap(psi))
}

/// `Rz(φ) Ry(θ) Rz(ψ)`.
pub fn from_euler_zyz(phi: f64, theta: f64, psi: f64) -> Result<Rotation, MetricsError> {
    Ok(Rotation::from_matrix(&(rz(phi) * ry(theta) * rz(psi)))?)
}

/// Softmax of `−loss / (2 T)` with max-subtraction.
pub fn relion_like_weights(losses: &[f64], temperature: f64) -> Vec<f64> {
    let lo = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut w: Vec<f64> = losses.iter().map(|l| (-(l - lo) / (2.0 * temperature)).exp()).collect();
    let s: f64 = w.iter().sum();
    for v in w.iter_mut() {
        *v /= s;
    }
    w
}

/// Per-run raw outputs; angles in radians.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub n_samples: usize,
    pub eta: f64,
    pub errors: Vec<f64>,
    pub l0: Vec<usize>,
    pub w2: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorRow {
    pub n_samples: usize,
    pub eta: f64,
    pub mean_deg: f64,
    pub std_deg: f64,
    pub mean_l0: f64,
    pub mean_w2_deg: f64,
}

/// Table of aggregated runs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ErrorTable {
    pub rows: Vec<ErrorRow>,
}

/// Aggregates runs into degrees, one row each.
pub fn summarize(runs: &[RunOutput]) -> Result<ErrorTable, MetricsError> {
    if runs.is_empty() || runs.iter().any(|r| r.errors.is_empty()) {
        return Err(MetricsError::EmptyRun);
    }
    let deg = 180.0 / std::f64::consts::PI;
    let rows = runs
        .iter()
        .map(|r| {
            let (m, s) = mean_std(&r.errors);
            let l0 = if r.l0.is_empty() { f64::NAN } else { r.l0.iter().sum::<usize>() as f64 / r.l0.len() as f64 };
            let w2 = if r.w2.is_empty() { f64::NAN } else { mean_std(&r.w2).0 * deg };
            ErrorRow { n_samples: r.n_samples, eta: r.eta, mean_deg: m * deg, std_deg: s * deg, mean_l0: l0, mean_w2_deg: w2 }
        })
        .collect();
    Ok(ErrorTable { rows })
}
