//! Riemannian primitives for SO(3) and the open interval (0,1).
//!
//! Rotations are unit quaternions `(w, x, y, z)` in canonical sign. Tangent
//! vectors at a base point `p` are axis-angle coordinates in the
//! left-trivialisation: `exp_p(v) = p · Exp(v)`, `log_p(q) = Log(p⁻¹ q)`.
//! With this choice the geodesic distance equals the relative rotation angle.

use std::f64::consts::PI;
use std::fmt::Debug;

use nalgebra::{DMatrix, Matrix3, SymmetricEigen, Vector1, Vector3};

use crate::error::ManifoldError;

/// Angles below this use series expansions in `Exp`/`Log`.
pub const SMALL_ANGLE: f64 = 1e-6;
/// `log_p(q)` is refused when `π − d(p, q)` falls below this.
pub const ANTIPODAL_TOL: f64 = 1e-9;

/// Riemannian volume of SO(3) with the metric whose geodesic distance is the
/// rotation angle: the unit 3-sphere has volume 2π², lengths double when
/// passing to rotation angles (×8) and the double cover halves it.
pub const VOL_SO3: f64 = 8.0 * PI * PI;
/// Volume of the interval (0,1).
pub const VOL_INTERVAL: f64 = 1.0;
/// Volume of the unit ball in R¹.
pub const OMEGA_1: f64 = 2.0;
/// Volume of the unit ball in R².
pub const OMEGA_2: f64 = PI;
/// Volume of the unit ball in R³.
pub const OMEGA_3: f64 = 4.0 * PI / 3.0;

/// Volume ω_d of the Euclidean unit ball in R^d.
pub fn unit_ball_volume(d: usize) -> f64 {
    match d {
        0 => 1.0,
        1 => OMEGA_1,
        2 => OMEGA_2,
        3 => OMEGA_3,
        _ => 2.0 * PI / d as f64 * unit_ball_volume(d - 2),
    }
}

/// Tangent coordinates: a small fixed-size real vector.
pub trait Tangent: Copy + Debug + Send + Sync {
    fn zero() -> Self;
    fn axpy(&mut self, a: f64, x: &Self);
    fn scale(&self, a: f64) -> Self;
    fn norm(&self) -> f64;
    fn coords(&self) -> &[f64];
}

impl Tangent for Vector3<f64> {
    fn zero() -> Self {
        Vector3::zeros()
    }
    fn axpy(&mut self, a: f64, x: &Self) {
        *self += x * a;
    }
    fn scale(&self, a: f64) -> Self {
        self * a
    }
    fn norm(&self) -> f64 {
        nalgebra::Matrix::norm(self)
    }
    fn coords(&self) -> &[f64] {
        self.as_slice()
    }
}

impl Tangent for Vector1<f64> {
    fn zero() -> Self {
        Vector1::zeros()
    }
    fn axpy(&mut self, a: f64, x: &Self) {
        *self += x * a;
    }
    fn scale(&self, a: f64) -> Self {
        self * a
    }
    fn norm(&self) -> f64 {
        self[0].abs()
    }
    fn coords(&self) -> &[f64] {
        self.as_slice()
    }
}

/// The exp/log/distance contract consumed by the lifting scheme.
pub trait Manifold: Sync {
    type Point: Copy + Debug + PartialEq + Send + Sync;
    type Tangent: Tangent;

    fn dim(&self) -> usize;
    fn volume(&self) -> f64;
    fn exp(&self, base: &Self::Point, v: &Self::Tangent) -> Result<Self::Point, ManifoldError>;
    fn log(&self, base: &Self::Point, target: &Self::Point) -> Result<Self::Tangent, ManifoldError>;
    fn distance(&self, a: &Self::Point, b: &Self::Point) -> f64;
}

/// Element of SO(3) as a canonical-sign unit quaternion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation {
    q: [f64; 4],
}

pub(crate) fn canonical(mut q: [f64; 4]) -> [f64; 4] {
    let flip = if q[0] != 0.0 {
        q[0] < 0.0
    } else {
        q[1..].iter().find(|c| **c != 0.0).is_some_and(|c| *c < 0.0)
    };
    if flip {
        for c in q.iter_mut() {
            *c = -*c;
        }
    }
    // Avoid negative zeros so that equal rotations compare bitwise equal.
    for c in q.iter_mut() {
        if *c == 0.0 {
            *c = 0.0;
        }
    }
    q
}

fn qmul(a: &[f64; 4], b: &[f64; 4]) -> [f64; 4] {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

fn normalized(q: [f64; 4]) -> Result<[f64; 4], ManifoldError> {
    if q.iter().any(|c| !c.is_finite()) {
        return Err(ManifoldError::NonFinite);
    }
    let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
    if n < 1e-300 {
        return Err(ManifoldError::ZeroQuaternion);
    }
    Ok([q[0] / n, q[1] / n, q[2] / n, q[3] / n])
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation { q: [1.0, 0.0, 0.0, 0.0] }
    }

    /// Normalises and canonicalises an arbitrary nonzero quaternion.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Result<Self, ManifoldError> {
        Ok(Rotation { q: canonical(normalized([w, x, y, z])?) })
    }

    pub(crate) fn from_unit_unchecked(q: [f64; 4]) -> Self {
        Rotation { q: canonical(q) }
    }

    /// Quaternion `(w, x, y, z)` in canonical sign.
    pub fn quaternion(&self) -> [f64; 4] {
        self.q
    }

    /// Group exponential at the identity: rotation by `|v|` about `v/|v|`.
    pub fn from_axis_angle(v: &Vector3<f64>) -> Self {
        let th = v.norm();
        let q = if th < SMALL_ANGLE {
            let s = 0.5 * (1.0 - th * th / 24.0);
            [1.0 - th * th / 8.0, s * v[0], s * v[1], s * v[2]]
        } else {
            let s = (0.5 * th).sin() / th;
            [(0.5 * th).cos(), s * v[0], s * v[1], s * v[2]]
        };
        let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
        Rotation::from_unit_unchecked([q[0] / n, q[1] / n, q[2] / n, q[3] / n])
    }

    /// Group logarithm at the identity; norm of the result is the rotation angle.
    pub fn to_axis_angle(&self) -> Vector3<f64> {
        let [w, x, y, z] = self.q;
        let s = (x * x + y * y + z * z).sqrt();
        let k = if s < SMALL_ANGLE {
            2.0 / w * (1.0 - s * s / (3.0 * w * w))
        } else {
            2.0 * s.atan2(w) / s
        };
        Vector3::new(k * x, k * y, k * z)
    }

    /// Rotation angle in [0, π].
    pub fn angle(&self) -> f64 {
        let [w, x, y, z] = self.q;
        2.0 * (x * x + y * y + z * z).sqrt().atan2(w.abs())
    }

    pub fn inverse(&self) -> Self {
        let [w, x, y, z] = self.q;
        Rotation::from_unit_unchecked([w, -x, -y, -z])
    }

    /// Group product `self · other` (apply `other` first).
    pub fn compose(&self, other: &Rotation) -> Self {
        Rotation::from_unit_unchecked(qmul(&self.q, &other.q))
    }

    /// Active rotation matrix.
    pub fn matrix(&self) -> Matrix3<f64> {
        let [w, x, y, z] = self.q;
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Inverse of [`Rotation::matrix`] for a proper orthogonal matrix.
    pub fn from_matrix(m: &Matrix3<f64>) -> Result<Self, ManifoldError> {
        let tr = m.trace();
        let q = if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            [
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            ]
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            [
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            ]
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            [
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            ]
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            [
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            ]
        };
        Ok(Rotation { q: canonical(normalized(q)?) })
    }

    /// `|⟨q₁, q₂⟩|`, insensitive to the double cover.
    pub fn abs_dot(&self, other: &Rotation) -> f64 {
        self.q.iter().zip(other.q.iter()).map(|(a, b)| a * b).sum::<f64>().abs()
    }
}

/// Tangent vector at a rotation in axis-angle coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TangentVector {
    pub base: Rotation,
    pub v: Vector3<f64>,
}

/// `exp_p(v) = p · Exp(v)`; total on SO(3).
pub fn so3_exp(base: &Rotation, v: &TangentVector) -> Result<Rotation, ManifoldError> {
    if base.abs_dot(&v.base) < 1.0 - 1e-12 {
        return Err(ManifoldError::BaseMismatch);
    }
    Ok(base.compose(&Rotation::from_axis_angle(&v.v)))
}

/// `log_p(q) = Log(p⁻¹ q)`; undefined on the cut locus.
pub fn so3_log(base: &Rotation, target: &Rotation) -> Result<TangentVector, ManifoldError> {
    let rel = base.inverse().compose(target);
    if PI - rel.angle() < ANTIPODAL_TOL {
        return Err(ManifoldError::AntipodalPoint);
    }
    Ok(TangentVector { base: *base, v: rel.to_axis_angle() })
}

/// Geodesic distance: angle of the relative rotation, in [0, π].
pub fn so3_distance(a: &Rotation, b: &Rotation) -> f64 {
    a.inverse().compose(b).angle()
}

/// SO(3) with its bi-invariant metric.
#[derive(Clone, Copy, Debug, Default)]
pub struct So3;

impl Manifold for So3 {
    type Point = Rotation;
    type Tangent = Vector3<f64>;

    fn dim(&self) -> usize {
        3
    }
    fn volume(&self) -> f64 {
        VOL_SO3
    }
    fn exp(&self, base: &Rotation, v: &Vector3<f64>) -> Result<Rotation, ManifoldError> {
        if !v.iter().all(|c| c.is_finite()) {
            return Err(ManifoldError::NonFinite);
        }
        Ok(base.compose(&Rotation::from_axis_angle(v)))
    }
    fn log(&self, base: &Rotation, target: &Rotation) -> Result<Vector3<f64>, ManifoldError> {
        so3_log(base, target).map(|t| t.v)
    }
    fn distance(&self, a: &Rotation, b: &Rotation) -> f64 {
        so3_distance(a, b)
    }
}

/// Point of the open interval (0,1).
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct IntervalPoint(f64);

impl IntervalPoint {
    pub fn new(x: f64) -> Result<Self, ManifoldError> {
        if x > 0.0 && x < 1.0 {
            Ok(IntervalPoint(x))
        } else {
            Err(ManifoldError::OutOfDomain(x))
        }
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

pub fn interval_exp(base: IntervalPoint, v: f64) -> Result<IntervalPoint, ManifoldError> {
    IntervalPoint::new(base.0 + v)
}

pub fn interval_log(base: IntervalPoint, target: IntervalPoint) -> f64 {
    target.0 - base.0
}

pub fn interval_distance(a: IntervalPoint, b: IntervalPoint) -> f64 {
    (a.0 - b.0).abs()
}

/// The interval (0,1) with the Euclidean metric.
#[derive(Clone, Copy, Debug, Default)]
pub struct UnitInterval;

impl Manifold for UnitInterval {
    type Point = IntervalPoint;
    type Tangent = Vector1<f64>;

    fn dim(&self) -> usize {
        1
    }
    fn volume(&self) -> f64 {
        VOL_INTERVAL
    }
    fn exp(&self, base: &IntervalPoint, v: &Vector1<f64>) -> Result<IntervalPoint, ManifoldError> {
        interval_exp(*base, v[0])
    }
    fn log(&self, base: &IntervalPoint, target: &IntervalPoint) -> Result<Vector1<f64>, ManifoldError> {
        Ok(Vector1::new(interval_log(*base, *target)))
    }
    fn distance(&self, a: &IntervalPoint, b: &IntervalPoint) -> f64 {
        interval_distance(*a, *b)
    }
}

/// Symmetric bilinear form on a tangent space, in tangent coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct BilinearForm {
    m: DMatrix<f64>,
    eig: Vec<f64>,
}

impl BilinearForm {
    pub fn new(m: DMatrix<f64>) -> Result<Self, ManifoldError> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(ManifoldError::DimensionMismatch);
        }
        if m.iter().any(|c| !c.is_finite()) {
            return Err(ManifoldError::NonFinite);
        }
        let scale = m.amax().max(1.0);
        if (&m - m.transpose()).amax() > 1e-12 * scale {
            return Err(ManifoldError::NotSymmetric);
        }
        let sym = (&m + m.transpose()) * 0.5;
        let mut eig: Vec<f64> = SymmetricEigen::new(sym.clone()).eigenvalues.iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        Ok(BilinearForm { m: sym, eig })
    }

    pub fn identity(d: usize) -> Self {
        BilinearForm::new(DMatrix::identity(d, d)).expect("identity is symmetric")
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self, ManifoldError> {
        BilinearForm::new(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    /// Q(u, v).
    pub fn eval(&self, u: &[f64], v: &[f64]) -> f64 {
        let d = self.dim();
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                s += u[i] * self.m[(i, j)] * v[j];
            }
        }
        s
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eig
    }

    /// Product of the eigenvalues.
    pub fn det(&self) -> f64 {
        self.eig.iter().product()
    }

    pub fn lambda_min(&self) -> f64 {
        self.eig[0]
    }

    pub fn is_positive_definite(&self) -> bool {
        self.eig[0] > 0.0
    }
}

/// Open ellipsoid `{y : Q(log_p y, log_p y) < det(Q)^{1/d} ρ²}`.
#[derive(Clone, Debug)]
pub struct Ellipsoid<P> {
    pub center: P,
    pub form: BilinearForm,
    pub radius: f64,
}

impl<P: Copy> Ellipsoid<P> {
    pub fn new(center: P, form: BilinearForm, radius: f64) -> Result<Self, ManifoldError> {
        if !form.is_positive_definite() {
            return Err(ManifoldError::NotPositiveDefinite);
        }
        if !(radius > 0.0) {
            return Err(ManifoldError::NonPositiveRadius(radius));
        }
        Ok(Ellipsoid { center, form, radius })
    }

    /// Right-hand side `det(Q)^{1/d} ρ²` of the membership test.
    pub fn threshold(&self) -> f64 {
        self.form.det().powf(1.0 / self.form.dim() as f64) * self.radius * self.radius
    }

    pub fn contains<M: Manifold<Point = P>>(&self, m: &M, y: &P) -> Result<bool, ManifoldError> {
        if self.form.dim() != m.dim() {
            return Err(ManifoldError::DimensionMismatch);
        }
        let v = m.log(&self.center, y)?;
        let c = v.coords();
        Ok(self.form.eval(c, c) < self.threshold())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_sign() {
        let r = Rotation::from_quaternion(-1.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(r.quaternion(), [1.0, 0.0, 0.0, 0.0]);
        let r = Rotation::from_quaternion(0.0, 0.0, -1.0, 1.0).unwrap();
        let q = r.quaternion();
        assert!(q[2] > 0.0 && q[3] < 0.0);
    }

    #[test]
    fn exp_identity_quarter_turn_about_x() {
        let r = Rotation::from_axis_angle(&Vector3::new(PI / 2.0, 0.0, 0.0));
        let m = r.matrix();
        let e = Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        assert!((m - e).amax() < 1e-15);
    }

    #[test]
    fn log_quarter_turn_about_z() {
        let r = Rotation::from_axis_angle(&Vector3::new(0.0, 0.0, PI / 2.0));
        let v = so3_log(&Rotation::identity(), &r).unwrap().v;
        assert!((v - Vector3::new(0.0, 0.0, PI / 2.0)).norm() < 1e-15);
    }

    #[test]
    fn half_turn_is_antipodal_to_identity() {
        let r = Rotation::from_axis_angle(&Vector3::new(0.0, PI, 0.0));
        assert!((so3_distance(&Rotation::identity(), &r) - PI).abs() < 1e-15);
        assert_eq!(so3_log(&Rotation::identity(), &r), Err(ManifoldError::AntipodalPoint));
    }

    #[test]
    fn small_angle_series_is_consistent() {
        let v = Vector3::new(3e-7, -2e-7, 1e-7);
        let r = Rotation::from_axis_angle(&v);
        assert!((r.to_axis_angle() - v).norm() < 1e-20);
    }

    #[test]
    fn matrix_round_trip() {
        let r = Rotation::from_quaternion(0.1, -0.7, 0.3, 0.2).unwrap();
        let back = Rotation::from_matrix(&r.matrix()).unwrap();
        assert!(so3_distance(&r, &back) < 1e-12);
    }

    #[test]
    fn interval_ops() {
        let p = IntervalPoint::new(0.5).unwrap();
        assert!((interval_exp(p, 0.1).unwrap().value() - 0.6).abs() < 1e-15);
        assert!(matches!(interval_exp(p, 0.6), Err(ManifoldError::OutOfDomain(_))));
        let a = IntervalPoint::new(0.2).unwrap();
        let b = IntervalPoint::new(0.9).unwrap();
        assert!((interval_distance(a, b) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn ball_volumes() {
        assert_eq!(unit_ball_volume(3), OMEGA_3);
        assert!((unit_ball_volume(4) - PI * PI / 2.0).abs() < 1e-14);
    }

    #[test]
    fn identity_form_gives_geodesic_ball() {
        let p = Rotation::from_quaternion(0.9, 0.1, 0.2, 0.3).unwrap();
        let e = Ellipsoid::new(p, BilinearForm::identity(3), 0.1).unwrap();
        let dir = Vector3::new(1.0, 2.0, -1.0).normalize();
        let inside = So3.exp(&p, &(dir * 0.05)).unwrap();
        let outside = So3.exp(&p, &(dir * 0.2)).unwrap();
        assert!(e.contains(&So3, &p).unwrap());
        assert!(e.contains(&So3, &inside).unwrap());
        assert!(!e.contains(&So3, &outside).unwrap());
    }
}
