use esl::cryoem::uniform_rotations;
use esl::error::MetricsError;
use esl::esl::{barycentre, esl_minimise, EslConfig, LiftedWeights};
use esl::manifold::{so3_distance, IntervalPoint, Rotation, So3, UnitInterval};
use esl::metrics::{
    align_rotations, euler_zyz, from_euler_zyz, relion_like_weights, summarize, w2_to_dirac, RunOutput,
};
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_tangent(r: &mut ChaCha8Rng, scale: f64) -> Vector3<f64> {
    Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)) * scale
}

#[test]
fn identical_sets_align_trivially() {
    let gt = uniform_rotations(50, &mut rng(1));
    let a = align_rotations(&gt, &gt).unwrap();
    assert!((a.transform - Matrix3::identity()).norm() < 1e-12);
    assert!(!a.reflected);
    assert!(a.aligned_errors.iter().all(|&e| e < 1e-7));
}

#[test]
fn global_gauge_is_recovered() {
    let gt = uniform_rotations(40, &mut rng(2));
    let q = Rotation::from_axis_angle(&Vector3::new(0.3, -1.1, 0.7));
    let est: Vec<Rotation> = gt.iter().map(|g| q.compose(g)).collect();
    let a = align_rotations(&est, &gt).unwrap();
    assert!((a.transform - q.matrix().transpose()).norm() < 1e-9);
    assert!(a.aligned_errors.iter().all(|&e| e < 1e-7));
}

#[test]
fn noisy_gauge_is_recovered_within_noise_floor() {
    let mut r = rng(3);
    let gt = uniform_rotations(500, &mut r);
    let q = Rotation::from_axis_angle(&Vector3::new(-2.0, 0.4, 0.1));
    let est: Vec<Rotation> = gt
        .iter()
        .map(|g| q.compose(g).compose(&Rotation::from_axis_angle(&random_tangent(&mut r, 0.05))))
        .collect();
    let a = align_rotations(&est, &gt).unwrap();
    let recovered = Rotation::from_matrix(&a.transform).unwrap();
    // Per-image noise is ≤ 0.087 rad; averaging over 500 images shrinks the gauge error.
    assert!(so3_distance(&recovered, &q.inverse()) < 0.01);
    assert!(a.mean < 0.087);
}

#[test]
fn mirrored_estimates_are_flagged() {
    let gt = uniform_rotations(30, &mut rng(4));
    let j = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
    let q = Rotation::from_axis_angle(&Vector3::new(0.5, 0.5, 0.0));
    let est: Vec<Rotation> =
        gt.iter().map(|g| Rotation::from_matrix(&(j * q.compose(g).matrix() * j)).unwrap()).collect();
    let a = align_rotations(&est, &gt).unwrap();
    assert!(a.reflected);
    assert!(a.aligned_errors.iter().all(|&e| e < 1e-7));
    for (e, g) in est.iter().zip(&gt) {
        assert!(so3_distance(&a.apply(e), g) < 1e-7);
    }
}

#[test]
fn alignment_is_invariant_to_a_global_rotation() {
    let mut r = rng(5);
    let gt = uniform_rotations(60, &mut r);
    let est: Vec<Rotation> =
        gt.iter().map(|g| g.compose(&Rotation::from_axis_angle(&random_tangent(&mut r, 0.3)))).collect();
    let base = align_rotations(&est, &gt).unwrap();
    for seed in 0..5 {
        let q = uniform_rotations(1, &mut rng(100 + seed))[0];
        let moved: Vec<Rotation> = est.iter().map(|e| q.compose(e)).collect();
        let a = align_rotations(&moved, &gt).unwrap();
        for (x, y) in a.aligned_errors.iter().zip(&base.aligned_errors) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}

#[test]
fn alignment_errors() {
    let gt = uniform_rotations(3, &mut rng(6));
    assert_eq!(align_rotations(&gt[..2], &gt).unwrap_err(), MetricsError::LengthMismatch(2, 3));
    assert_eq!(align_rotations(&[], &[]).unwrap_err(), MetricsError::EmptyRun);
}

#[test]
fn w2_examples() {
    let p = Rotation::identity();
    let q = Rotation::from_axis_angle(&Vector3::new(0.0, 0.4, 0.0));
    let pts = vec![q];
    let dirac = LiftedWeights::from_entries(vec![(0, 1.0)], 1).unwrap();
    assert!((w2_to_dirac(&So3, &pts, &dirac, &p) - 0.4).abs() < 1e-12);
    assert_eq!(w2_to_dirac(&So3, &pts, &dirac, &q), 0.0);

    let theta = 0.25;
    let two = vec![
        Rotation::from_axis_angle(&Vector3::new(theta, 0.0, 0.0)),
        Rotation::from_axis_angle(&Vector3::new(0.0, 0.0, -theta)),
    ];
    let mu = LiftedWeights::from_entries(vec![(0, 0.5), (1, 0.5)], 2).unwrap();
    assert!((w2_to_dirac(&So3, &two, &mu, &p) - theta).abs() < 1e-12);
}

#[test]
fn w2_does_not_depend_on_summation_order() {
    let mut r = rng(7);
    for _ in 0..100 {
        let k = r.random_range(1..30);
        let pts = uniform_rotations(k, &mut r);
        let raw: Vec<f64> = (0..k).map(|_| r.random_range(0.01..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let mu = LiftedWeights::from_entries(raw.iter().enumerate().map(|(i, w)| (i, w / s)).collect(), k).unwrap();
        let p = uniform_rotations(1, &mut r)[0];
        let reversed: f64 = (0..k).rev().map(|i| raw[i] / s * so3_distance(&pts[i], &p).powi(2)).sum::<f64>().sqrt();
        assert!((w2_to_dirac(&So3, &pts, &mu, &p) - reversed).abs() < 1e-12);
    }
}

#[test]
fn euler_examples() {
    assert_eq!(euler_zyz(&Rotation::identity()), (0.0, 0.0, 0.0));
    let (phi, theta, psi) = euler_zyz(&Rotation::from_axis_angle(&Vector3::new(0.0, 0.3, 0.0)));
    assert!(phi.abs() < 1e-12 && (theta - 0.3).abs() < 1e-12 && psi.abs() < 1e-12);
    let (phi, theta, psi) = euler_zyz(&Rotation::from_axis_angle(&Vector3::new(0.0, 0.0, 1.2)));
    assert!((phi - 1.2).abs() < 1e-12 && theta == 0.0 && psi == 0.0);
}

#[test]
fn euler_round_trip() {
    let rots = uniform_rotations(10_000, &mut rng(8));
    for r in &rots {
        let (phi, theta, psi) = euler_zyz(r);
        assert!((0.0..=std::f64::consts::PI).contains(&theta));
        assert!(phi > -std::f64::consts::PI && phi <= std::f64::consts::PI);
        assert!(psi > -std::f64::consts::PI && psi <= std::f64::consts::PI);
        let back = from_euler_zyz(phi, theta, psi).unwrap();
        assert!((back.matrix() - r.matrix()).norm() < 1e-10);
    }
    let flipped = Rotation::from_axis_angle(&Vector3::new(std::f64::consts::PI, 0.0, 0.0));
    let (phi, theta, psi) = euler_zyz(&flipped);
    assert_eq!(psi, 0.0);
    assert!((from_euler_zyz(phi, theta, psi).unwrap().matrix() - flipped.matrix()).norm() < 1e-10);
}

#[test]
fn softmax_limits() {
    let w = relion_like_weights(&[2.0; 5], 0.7);
    assert!(w.iter().all(|&x| (x - 0.2).abs() < 1e-15));
    let w = relion_like_weights(&[3.0, 1.0, 2.0, 1.5], 1e-6);
    assert_eq!(w, vec![0.0, 1.0, 0.0, 0.0]);
    let w = relion_like_weights(&[1e5, 1e5 + 1.0], 1.0);
    assert!(w.iter().all(|&x| x > 0.0) && (w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
}

/// Rough losses on a grid of (0,1): a smooth bowl with minimiser `x_env`
/// plus bounded per-point roughness.
fn rough_toy(m: usize) -> (Vec<IntervalPoint>, Vec<f64>, f64) {
    let x_env = 0.3;
    let mut r = rng(9);
    let pts: Vec<IntervalPoint> = (1..=m).map(|i| IntervalPoint::new(i as f64 / (m + 1) as f64).unwrap()).collect();
    let f = pts.iter().map(|p| (p.value() - x_env).powi(2) + 0.1 * r.random::<f64>()).collect();
    (pts, f, x_env)
}

#[test]
fn softmax_mean_is_worse_than_esl_on_the_rough_toy() {
    let (pts, f, x_env) = rough_toy(400);
    let cfg = EslConfig { eta: 1.0, j0: 3.0, gamma: None, bary_max_iters: 200, bary_tol: 1e-14 };
    let esl = esl_minimise(&UnitInterval, &f, &pts, &cfg).unwrap();
    let grid_min = (0..f.len()).min_by(|&a, &b| f[a].total_cmp(&f[b])).unwrap();
    let d_esl = (esl.barycentre.value() - x_env).abs();
    let d_grid = (pts[grid_min].value() - x_env).abs();
    assert!(d_esl < d_grid, "esl {d_esl} grid {d_grid}");

    // Softmax at the temperature of the roughness.
    let w = relion_like_weights(&f, 0.1);
    let mean: f64 = w.iter().zip(&pts).map(|(a, p)| a * p.value()).sum();
    assert!((mean - x_env).abs() > d_esl, "softmax {} esl {d_esl}", (mean - x_env).abs());
}

#[test]
fn summarize_examples() {
    assert_eq!(summarize(&[]).unwrap_err(), MetricsError::EmptyRun);
    let single = RunOutput { n_samples: 10, eta: 0.5, errors: vec![0.1], l0: vec![4], w2: vec![0.2] };
    let t = summarize(&[single]).unwrap();
    assert_eq!(t.rows[0].std_deg, 0.0);

    let deg = 180.0 / std::f64::consts::PI;
    let runs = vec![
        RunOutput { n_samples: 1821, eta: 0.3, errors: vec![0.1, 0.3], l0: vec![2, 4], w2: vec![0.2, 0.4] },
        RunOutput { n_samples: 1821, eta: 0.5, errors: vec![0.2, 0.2, 0.5], l0: vec![1, 1, 4], w2: vec![0.0, 0.3, 0.3] },
        RunOutput { n_samples: 14534, eta: 0.66, errors: vec![0.05], l0: vec![9], w2: vec![0.1] },
    ];
    let t = summarize(&runs).unwrap();
    let expect = [
        (0.2 * deg, 0.1 * deg, 3.0, 0.3 * deg),
        (0.3 * deg, 0.02f64.sqrt() * deg, 2.0, 0.2 * deg),
        (0.05 * deg, 0.0, 9.0, 0.1 * deg),
    ];
    for (row, (m, s, l0, w2)) in t.rows.iter().zip(expect) {
        assert!((row.mean_deg - m).abs() < 1e-12);
        assert!((row.std_deg - s).abs() < 1e-12);
        assert!((row.mean_l0 - l0).abs() < 1e-12);
        assert!((row.mean_w2_deg - w2).abs() < 1e-12);
    }
    assert_eq!(t.rows[2].n_samples, 14534);
}

#[test]
fn barycentre_is_within_twice_w2_of_any_point() {
    let mut r = rng(10);
    let mut checked = 0;
    while checked < 1000 {
        let c = uniform_rotations(1, &mut r)[0];
        let k = r.random_range(1..=12);
        let pts: Vec<Rotation> =
            (0..k).map(|_| c.compose(&Rotation::from_axis_angle(&random_tangent(&mut r, 0.4)))).collect();
        let raw: Vec<f64> = (0..k).map(|_| r.random_range(0.05..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let mu = LiftedWeights::from_entries(raw.iter().enumerate().map(|(i, w)| (i, w / s)).collect(), k).unwrap();
        let b = barycentre(&So3, &pts, &mu, &c, 200, 1e-13).unwrap();
        let p = if r.random_bool(0.5) {
            c.compose(&Rotation::from_axis_angle(&random_tangent(&mut r, 0.5)))
        } else {
            uniform_rotations(1, &mut r)[0]
        };
        let lhs = so3_distance(&b.point, &p);
        let rhs = 2.0 * w2_to_dirac(&So3, &pts, &mu, &p);
        assert!(lhs <= rhs + 1e-12, "{lhs} > {rhs}");
        checked += 1;
    }
}
