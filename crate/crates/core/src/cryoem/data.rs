//! Synthetic datasets, phantoms and Gaussian blurring.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use super::fft::{signed_freq, Plans};
use super::ops::ForwardModel;
use super::{CtfParams, ImageStack, Volume};
use crate::error::CryoError;
use crate::manifold::Rotation;

/// Noisy projections with their ground truth.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub images: ImageStack,
    pub gt_rotations: Vec<Rotation>,
    pub gt_volume: Volume,
    pub ctf: CtfParams,
    pub snr: f64,
    pub seed: u64,
    /// Mean per-image power of the clean images.
    pub signal_power: f64,
    pub noise_variance: f64,
}

/// Haar-uniform rotations from normalised Gaussian quaternions.
pub fn uniform_rotations<R: Rng>(count: usize, rng: &mut R) -> Vec<Rotation> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        if let Ok(r) = Rotation::from_quaternion(q[0], q[1], q[2], q[3]) {
            out.push(r);
        }
    }
    out
}

/// Projections of `gt` at uniform rotations with Gaussian noise of variance
/// `mean clean power / snr`.
pub fn generate_dataset(
    gt: &Volume,
    n_images: usize,
    snr: f64,
    ctf: &CtfParams,
    seed: u64,
) -> Result<Dataset, CryoError> {
    if !(snr > 0.0) {
        return Err(CryoError::InvalidParameter(format!("snr must be positive, got {snr}")));
    }
    if n_images == 0 {
        return Err(CryoError::InvalidParameter("at least one image is required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rotations = uniform_rotations(n_images, &mut rng);
    let model = ForwardModel::for_volume(gt, *ctf)?;
    let clean: Vec<Vec<f64>> =
        rotations.par_iter().map(|r| model.apply(gt, r)).collect::<Result<_, _>>()?;
    let n = gt.n();
    let px = (n * n) as f64;
    let power = clean.iter().map(|img| img.iter().map(|p| p * p).sum::<f64>() / px).sum::<f64>() / n_images as f64;
    let noise_variance = power / snr;
    let normal = Normal::new(0.0, noise_variance.sqrt())
        .map_err(|e| CryoError::InvalidParameter(format!("noise level: {e}")))?;
    let mut data = Vec::with_capacity(n_images * n * n);
    for img in &clean {
        data.extend(img.iter().map(|p| p + normal.sample(&mut rng)));
    }
    Ok(Dataset {
        images: ImageStack::new(n, gt.voxel_size(), data)?,
        gt_rotations: rotations,
        gt_volume: gt.clone(),
        ctf: *ctf,
        snr,
        seed,
        signal_power: power,
        noise_variance,
    })
}

/// Periodic 1D Gaussian weights over signed offsets, summing to one.
pub(crate) fn gaussian_weights(n: usize, sigma: f64) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n)
        .map(|j| {
            let d = signed_freq(j, n);
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    for v in w.iter_mut() {
        *v /= s;
    }
    w
}

/// Periodic convolution with a normalised Gaussian of standard deviation
/// `sigma_voxels`, applied in the Fourier domain.
pub fn blur_volume(v: &Volume, sigma_voxels: f64) -> Result<Volume, CryoError> {
    if !(sigma_voxels > 0.0) || !sigma_voxels.is_finite() {
        return Err(CryoError::InvalidParameter(format!("blur sigma must be positive, got {sigma_voxels}")));
    }
    let n = v.n();
    let plans = Plans::new(n);
    let mut w: Vec<Complex64> = gaussian_weights(n, sigma_voxels).into_iter().map(|x| Complex64::new(x, 0.0)).collect();
    plans.rows(&mut w, false);
    let mut c: Vec<Complex64> = v.data().iter().map(|&x| Complex64::new(x, 0.0)).collect();
    plans.full(&mut c, 3, false);
    for z in 0..n {
        for y in 0..n {
            let wzy = w[z].re * w[y].re;
            for x in 0..n {
                c[(z * n + y) * n + x] *= wzy * w[x].re;
            }
        }
    }
    plans.full(&mut c, 3, true);
    v.with_data(c.into_iter().map(|z| z.re).collect())
}

/// Seeded asymmetric density built from Gaussian blobs inside the central
/// ball, peak-normalised to one.
pub fn phantom(n: usize, voxel_size: f64, seed: u64) -> Result<Volume, CryoError> {
    if n < 4 {
        return Err(CryoError::InvalidParameter(format!("phantom grid must be at least 4, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nf = n as f64;
    let c = (nf - 1.0) / 2.0;
    let mut blobs = Vec::new();
    for _ in 0..24 {
        let dir: [f64; 3] = rand_distr::UnitSphere.sample(&mut rng);
        let rad = 0.3 * nf * rng.random::<f64>().cbrt();
        let width = nf * rng.random_range(0.035..0.08);
        let amp = rng.random_range(0.5..1.5);
        blobs.push(([c + rad * dir[0], c + rad * dir[1], c + rad * dir[2]], width, amp));
    }
    let mut data = vec![0.0; n * n * n];
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let p = [x as f64, y as f64, z as f64];
                data[(z * n + y) * n + x] = blobs
                    .iter()
                    .map(|(ctr, w, a)| {
                        let d2: f64 = (0..3).map(|k| (p[k] - ctr[k]).powi(2)).sum();
                        a * (-d2 / (2.0 * w * w)).exp()
                    })
                    .sum();
            }
        }
    }
    let peak = data.iter().cloned().fold(0.0f64, f64::max);
    for v in data.iter_mut() {
        // Flush the far tails so that no subnormal values remain.
        *v = if *v < 1e-12 * peak { 0.0 } else { *v / peak };
    }
    Volume::new(n, voxel_size, data)
}
