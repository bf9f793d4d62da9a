//! Unnormalised forward / normalised inverse 2D and 3D FFTs on square and
//! cubic grids, row-major with x fastest.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Forward and inverse plans of one length.
#[derive(Clone)]
pub struct Plans {
    pub len: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Plans {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Plans({})", self.len)
    }
}

impl Plans {
    pub fn new(len: usize) -> Self {
        let mut p = FftPlanner::new();
        Plans { len, fwd: p.plan_fft_forward(len), inv: p.plan_fft_inverse(len) }
    }

    fn plan(&self, inverse: bool) -> &Arc<dyn Fft<f64>> {
        if inverse {
            &self.inv
        } else {
            &self.fwd
        }
    }

    /// Transforms every contiguous run of `len` values.
    pub fn rows(&self, data: &mut [Complex64], inverse: bool) {
        let plan = self.plan(inverse);
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        plan.process_with_scratch(data, &mut scratch);
    }

    /// Transforms along axis `axis` (0 = x) of a square or cube of side `len`.
    pub fn axis(&self, data: &mut [Complex64], axis: usize, inverse: bool) {
        let n = self.len;
        if axis == 0 {
            self.rows(data, inverse);
            return;
        }
        let stride = n.pow(axis as u32);
        let block = stride * n;
        let mut line = vec![Complex64::default(); n * stride];
        let plan = self.plan(inverse);
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        for chunk in data.chunks_mut(block) {
            // Gather the `stride` lines of this block contiguously.
            for s in 0..stride {
                for k in 0..n {
                    line[s * n + k] = chunk[k * stride + s];
                }
            }
            plan.process_with_scratch(&mut line, &mut scratch);
            for s in 0..stride {
                for k in 0..n {
                    chunk[k * stride + s] = line[s * n + k];
                }
            }
        }
    }

    /// Full transform over `dims` axes; the inverse includes the `1/len^dims`
    /// factor.
    pub fn full(&self, data: &mut [Complex64], dims: usize, inverse: bool) {
        for a in 0..dims {
            self.axis(data, a, inverse);
        }
        if inverse {
            let s = 1.0 / (self.len as f64).powi(dims as i32);
            for c in data.iter_mut() {
                *c *= s;
            }
        }
    }
}

/// Signed frequency index of FFT bin `k` on a grid of length `n`.
pub fn signed_freq(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Unnormalised 2D DFT of a real `n × n` image.
pub fn fft2(data: &[f64], n: usize) -> Vec<Complex64> {
    let mut c: Vec<Complex64> = data.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    assert_eq!(c.len(), n * n);
    Plans::new(n).full(&mut c, 2, false);
    c
}

/// Unnormalised 3D DFT of a real `n³` volume.
pub fn fft3(data: &[f64], n: usize) -> Vec<Complex64> {
    let mut c: Vec<Complex64> = data.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    assert_eq!(c.len(), n * n * n);
    Plans::new(n).full(&mut c, 3, false);
    c
}

/// Real part of the normalised inverse 3D DFT.
pub fn ifft3_real(mut c: Vec<Complex64>, n: usize) -> Vec<f64> {
    Plans::new(n).full(&mut c, 3, true);
    c.into_iter().map(|z| z.re).collect()
}
