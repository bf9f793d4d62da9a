//! Rotation, projection, CTF convolution and their adjoints.

use rustfft::num_complex::Complex64;

use super::fft::{signed_freq, Plans};
use super::{CtfParams, Volume};
use crate::error::CryoError;
use crate::manifold::Rotation;

/// Sample positions within this distance of a grid node are snapped to it.
const SNAP: f64 = 1e-10;

/// `(⌊x⌋, x − ⌊x⌋)` with fractions within [`SNAP`] of a node set to zero.
#[inline]
fn split(x: f64) -> (isize, f64) {
    let mut i = x as isize;
    if (i as f64) > x {
        i -= 1;
    }
    let t = x - i as f64;
    if t < SNAP {
        (i, 0.0)
    } else if t > 1.0 - SNAP {
        (i + 1, 0.0)
    } else {
        (i, t)
    }
}

/// Trilinear neighbours of `q` inside `[0, n)³` with nonzero weight; in the
/// interior all eight corners are listed.
#[inline]
fn neighbours(q: [f64; 3], n: usize, out: &mut [(usize, f64); 8]) -> usize {
    let ni = n as isize;
    let (bx, tx) = split(q[0]);
    let (by, ty) = split(q[1]);
    let (bz, tz) = split(q[2]);
    if bx >= 0 && by >= 0 && bz >= 0 && bx < ni - 1 && by < ni - 1 && bz < ni - 1 {
        let i0 = ((bz * ni + by) * ni + bx) as usize;
        let (sx, sy, sz) = (1, n, n * n);
        let (ux, uy, uz) = (1.0 - tx, 1.0 - ty, 1.0 - tz);
        *out = [
            (i0, uz * uy * ux),
            (i0 + sx, uz * uy * tx),
            (i0 + sy, uz * ty * ux),
            (i0 + sy + sx, uz * ty * tx),
            (i0 + sz, tz * uy * ux),
            (i0 + sz + sx, tz * uy * tx),
            (i0 + sz + sy, tz * ty * ux),
            (i0 + sz + sy + sx, tz * ty * tx),
        ];
        return 8;
    }
    let base = [bx, by, bz];
    let w = [[1.0 - tx, tx], [1.0 - ty, ty], [1.0 - tz, tz]];
    let mut cnt = 0;
    for dz in 0..2 {
        let iz = base[2] + dz as isize;
        let wz = w[2][dz];
        if iz < 0 || iz >= ni || wz == 0.0 {
            continue;
        }
        for dy in 0..2 {
            let iy = base[1] + dy as isize;
            let wy = w[1][dy];
            if iy < 0 || iy >= ni || wy == 0.0 {
                continue;
            }
            for dx in 0..2 {
                let ix = base[0] + dx as isize;
                let wx = w[0][dx];
                if ix < 0 || ix >= ni || wx == 0.0 {
                    continue;
                }
                out[cnt] = (((iz * ni + iy) * ni + ix) as usize, wz * wy * wx);
                cnt += 1;
            }
        }
    }
    cnt
}

/// Range of `z` indices whose sample point can touch the grid.
fn z_range(base: [f64; 3], d: [f64; 3], c: f64, n: usize) -> Option<(usize, usize)> {
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for k in 0..3 {
        if d[k].abs() < 1e-14 {
            if base[k] <= -1.0 || base[k] >= n as f64 {
                return None;
            }
            continue;
        }
        let a = (-1.0 - base[k]) / d[k];
        let b = (n as f64 - base[k]) / d[k];
        lo = lo.max(a.min(b));
        hi = hi.min(a.max(b));
    }
    let z0 = (lo + c).floor().max(0.0);
    let z1 = (hi + c).ceil().min(n as f64 - 1.0);
    (z0 <= z1).then_some((z0 as usize, z1 as usize))
}

/// Visits every output voxel of `r.v` with the trilinear stencil of the
/// source position `R⁻¹(p − c) + c`.
fn for_each_stencil(n: usize, r: &Rotation, mut visit: impl FnMut(usize, usize, usize, &[(usize, f64)])) {
    let m = r.matrix();
    let c = (n as f64 - 1.0) / 2.0;
    let a = [m[(0, 0)], m[(0, 1)], m[(0, 2)]];
    let b = [m[(1, 0)], m[(1, 1)], m[(1, 2)]];
    let d = [m[(2, 0)], m[(2, 1)], m[(2, 2)]];
    let mut st = [(0usize, 0.0f64); 8];
    for y in 0..n {
        let py = y as f64 - c;
        for x in 0..n {
            let px = x as f64 - c;
            let base = [c + px * a[0] + py * b[0], c + px * a[1] + py * b[1], c + px * a[2] + py * b[2]];
            let Some((z0, z1)) = z_range(base, d, c, n) else { continue };
            for z in z0..=z1 {
                let pz = z as f64 - c;
                let q = [base[0] + pz * d[0], base[1] + pz * d[1], base[2] + pz * d[2]];
                let cnt = neighbours(q, n, &mut st);
                if cnt > 0 {
                    visit(x, y, z, &st[..cnt]);
                }
            }
        }
    }
}

/// Ray sums of the rotated volume, trilinear with interior fast path.
fn project_rotated(src: &[f64], n: usize, r: &Rotation) -> Vec<f64> {
    let m = r.matrix();
    let c = (n as f64 - 1.0) / 2.0;
    let a = [m[(0, 0)], m[(0, 1)], m[(0, 2)]];
    let b = [m[(1, 0)], m[(1, 1)], m[(1, 2)]];
    let d = [m[(2, 0)], m[(2, 1)], m[(2, 2)]];
    let ni = n as isize;
    let (sy, sz) = (n, n * n);
    let mut img = vec![0.0; n * n];
    let mut st = [(0usize, 0.0f64); 8];
    for y in 0..n {
        let py = y as f64 - c;
        for x in 0..n {
            let px = x as f64 - c;
            let base = [c + px * a[0] + py * b[0], c + px * a[1] + py * b[1], c + px * a[2] + py * b[2]];
            let Some((z0, z1)) = z_range(base, d, c, n) else { continue };
            let mut sum = 0.0;
            for z in z0..=z1 {
                let pz = z as f64 - c;
                let q = [base[0] + pz * d[0], base[1] + pz * d[1], base[2] + pz * d[2]];
                let (bx, tx) = split(q[0]);
                let (by, ty) = split(q[1]);
                let (bz, tz) = split(q[2]);
                if bx >= 0 && by >= 0 && bz >= 0 && bx < ni - 1 && by < ni - 1 && bz < ni - 1 {
                    let i = ((bz * ni + by) * ni + bx) as usize;
                    let c00 = src[i] + tx * (src[i + 1] - src[i]);
                    let c10 = src[i + sy] + tx * (src[i + sy + 1] - src[i + sy]);
                    let c01 = src[i + sz] + tx * (src[i + sz + 1] - src[i + sz]);
                    let c11 = src[i + sz + sy] + tx * (src[i + sz + sy + 1] - src[i + sz + sy]);
                    let c0 = c00 + ty * (c10 - c00);
                    let c1 = c01 + ty * (c11 - c01);
                    sum += c0 + tz * (c1 - c0);
                } else {
                    let cnt = neighbours(q, n, &mut st);
                    sum += st[..cnt].iter().map(|&(i, w)| w * src[i]).sum::<f64>();
                }
            }
            img[y * n + x] = sum;
        }
    }
    img
}

/// `(r.v)(p) = v(r⁻¹ p)` about the grid centre, trilinear, zero outside.
pub fn rotate_volume(v: &Volume, r: &Rotation) -> Volume {
    let n = v.n();
    let src = v.data();
    let mut out = vec![0.0; n * n * n];
    for_each_stencil(n, r, |x, y, z, st| {
        out[(z * n + y) * n + x] = st.iter().map(|&(i, w)| w * src[i]).sum();
    });
    Volume::new(n, v.voxel_size(), out).expect("rotation keeps shape")
}

/// Transpose of [`rotate_volume`] as a linear map (trilinear splatting).
pub fn rotate_volume_adjoint(u: &Volume, r: &Rotation) -> Volume {
    let n = u.n();
    let src = u.data();
    let mut out = vec![0.0; n * n * n];
    for_each_stencil(n, r, |x, y, z, st| {
        let val = src[(z * n + y) * n + x];
        for &(i, w) in st {
            out[i] += w * val;
        }
    });
    Volume::new(n, u.voxel_size(), out).expect("rotation keeps shape")
}

/// `∫ v dz`: sum over z times the voxel size.
pub fn project_z(v: &Volume) -> Vec<f64> {
    let n = v.n();
    let mut img = vec![0.0; n * n];
    for slab in v.data().chunks(n * n) {
        for (o, s) in img.iter_mut().zip(slab) {
            *o += s;
        }
    }
    for o in img.iter_mut() {
        *o *= v.voxel_size();
    }
    img
}

/// Transpose of [`project_z`]: replicate along z times the voxel size.
pub fn smear_z(img: &[f64], n: usize, voxel_size: f64) -> Result<Volume, CryoError> {
    if img.len() != n * n {
        return Err(CryoError::ShapeMismatch(format!("{} pixels for a {n}×{n} image", img.len())));
    }
    let mut data = Vec::with_capacity(n * n * n);
    for _ in 0..n {
        data.extend(img.iter().map(|g| g * voxel_size));
    }
    Volume::new(n, voxel_size, data)
}

/// `c̃(ξ) = −A(ξ)(√(1−α²) sin W(|ξ|) + α cos W(|ξ|))`.
pub fn ctf_fourier(xi: [f64; 2], p: &CtfParams) -> f64 {
    p.radial(xi[0].hypot(xi[1]))
}

/// `W(r.v) = c̃ * P(r.v)` on an `n × n` detector, convolution zero-padded to
/// `2n`. Shareable across threads.
#[derive(Clone, Debug)]
pub struct ForwardModel {
    n: usize,
    voxel_size: f64,
    ctf: CtfParams,
    plans: Plans,
    multiplier: Vec<f64>,
}

impl ForwardModel {
    pub fn new(n: usize, voxel_size: f64, ctf: CtfParams) -> Result<Self, CryoError> {
        if n < 2 {
            return Err(CryoError::InvalidParameter(format!("grid size must be at least 2, got {n}")));
        }
        if !(voxel_size > 0.0) {
            return Err(CryoError::InvalidParameter(format!("voxel size must be positive, got {voxel_size}")));
        }
        let m = 2 * n;
        let unit = 2.0 * std::f64::consts::PI / (m as f64 * voxel_size);
        let mut multiplier = vec![0.0; m * m];
        for ky in 0..m {
            let fy = signed_freq(ky, m) * unit;
            for kx in 0..m {
                let fx = signed_freq(kx, m) * unit;
                multiplier[ky * m + kx] = ctf_fourier([fx, fy], &ctf);
            }
        }
        Ok(ForwardModel { n, voxel_size, ctf, plans: Plans::new(m), multiplier })
    }

    pub fn for_volume(v: &Volume, ctf: CtfParams) -> Result<Self, CryoError> {
        ForwardModel::new(v.n(), v.voxel_size(), ctf)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn ctf(&self) -> &CtfParams {
        &self.ctf
    }

    /// CTF samples on the padded `2n × 2n` frequency grid.
    pub fn multiplier(&self) -> &[f64] {
        &self.multiplier
    }

    fn check(&self, v: &Volume) -> Result<(), CryoError> {
        if v.n() != self.n || v.voxel_size() != self.voxel_size {
            return Err(CryoError::ShapeMismatch(format!(
                "volume {}³ at {} nm, model {}³ at {} nm",
                v.n(),
                v.voxel_size(),
                self.n,
                self.voxel_size
            )));
        }
        Ok(())
    }

    /// `P(r.v)` without materialising the rotated volume.
    pub fn project(&self, v: &Volume, r: &Rotation) -> Result<Vec<f64>, CryoError> {
        self.check(v)?;
        let mut img = project_rotated(v.data(), self.n, r);
        for p in img.iter_mut() {
            *p *= self.voxel_size;
        }
        Ok(img)
    }

    /// In-place `c̃ * g` (self-adjoint: the multiplier is real and even).
    pub fn convolve(&self, img: &mut [f64]) {
        let (n, m) = (self.n, 2 * self.n);
        let mut buf = vec![Complex64::default(); m * m];
        for y in 0..n {
            for x in 0..n {
                buf[y * m + x].re = img[y * n + x];
            }
        }
        self.plans.rows(&mut buf[..n * m], false);
        self.plans.axis(&mut buf, 1, false);
        for (b, c) in buf.iter_mut().zip(&self.multiplier) {
            *b *= *c;
        }
        self.plans.axis(&mut buf, 1, true);
        self.plans.rows(&mut buf[..n * m], true);
        let s = 1.0 / (m * m) as f64;
        for y in 0..n {
            for x in 0..n {
                let z = buf[y * m + x];
                debug_assert!(z.im.abs() * s <= 1e-10 * (1.0 + z.re.abs() * s));
                img[y * n + x] = z.re * s;
            }
        }
    }

    /// `W(r.v)`.
    pub fn apply(&self, v: &Volume, r: &Rotation) -> Result<Vec<f64>, CryoError> {
        let mut img = self.project(v, r)?;
        self.convolve(&mut img);
        Ok(img)
    }

    /// Adds `(W∘r)ᵀ g` to `out` (length `n³`).
    pub fn adjoint_into(&self, g: &[f64], r: &Rotation, out: &mut [f64]) -> Result<(), CryoError> {
        let n = self.n;
        if g.len() != n * n {
            return Err(CryoError::ShapeMismatch(format!("{} pixels for a {n}×{n} image", g.len())));
        }
        if out.len() != n * n * n {
            return Err(CryoError::ShapeMismatch(format!("{} voxels for a {n}³ grid", out.len())));
        }
        let mut h = g.to_vec();
        self.convolve(&mut h);
        for p in h.iter_mut() {
            *p *= self.voxel_size;
        }
        for_each_stencil(n, r, |x, y, _, st| {
            let val = h[y * n + x];
            for &(i, w) in st {
                out[i] += w * val;
            }
        });
        Ok(())
    }

    /// `(W∘r)ᵀ g`.
    pub fn adjoint(&self, g: &[f64], r: &Rotation) -> Result<Volume, CryoError> {
        let mut out = vec![0.0; self.n * self.n * self.n];
        self.adjoint_into(g, r, &mut out)?;
        Volume::new(self.n, self.voxel_size, out)
    }
}

/// `W(r.v)` for a single call; use [`ForwardModel`] for batches.
pub fn forward(v: &Volume, r: &Rotation, p: &CtfParams) -> Result<Vec<f64>, CryoError> {
    ForwardModel::for_volume(v, *p)?.apply(v, r)
}

/// `(W∘r)ᵀ g` on an `n × n` image with the given voxel size.
pub fn adjoint(g: &[f64], n: usize, voxel_size: f64, r: &Rotation, p: &CtfParams) -> Result<Volume, CryoError> {
    ForwardModel::new(n, voxel_size, *p)?.adjoint(g, r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neighbours_snap_to_nodes() {
        let mut st = [(0usize, 0.0f64); 8];
        let cnt = neighbours([1.0, 2.0, 3.0], 4, &mut st);
        assert_eq!(cnt, 1);
        assert_eq!(st[0], ((3 * 4 + 2) * 4 + 1, 1.0));
        let cnt = neighbours([1.0 - 1e-12, 2.0, 2.0], 4, &mut st);
        assert_eq!(cnt, 8);
        assert_eq!(st[0], ((2 * 4 + 2) * 4 + 1, 1.0));
    }

    #[test]
    fn z_range_covers_all_touching_samples() {
        let r = Rotation::from_axis_angle(&nalgebra::Vector3::new(0.3, -0.7, 0.2));
        let n = 7;
        let mut seen = 0usize;
        for_each_stencil(n, &r, |_, _, _, _| seen += 1);
        // Brute force without the z clipping.
        let m = r.matrix();
        let c = (n as f64 - 1.0) / 2.0;
        let mut st = [(0usize, 0.0f64); 8];
        let mut brute = 0usize;
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    let p = nalgebra::Vector3::new(x as f64 - c, y as f64 - c, z as f64 - c);
                    let q = m.transpose() * p;
                    if neighbours([q[0] + c, q[1] + c, q[2] + c], n, &mut st) > 0 {
                        brute += 1;
                    }
                }
            }
        }
        assert_eq!(seen, brute);
    }
}
