//! Cryo-EM forward model: rotation of a 3D map, line integrals along z and a
//! radial CTF convolution, with its exact adjoint and synthetic datasets.
//!
//! Volumes are `n³` arrays indexed `(z·n + y)·n + x`; images are `n × n`
//! arrays indexed `y·n + x`. Lengths are in nm, frequencies are angular
//! (`2π k / (m·pixel)` on an `m`-point grid).

pub mod data;
pub mod fft;
pub mod ops;

pub use data::{blur_volume, generate_dataset, phantom, uniform_rotations, Dataset};
pub use ops::{
    adjoint, ctf_fourier, forward, project_z, rotate_volume, rotate_volume_adjoint, smear_z, ForwardModel,
};

use crate::error::CryoError;

/// Physical box edge of the reference experiment: 91 voxels of 0.21667 nm.
pub const REFERENCE_BOX_NM: f64 = 91.0 * 0.21667;

/// Cubic real-valued 3D map.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    n: usize,
    voxel_size: f64,
    data: Vec<f64>,
}

impl Volume {
    pub fn new(n: usize, voxel_size: f64, data: Vec<f64>) -> Result<Self, CryoError> {
        if n < 2 {
            return Err(CryoError::InvalidParameter(format!("grid size must be at least 2, got {n}")));
        }
        if !(voxel_size > 0.0) || !voxel_size.is_finite() {
            return Err(CryoError::InvalidParameter(format!("voxel size must be positive, got {voxel_size}")));
        }
        if data.len() != n * n * n {
            return Err(CryoError::ShapeMismatch(format!("{} values for a {n}³ grid", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CryoError::InvalidParameter("volume has non-finite entries".into()));
        }
        Ok(Volume { n, voxel_size, data })
    }

    pub fn zeros(n: usize, voxel_size: f64) -> Result<Self, CryoError> {
        Volume::new(n, voxel_size, vec![0.0; n * n * n])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[(z * self.n + y) * self.n + x]
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn dot(&self, other: &Volume) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Same grid and voxel size, new values.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Volume, CryoError> {
        Volume::new(self.n, self.voxel_size, data)
    }
}

/// Stack of square images of equal size.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageStack {
    n: usize,
    pixel_size: f64,
    data: Vec<f64>,
}

impl ImageStack {
    pub fn new(n: usize, pixel_size: f64, data: Vec<f64>) -> Result<Self, CryoError> {
        if n < 2 {
            return Err(CryoError::InvalidParameter(format!("image size must be at least 2, got {n}")));
        }
        if !(pixel_size > 0.0) || !pixel_size.is_finite() {
            return Err(CryoError::InvalidParameter(format!("pixel size must be positive, got {pixel_size}")));
        }
        if data.len() % (n * n) != 0 {
            return Err(CryoError::ShapeMismatch(format!("{} values is not a stack of {n}×{n} images", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CryoError::InvalidParameter("images have non-finite entries".into()));
        }
        Ok(ImageStack { n, pixel_size, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn pixel_size(&self) -> f64 {
        self.pixel_size
    }

    pub fn len(&self) -> usize {
        self.data.len() / (self.n * self.n)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let s = self.n * self.n;
        &self.data[i * s..(i + 1) * s]
    }

    pub fn images(&self) -> std::slice::Chunks<'_, f64> {
        self.data.chunks(self.n * self.n)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Subset of the stack in the given order.
    pub fn select(&self, idx: &[usize]) -> ImageStack {
        let mut data = Vec::with_capacity(idx.len() * self.n * self.n);
        for &i in idx {
            data.extend_from_slice(self.image(i));
        }
        ImageStack { n: self.n, pixel_size: self.pixel_size, data }
    }
}

/// Microscope optics; stored in nm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CtfParams {
    pub defocus_nm: f64,
    pub cs_nm: f64,
    pub wavenumber: f64,
    pub amplitude_contrast: f64,
    /// Radial cutoff of the aperture `A(ξ)` in nm⁻¹ (angular); none means `A ≡ 1`.
    pub aperture_cutoff: Option<f64>,
}

impl CtfParams {
    /// Takes defocus in μm, spherical aberration in mm and κ in nm⁻¹.
    pub fn new(
        defocus_um: f64,
        cs_mm: f64,
        wavenumber: f64,
        amplitude_contrast: f64,
        aperture_cutoff: Option<f64>,
    ) -> Result<Self, CryoError> {
        CtfParams::from_nm(defocus_um * 1e3, cs_mm * 1e6, wavenumber, amplitude_contrast, aperture_cutoff)
    }

    pub fn from_nm(
        defocus_nm: f64,
        cs_nm: f64,
        wavenumber: f64,
        amplitude_contrast: f64,
        aperture_cutoff: Option<f64>,
    ) -> Result<Self, CryoError> {
        if !(amplitude_contrast > 0.0 && amplitude_contrast < 1.0) {
            return Err(CryoError::InvalidParameter(format!(
                "amplitude contrast must lie in (0,1), got {amplitude_contrast}"
            )));
        }
        if !(wavenumber > 0.0) || !wavenumber.is_finite() {
            return Err(CryoError::InvalidParameter(format!("wavenumber must be positive, got {wavenumber}")));
        }
        if !defocus_nm.is_finite() || !cs_nm.is_finite() {
            return Err(CryoError::InvalidParameter("defocus and Cs must be finite".into()));
        }
        if let Some(c) = aperture_cutoff {
            if !(c > 0.0) {
                return Err(CryoError::InvalidParameter(format!("aperture cutoff must be positive, got {c}")));
            }
        }
        Ok(CtfParams { defocus_nm, cs_nm, wavenumber, amplitude_contrast, aperture_cutoff })
    }

    /// `W(s) = (Δz/2κ) s² − (Cs/4κ³) s⁴`.
    pub fn phase(&self, s: f64) -> f64 {
        let k = self.wavenumber;
        let s2 = s * s;
        self.defocus_nm / (2.0 * k) * s2 - self.cs_nm / (4.0 * k * k * k) * s2 * s2
    }

    /// CTF value at radial frequency `s = |ξ|`.
    pub fn radial(&self, s: f64) -> f64 {
        if let Some(c) = self.aperture_cutoff {
            if s > c {
                return 0.0;
            }
        }
        let a = self.amplitude_contrast;
        let w = self.phase(s);
        -((1.0 - a * a).sqrt() * w.sin() + a * w.cos())
    }
}

impl Default for CtfParams {
    /// Δz = 1.5 μm, Cs = 2 mm, κ = 0.25 nm⁻¹, α = 0.1, no aperture.
    fn default() -> Self {
        CtfParams::new(1.5, 2.0, 0.25, 0.1, None).expect("valid defaults")
    }
}
