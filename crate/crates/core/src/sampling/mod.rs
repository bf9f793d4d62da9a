//! Sampling sets: uniform SO(3) meshes, the low-discrepancy grid sequence on
//! (0,1), and local-discrepancy diagnostics.

pub mod discrepancy;
pub mod hull;
pub mod lds;
pub mod mesh;

pub use discrepancy::{
    ellipsoid_volume_estimate, flat_ellipsoid_integrals, interval_lds_discrepancy, local_discrepancy,
    so3_ellipsoid_integrals, DiscrepancyReport, EllipsoidIntegrals,
};
pub use lds::{interval_lds, IntervalLds};
pub use mesh::{nearest_neighbour_angles, refine_so3_mesh, so3_base_mesh, so3_mesh, S3Triangulation};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ManifoldTag {
    So3,
    Interval,
}

/// Ordered, immutable set of manifold points.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingSet<P> {
    points: Vec<P>,
    level: usize,
    tag: ManifoldTag,
}

impl<P> SamplingSet<P> {
    pub fn new(points: Vec<P>, level: usize, tag: ManifoldTag) -> Self {
        SamplingSet { points, level, tag }
    }

    pub fn points(&self) -> &[P] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Mesh level, or sequence index m for the interval grids.
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn tag(&self) -> ManifoldTag {
        self.tag
    }

    pub fn into_points(self) -> Vec<P> {
        self.points
    }
}

impl<P> std::ops::Index<usize> for SamplingSet<P> {
    type Output = P;
    fn index(&self, i: usize) -> &P {
        &self.points[i]
    }
}
