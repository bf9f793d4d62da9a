//! Ellipsoidal support lifting (ESL) on Riemannian manifolds, with a
//! desk-scale single-particle cryo-EM pipeline built on top of it.

pub mod cryoem;
pub mod error;
pub mod formats;
pub mod esl;
pub mod manifold;
pub mod metrics;
pub mod refine;
pub mod sampling;
pub mod simplex;
