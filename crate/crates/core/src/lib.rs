//! Registration-based model order reduction with entropic optimal transport.
//!
//! The crate is organized bottom-up:
//!
//! - [`grid`]: regular tensor grids in 1D/2D, fields, discrete calculus.
//! - [`ot`]: the entropic OT engine (Sinkhorn, softmin c-transform,
//!   separable Gibbs kernels, divergences, barycenters, Monge maps).
//! - [`ot1d`]: closed-form 1D transport via cdfs and the boundary-layer
//!   family used as an exact oracle.
//! - [`pod`]: proper orthogonal decomposition from correlation matrices.
//! - [`registration`]: transport modes, boundary projection of potentials,
//!   and the parameter-dependent mapping.
//! - [`gp`]: Gaussian-process regression of mode coefficients.
//! - [`eim`]: empirical interpolation for online hyper-reduction.
//! - [`fem`]: bilinear quadrilateral FEM for the model problems.
//! - [`rom`]: the offline/online pipeline tying everything together.

pub mod error;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod ot;
pub mod ot1d;
pub mod pod;
pub mod registration;
pub mod gp;
pub mod eim;
pub mod fem;
pub mod rom;

pub use error::Error;
pub use grid::{GridDensity, GridField, GridVectorField, TensorGrid};

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;
