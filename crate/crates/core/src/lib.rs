//! Structured-voxel explicit elastic wave propagation engine.
//!
//! The crate provides three numerically comparable element backends for the
//! global stiffness matrix-vector product of a voxel finite element model:
//!
//! * `vfem` — trilinear voxel elements with a lumped (diagonal) mass matrix,
//! * `ovfem` — an orthogonal-basis voxel element (Heaviside octant
//!   displacement basis, low-order polynomial stress basis) whose mass matrix
//!   is diagonal without lumping,
//! * `int8` — a software emulation of a tiled 8-bit integer matrix-multiply
//!   pipeline that reproduces the `ovfem` product through an exact integer
//!   digit expansion of the element right-hand-side vectors.
//!
//! On top of the matrix-vector engine sits an explicit central-difference
//! time integrator with Rayleigh damping, band-limited impulse sources, and
//! waveform recording, plus an arbitrary-precision oracle used to adjudicate
//! the accuracy hierarchy of the backends.

pub mod element;
pub mod error;
pub mod exact;
pub mod expand;
pub mod integrate;
pub mod matvec;
pub mod model_io;
pub mod signal;
pub mod voxel;

pub use error::CoreError;
