//! Positivity-preserving, energy-stable finite-difference schemes for the
//! droplet liquid-film gradient flow
//!
//! ```text
//! φ_t = Δμ,   μ = −(8/3)(φ⁻⁹ − φ⁻³) − ε²Δφ
//! ```
//!
//! on periodic boxes, with a first-order convex-splitting stepper, a
//! second-order stabilized BDF2 stepper, and a preconditioned steepest
//! descent (PSD) solver for the per-step convex minimization.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod energy;
pub mod error;
pub mod experiments;
pub mod field;
pub mod grid;
pub mod io;
pub mod ops;
pub mod oracle;
pub mod par;
pub mod poisson;
pub mod psd;
pub mod random;
pub mod schemes;

pub use error::{FilmError, Result};
pub use field::{CellField, FaceField};
pub use grid::Grid;
pub use poisson::{PrecondCoeffs, SpectralSolver};
