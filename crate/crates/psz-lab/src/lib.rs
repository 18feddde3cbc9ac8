//! Personal sound zone (PSZ) filter-design laboratory.
//!
//! Simulates loudspeaker-to-point acoustic transfer functions (free field and
//! image-source shoebox rooms), designs PSZ filters with pressure matching and
//! amplitude matching, trains a spatially adaptive neural network mapping zone
//! coordinates to filter coefficients, and evaluates everything with
//! isolation and error metrics.

pub mod acoustics;
pub mod augment;
pub mod autodiff;
pub mod classic;
pub mod cli;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod nnloss;
pub mod par;
pub mod sann;
pub mod train;

pub use error::{PszError, Result};
