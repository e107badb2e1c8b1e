//! Continuous spatio-temporal 4D MRI reconstruction.
//!
//! A motion network maps `(x, y, z, s)` to a displacement into a canonical
//! frame and an anatomy network maps canonical coordinates to intensity. Both
//! are trained jointly from interleaved 2D slices and a respiratory surrogate
//! extracted from navigator slices. A seedable analytic breathing phantom
//! provides ground truth for every stage.

pub mod acquisition;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod nn;
pub mod phantom;
pub mod reconstruct;
pub mod surrogate;
pub mod trainer;
pub mod volume;

pub use error::{Error, Result};
