//! Sinusoidal multilayer perceptrons written against plain row-major buffers.
//!
//! The networks in this crate are small enough that a hand-rolled reverse pass
//! is simpler than a general autodiff engine. Each forward call records a
//! [`Tape`]; the reverse pass consumes the tape together with the upstream
//! gradient. Forward-mode tangents with respect to selected input columns are
//! propagated alongside the values when input Jacobians are needed, and the
//! reverse pass differentiates through those tangents too, which is what the
//! volume-preservation penalty needs.

mod adam;
mod checkpoint;
mod matrix;
mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use matrix::{sin_cos_f32, Matrix, Real};
pub use mlp::{init_siren, Activation, Gradients, Jacobians, Layer, Mlp, Tape};
