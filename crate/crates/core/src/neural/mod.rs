//! Weight-generating networks and the reverse-mode tape used to train them.
//!
//! Network evaluation is written once against [`Real`], so the same code runs
//! on plain `f64` during simulation and on [`Var`] when recording a trajectory
//! for backpropagation through time.

mod model;
mod net;
mod real;
mod tape;

pub use model::{load_models, save_models, FeatureScaling, ModelEntry, ModelFile, MODEL_FORMAT_VERSION};
pub use net::{sgd_step, InitScheme, Linear, WeightNetParams, HIDDEN_WIDTH};
pub use real::Real;
pub use tape::{Gradients, Tape, Var};
