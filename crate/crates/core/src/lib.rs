//! Distributed clock phase and frequency synchronization for half-duplex TDMA
//! wireless networks.
//!
//! The crate simulates pulse-coupled clock discipline loops in which each node
//! hears exactly one peer per slot and periodically corrects its own clock
//! period and phase from stored time-stamp differences. Two discriminators are
//! provided:
//!
//! * [`essbs`]: the analytic baseline, with received-power-proportional weights
//!   and a nested period loop on the `3N`-slot update schedule;
//! * [`pfdsa`]: weights produced by small per-node networks ([`neural`]) that are
//!   trained locally and without supervision by backpropagating through the
//!   replayed synchronization loop ([`trainer`]).
//!
//! [`harness`] ties scenario generation, training and evaluation together and
//! writes CSV / JSON results.

// NaN-rejecting checks are written as negated comparisons.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod channel;
pub mod error;
pub mod essbs;
pub mod harness;
pub mod metrics;
pub mod neural;
pub mod pfdsa;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod sim_core;
pub mod trainer;

pub use channel::{LinkTable, NodePlacement, RadioConfig};
pub use error::{Result, SyncError};
pub use essbs::{EssbsConfig, PeriodInput};
pub use metrics::{npdr, period_spread, summarize, Summary, Trace, TraceRecord};
pub use neural::{Real, Tape, Var, WeightNetParams};
pub use pfdsa::{NodeModels, SyncStore};
pub use scenario::{GenerationConfig, Scenario};
pub use sim_core::{ClockState, NodeId, SlotRegime};
pub use trainer::{AcquisitionSet, LoopKind, TrainingConfig};
