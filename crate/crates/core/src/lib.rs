//! Two-layer ReLU CNNs trained by full-batch gradient descent on a
//! signal+noise distribution with label-flipping noise.
//!
//! The crate generates data ([`data`]), trains the network ([`cnn`],
//! [`trainer`]), tracks the signal-noise decomposition of the filters two
//! independent ways ([`decomposition`]), checks the structural properties of
//! the dynamics at runtime ([`monitor`]), estimates test error
//! ([`evaluation`]), and drives single runs and `(d, |mu|)` sweeps
//! ([`experiment`]).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cnn;
pub mod data;
pub mod decomposition;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod monitor;
pub mod rng;
pub mod sign;
pub mod trainer;

pub use cnn::{BatchState, Weights};
pub use data::{DataConfig, DataPoint, Dataset, SetStats};
pub use decomposition::{Coefficients, CoefficientHistory};
pub use error::{Error, Result};
pub use evaluation::ErrorEstimate;
pub use monitor::{InvariantReport, InvariantSuite, Status};
pub use sign::Sign;
pub use trainer::{IterationRecord, RunRecord, StopReason, TrainConfig};
