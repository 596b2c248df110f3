//! Spatio-temporal point processes with neural, low-rank triggering kernels.

pub mod basis;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod grid;
pub mod kernel;
pub mod likelihood;
pub mod nn;
pub mod par;
pub mod seed;
pub mod simulator;
pub mod trainer;

pub use basis::Basis;
pub use error::{Error, Result};
pub use grid::GridSpec;
pub use kernel::{Event, EventSequence, Intensity, KernelModel, ModelSpec, TemporalParam};
