//! Training, polar certificates and generalization bounds for parallel
//! positively homogeneous networks.
//!
//! A parallel network predicts with a sum of factor maps `phi(W_j)` and is
//! regularized by `sum_j theta(W_j)`. The crate covers five families (low-rank
//! matrix sensing, structured sensing, two-layer linear and ReLU networks and
//! single-layer multi-head attention), a gradient trainer that grows width using
//! the polar operator, bound calculators and Monte-Carlo experiments.

pub mod bounds;
pub mod capacity;
pub mod cli;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod model;
pub mod polar;
pub mod rng;
pub mod serde_util;
pub mod trainer;
pub mod zoo;

pub use nalgebra;

pub use error::{Error, Result};
pub use model::{Dataset, FactorParams, ParallelModel, SamplingMeta, TraceRow, TrainTrace, WidthEvent};
pub use polar::{PolarCertificate, PolarMethod, Verdict};
pub use zoo::{Dims, Family, GaugeSpec, TeacherBlocks, TeacherSpec};
