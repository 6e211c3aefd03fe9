//! Gaussian belief propagation for distributed linear Gaussian models.
//!
//! - [`model`]: local linear Gaussian models, validation, the centralized estimate.
//! - [`graph`]: factor graph, canonical edge order, topology classes.
//! - [`bp`]: message updates and the iteration loop.
//! - [`analysis`]: information fixed point, bounds, `ρ(Q)`, contraction rates.
//! - [`mrf_bridge`]: walk-summability and the factor-width-2 conversion.
//! - [`io`]: file formats.

pub mod analysis;
pub mod bp;
pub mod graph;
pub mod io;
pub mod model;
pub mod mrf_bridge;
pub mod numerics;
pub mod par;
#[cfg(any(test, feature = "testkit"))]
pub mod testkit;

pub use bp::{
    Belief, BpError, BpOptions, BpRun, BpStatus, InitStrategy, Message, MessageSet, Problem,
    Schedule,
};
pub use graph::{FactorGraph, TopologyClass, TopologyKind};
pub use model::{FactorSpec, LinearGaussianModel, ModelError, VariableSpec};
pub use par::Execution;
