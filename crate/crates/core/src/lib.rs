//! Collaborative relaying for federated learning over intermittent uplinks.
//!
//! Clients that reach the server only with probability `p_i` forward a
//! weighted mix of their neighbors' updates, so that a server which only
//! sees the sum of whatever arrives still receives an unbiased estimate of
//! the full average. The crate provides
//!
//! * [`topology`]: client graph and uplink probabilities,
//! * [`weights`]: the unbiasedness check, the variance objective `S(p, A)`
//!   and its column-wise minimizer,
//! * [`objectives`]: strongly-convex quadratic test problems,
//! * [`protocol`]: the round engine and FedAvg baselines,
//! * [`analysis`]: convergence-bound constants and trace statistics.
//!
//! Numeric code is generic over [`Scalar`] (`f32`, `f64`); the aliases below
//! fix the scalar to `f64`.

// `!(x > 0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod linalg;
pub mod objectives;
pub mod protocol;
pub mod scalar;
pub mod topology;
pub mod weights;

pub use scalar::Scalar;

pub type ConnectivityGraph = topology::ConnectivityGraph<f64>;
pub type RelayWeights = weights::RelayWeights<f64>;
pub type ColumnSubproblem = weights::ColumnSubproblem<f64>;
pub type OptimizeOptions = weights::OptimizeOptions<f64>;
pub type OptimizationResult = weights::OptimizationResult<f64>;
pub type UnbiasednessReport = weights::UnbiasednessReport<f64>;
pub type ObjectiveEnsemble = objectives::ObjectiveEnsemble<f64>;
pub type EnsembleSpec = objectives::EnsembleSpec<f64>;
pub type AlgorithmVariant = protocol::AlgorithmVariant<f64>;
pub type SimulationConfig = protocol::SimulationConfig<f64>;
pub type StepSchedule = protocol::StepSchedule<f64>;
pub type RoundTrace = protocol::RoundTrace<f64>;
pub type TheoremConstants = analysis::TheoremConstants<f64>;

pub type ConnectivityGraphF32 = topology::ConnectivityGraph<f32>;
pub type RelayWeightsF32 = weights::RelayWeights<f32>;
pub type ObjectiveEnsembleF32 = objectives::ObjectiveEnsemble<f32>;
