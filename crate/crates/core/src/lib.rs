//! Semi-implicit time stepping for a random heat equation coupled with a
//! stochastic Barenblatt equation under homogeneous Neumann conditions,
//! together with the Monte Carlo machinery used to check its energy,
//! stability and contraction estimates.
//!
//! The numerical core is generic over the floating point type through
//! [`Real`]. Concrete aliases for the common `f64` instantiation live at the
//! crate root (`Operators`, `Path`, `State`, ...).
//!
//! Module map:
//!
//! * [`discretization`] -- uniform time grid, lumped-mass P1 operators, discrete norms.
//! * [`noise`] -- keyed Brownian paths, additive integrands, discrete Itô sums.
//! * [`nonlinearity`] -- the monotone map `alpha` and its declared constants.
//! * [`stepper`] -- the inner fixed-point step and additive trajectories.
//! * [`multiplicative`] -- outer Picard iteration for state-dependent noise.
//! * [`diagnostics`] -- stability constants, Monte Carlo estimators, rate studies.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod discretization;
pub mod error;
pub mod multiplicative;
pub mod noise;
pub mod nonlinearity;
pub mod stepper;

mod linalg;
mod real;

pub use error::{Error, Result};
pub use real::Real;

pub use diagnostics::{compute_stability_constant, Estimate, Problem, RateReport, StabilityConstants};
pub use discretization::{MeshSpec, SpatialOperators, TimeGrid};
pub use multiplicative::{MultiplicativeMap, PicardConfig, PicardReport};
pub use noise::{AdditiveIntegrand, BrownianPath, Expr, NoisePartialSums};
pub use nonlinearity::Nonlinearity;
pub use stepper::{StepReport, StepperConfig, SystemState, Trajectory};

/// Double precision instantiations.
pub type Grid = TimeGrid<f64>;
pub type Operators = SpatialOperators<f64>;
pub type Path = BrownianPath<f64>;
pub type Integrand = AdditiveIntegrand<f64>;
pub type State = SystemState<f64>;
pub type Alpha = Nonlinearity<f64>;
pub type NoiseMap = MultiplicativeMap<f64>;

/// Single precision instantiations, mostly useful for cheap exploratory runs.
/// Solver tolerances must be loosened accordingly.
pub type Operators32 = SpatialOperators<f32>;
pub type State32 = SystemState<f32>;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
