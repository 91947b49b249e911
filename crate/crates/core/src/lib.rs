//! Simulation and verification of stochastic gradient descent and its
//! small-learning-rate continuum descriptions.
//!
//! The crate has three layers:
//!
//! * dynamics: the discrete chains ([`sgd_chain`]) and the Euler-Maruyama
//!   flow integrators ([`integrators`]), driven by per-atom Brownian
//!   increments over a finite data space ([`data_space`]);
//! * models: closed-form loss oracles ([`loss_models`]) and the
//!   shallow-network mean-field coefficients ([`meanfield_net`]);
//! * verification: empirical-measure utilities with exact Wasserstein-2
//!   ([`measures`]) and the statistical harness ([`analysis`]).
//!
//! Randomness is counter-based and splittable ([`rng`]); every result is a
//! pure function of the experiment seed, independent of thread scheduling.

pub mod analysis;
pub mod data_space;
pub mod error;
pub mod integrators;
pub mod linalg;
pub mod loss_models;
pub mod meanfield_net;
pub mod measures;
pub mod rng;
pub mod sgd_chain;

pub use data_space::{CylindricalIncrement, DataDistribution};
pub use error::{CoreError, Result};
pub use integrators::{DriftOrder, FlowState};
pub use loss_models::{LossModel, PolynomialModel, ScaleModel, ShiftModel};
pub use meanfield_net::{FeatureMap, LinearFeature, NetworkModel, TanhFeature};
pub use measures::{wasserstein2, CylindricalFunctional, EmpiricalMeasure, InnerFn, OuterFn};
pub use rng::RngStream;
pub use sgd_chain::{ChainState, FrozenKernel, GradientDescentKernel, MeasureKernel, ZeroKernel};
