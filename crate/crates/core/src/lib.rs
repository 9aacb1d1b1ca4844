//! Numerical toolkit for the two-mode stochastic hybrid model of a
//! self-regulating gene.
//!
//! A gene switches between two modes. In mode 1 the protein concentration
//! relaxes along `dx/dt = a - b x`, in mode 2 along `dx/dt = c - d x`, and
//! the mode flips at concentration-dependent rates `λ(x)` (1 → 2) and
//! `μ(x)` (2 → 1). The per-mode densities `(f1, f2)` on `[a/b, c/d]` obey a
//! coupled pair of hyperbolic balance laws.
//!
//! The crate provides three independent routes to the long-run behaviour:
//!
//! - [`stationary`]: exact stationary densities `ψ1, ψ2` (closed form for
//!   affine rates, quadrature otherwise), endpoint classification and maxima.
//! - [`transient`]: a conservative operator-splitting solver for the
//!   time-dependent system (upwind transport plus exact 2×2 reaction).
//! - [`pdmp`]: Monte Carlo simulation of the underlying piecewise
//!   deterministic Markov process.
//!
//! [`analysis`] ties them together with L1 metrics and cross-validation.

pub mod analysis;
pub mod model;
pub mod pdmp;
pub mod quad;
pub mod stationary;
pub mod transient;

pub use analysis::{ComparisonReport, ConvergenceCurve, CrossValidateConfig, Thresholds};
pub use model::{DomainInterval, Model, ModelError, ModelParams, RateFunction};
pub use pdmp::{EmpiricalDensity, InitialLaw, Mode, SimulationConfig, Simulator};
pub use stationary::{
    EndpointBehavior, EndpointKind, Method, Side, StationaryError, StationaryOptions,
    StationarySolution, Target,
};
pub use transient::{
    DensityField, DtPolicy, Grid, InitialProfile, ReactionMatrix, Splitting, StepReport,
    TransientSolver,
};
