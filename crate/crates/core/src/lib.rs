//! Numerical toolkit for exit-time stochastic optimal control with jumps.
//!
//! The crate solves the Dirichlet terminal-boundary problem for a (possibly
//! degenerate) Hamilton–Jacobi–Bellman integro-PDE on a bounded domain with a
//! monotone finite-difference scheme, simulates the associated controlled
//! jump-diffusion up to its exit time, synthesizes piecewise-constant Markov
//! policies from the solved value field, and provides quantitative
//! verification probes (value-function representation, dynamic programming
//! residuals, explicit moment bounds, coupling probabilities, and boundary
//! barrier inequalities) with explicit, checkable constants.
//!
//! Modules, bottom of the dependency stack first:
//!
//! * [`num`] — deterministic summation, low-discrepancy sequences, seed mixing.
//! * [`rng`] — per-path, per-channel random streams for reproducible parallel
//!   Monte Carlo.
//! * [`levy`] — finite-atom (compound Poisson) jump measures: sampling,
//!   compensator drift, tail integrals.
//! * [`geometry`] — closed-form bounded domains: signed distances, dilations,
//!   proximal normals, exterior-ball probing.
//! * [`problem`] — coefficient bundles (drift, volatility, jumps, costs) with
//!   declared constants, plus a sampled assumption validator.
//! * [`sim`] — jump-adapted Euler simulation with exit detection, Monte Carlo
//!   cost estimation, and moment/comparison probes.
//! * [`solver`] — monotone explicit finite-difference solver for the HJB
//!   integro-PDE on dilated domains.
//! * [`policy`] — finite control subsets, nearest-point control projection,
//!   and Markov policy synthesis from a value field.
//! * [`barrier`] — boundary-strip supersolutions built from the jump tail
//!   integral, and composite space-time barriers.
//! * [`verify`] — end-to-end identity checks with explicit error budgets.

pub mod barrier;
pub mod geometry;
pub mod levy;
pub mod num;
pub mod policy;
pub mod problem;
pub mod rng;
pub mod sim;
pub mod solver;
pub mod verify;

pub use barrier::{BarrierFunction, CompositeBarrier};
pub use geometry::{DomainShape, DomainSpec};
pub use levy::{Atom, JumpEvent, LevyModel};
pub use policy::{CellPartition, MarkovPolicy};
pub use problem::{ControlSet, ProblemSpec};
pub use sim::{ControlLaw, McEstimate, PathRecord};
pub use solver::{GridSpec, ValueField};
pub use verify::{ErrorBudget, McConfig, Quantity, StoppingRule, VerificationReport};
