//! Exact travel costs, Lyapunov exponent estimates and concentration
//! experiments for the simple random walk in i.i.d. nonnegative random
//! potentials on `Z^d`.
//!
//! The crate is organised bottom-up:
//!
//! * [`lattice`]: points, norms, boxes, coarse-graining indices and
//!   lattice-animal enumeration.
//! * [`potential`]: distribution specs, counter-based field sampling,
//!   truncation and the binary field format.
//! * [`solver`]: killed-walk linear systems: travel weights, taboo weights,
//!   exit functionals, return probabilities and weighted-measure functionals.
//! * [`mc_oracle`]: path-sum and Monte Carlo oracles independent of the solver.
//! * [`lyapunov`]: subadditive estimation of the Lyapunov exponent.
//! * [`concentration`]: tail, truncation, perturbation, entropy and Herbst
//!   experiments.
//! * [`coarse_grain`]: occupied boxes, animal occupancy, the crossing
//!   functional χ and the one-step supermartingale check.
//! * [`harness`]: experiment configs, runner, manifests and outputs.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod coarse_grain;
pub mod concentration;
pub mod error;
pub mod harness;
pub mod lattice;
pub mod lyapunov;
pub mod mc_oracle;
pub mod potential;
pub mod seed;
pub mod solver;
pub mod stats;

pub use error::{Error, Result};
pub use lattice::{AnimalSpec, BoxRegion, Connectivity, LatticePoint, Region};
pub use potential::{AssumptionReport, DistributionSpec, PotentialField};
pub use solver::{SolveMethod, SolveOptions, SolveResult, WeightedFunctionals};
