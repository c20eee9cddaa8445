//! Bregman projection methods for convex feasibility problems.
//!
//! The iteration `x_{k+1} = P_{C_{ξ_k}}(x_k)` projects, in the Bregman geometry
//! of a Legendre function `φ`, onto one set of a finite family at a time. The
//! crate provides the generators ([`legendre`]), projections and divergences
//! ([`geometry`]), set controls ([`controls`]), the driver ([`solver`]), local
//! rate constants ([`rates`]), sketched linear systems ([`sketch`]) and
//! multimarginal entropic transport ([`ot`]).

pub mod controls;
pub mod error;
pub mod geometry;
pub mod io;
pub mod json;
pub mod legendre;
pub mod linalg;
pub mod oracles;
pub mod ot;
pub mod rates;
pub mod sketch;
pub mod solver;

pub use controls::{adaptive_probabilities, beta_factor, ControlKind, ControlScheme, ControlState};
pub use error::{Error, Result};
pub use geometry::{
    conj_divergence, distance_to_set, divergence, dual_objective, project_affine, project_halfspace,
    project_hyperplane, AffineSet, ConstraintSet, DualSolveOptions, HalfspaceSet,
};
pub use legendre::{Hessian, Legendre, LegendreKind, LegendreSpec};
pub use ot::{CouplingTensor, OtAlgorithm, OtProblem, OtSpec};
pub use rates::{GreedySearchOptions, RateReport};
pub use sketch::{SketchFamily, SketchKind};
pub use solver::{
    estimate_rate, fixed_target, run_batch, solve, solve_with, FeasibilityProblem, IterationTrace, SolveOptions,
    Status, StepRecord,
};

pub use nalgebra::{DMatrix, DVector};
