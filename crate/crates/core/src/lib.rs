//! Distributed pose graph optimization by geodesic consensus on SE(3).
//!
//! Every vertex steers its own pose estimate using only the measurements on
//! its incident edges and the current estimates of its direct neighbors. The
//! rotation control is the sum of geodesic (log-map) residuals, which makes
//! the rotational part of the objective a Lyapunov function of the
//! continuous-time dynamics.
//!
//! Start with [`synth`] or [`io`] to get a [`PoseGraph`], then run
//! [`solver::Solver`] (centralized reference) or [`runtime::run_distributed`]
//! (one thread per vertex, message passing only along edges).

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod consistency;
pub mod error;
pub mod graph;
pub mod io;
pub mod runtime;
pub mod so3;
pub mod solver;
pub mod synth;

pub use consistency::ConsistencyReport;
pub use error::{Error, Result};
pub use graph::{Pose, PoseGraph, RelativeMeasurement};
pub use so3::{Mat3, Vec3};
pub use solver::{SolveResult, Solver, SolverConfig, TranslationMode};
