//! Hyperparameter selection for the bias-free L1-loss support vector
//! classifier. The cross-validation bilevel problem is rewritten as a
//! mathematical program with complementarity constraints, smoothed with the
//! Fischer–Burmeister function and solved by a damped Newton method on the
//! KKT system for a decreasing sequence of smoothing parameters.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the usual double-precision instantiation.

pub mod baseline;
pub mod checks;
pub mod data_io;
pub mod diagnostics;
pub mod error;
pub mod kkt;
pub mod krylov;
pub mod linalg;
pub mod newton;
pub mod nullspace;
pub mod outer;
pub mod problem;
pub mod reduced;
pub mod report;
pub mod scalar;
pub mod smoothing;
pub mod sparse;

pub use baseline::{grid_search, solve_l1svc_dual, DualSvcConfig, GridTable};
pub use data_io::{make_split, parse_libsvm, parse_libsvm_str, SplitPlan};
pub use error::{Error, Result};
pub use kkt::{KktOperator, KktPoint};
pub use krylov::{bicgstab, KrylovConfig, KrylovStatus};
pub use newton::{solve_subproblem, NewtonConfig, NewtonStatus, Preconditioner};
pub use outer::{run_smoothing, OuterConfig};
pub use problem::assemble;
pub use report::{RunConfig, SolveReport};
pub use scalar::Scalar;

pub type Dataset = data_io::Dataset<f64>;
pub type Dataset32 = data_io::Dataset<f32>;
pub type MpecProblem = problem::MpecProblem<f64>;
pub type MpecProblem32 = problem::MpecProblem<f32>;
pub type PrimalPoint = problem::PrimalPoint<f64>;
pub type PrimalPoint32 = problem::PrimalPoint<f32>;
pub type KktPoint64 = kkt::KktPoint<f64>;
pub type SolveOutput = report::SolveOutput<f64>;
