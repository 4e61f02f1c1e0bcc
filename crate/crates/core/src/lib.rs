//! Derivative-based nonparametric sparse regression in reproducing kernel Hilbert spaces.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod error;
pub mod experiments;
pub mod kernel;
pub mod model;
pub mod operators;
pub mod selection;
pub mod solver;

pub use data::Dataset;
pub use error::{Error, Result};
pub use kernel::Kernel;
pub use operators::{AssembleOptions, DerivativeSystem, GramStorage, NormEstimate};
pub use selection::{select, selection_error, SelectionReport};
pub use solver::{fit, fit_path, FitState, Solver, SolverConfig};
pub use model::{FittedModel, RlsModel};
