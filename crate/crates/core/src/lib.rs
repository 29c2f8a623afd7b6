//! Wasserstein distributionally robust optimization (WDRO) toolkit.
//!
//! Evaluates, trains, and empirically certifies standard and
//! entropy-regularized WDRO models through their dual reformulations:
//! the per-sample dual generator (a hard sup for the standard case, a
//! log-partition soft-max for the regularized one), the outer 1-D dual
//! minimization in the multiplier, critical-radius diagnostics, and a
//! Monte Carlo experiment harness with CSV reports.

pub mod dual;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod models;
pub mod oracle;
pub mod radius;
pub mod risk;
pub mod rng;
pub mod vecmath;

pub use dual::{DualParams, GibbsBatch, McBudget, PhiEval};
pub use error::{Result, WdroError};
pub use geometry::{cost, SampleSpace, SpaceKind};
pub use models::{ArgmaxSet, LossFamily, LossModel, ThetaBounds};
pub use oracle::Grid;
pub use radius::{CriticalRadiusReport, DegeneracyReport, Regime};
pub use risk::{DualSolver, OptBudget, RobustRiskResult, TrainResult};
