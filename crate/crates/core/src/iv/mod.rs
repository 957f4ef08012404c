//! Instrumental-variable estimators: the nonparametric linear system for
//! discrete treatments and the control-function estimator for a single
//! continuous treatment.

mod control_function;
mod system;

pub use control_function::{
    cf_ate, cf_overlap_check, control_function_fit, control_values, BinCoverage, CfBasis, CfOptions,
    CfOverlapReport, ControlFunctionFit, ControlValues,
};
pub use system::{build_iv_system, estimate_q, rank_check, solve_q, IvFit, IvRankReport, IvSystem, IvVerdict};
