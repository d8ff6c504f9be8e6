//! Λ(t) construction and the one-parameter finite-time scaling collapse.

mod collapse;
mod lambda;
mod spline;

pub use collapse::{
    assign_branches, collapse, collapse_with, default_gauge_ref, CollapseConfig, FSample,
    ScalingResult, XiEntry,
};
pub use lambda::{
    classify_branch, floored, lambda_series, Branch, BranchFit, LambdaSeries, LambdaSource,
    TimeWindow, LN_LAMBDA_ERROR_FLOOR,
};
pub use spline::NaturalSpline;
