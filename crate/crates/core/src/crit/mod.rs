//! Critical point and exponent from ξ(q), with bootstrap intervals and the
//! cross-set universality summary.

mod bootstrap;
mod crossing;
mod fit;
mod universality;

pub use bootstrap::{
    bootstrap, perturb_series, BootstrapRun, MAX_DROPPED_FRACTION, MIN_REPORTED_REPLICAS,
};
pub use crossing::{crossing_estimate, CrossingEstimate};
pub use fit::{
    fit_critical, BootstrapSummary, CriticalFit, CriticalFitConfig, XiPoint, RESIDUAL_DESCRIPTION,
};
pub use universality::{
    reported_table, universality_report, NuEstimate, UniversalityEntry, UniversalityReport,
    DEVIATION_LIMIT,
};
