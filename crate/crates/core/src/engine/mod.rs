//! Unitary evolution of the kicked rotor and the parallel ensemble runner.

mod ensemble;
mod propagator;
mod state;

pub use ensemble::{
    log_schedule, realization_draws, run_ensemble, run_realization, validate_times, EnsembleConfig,
    ObservableSeries, RealizationSeries,
};
pub use propagator::{
    step, Evolver, GridConfig, PlanSet, DEFAULT_MAX_M, EDGE_GUARD_THRESHOLD, INITIAL_ADAPTIVE_GRID,
};
pub use state::QuantumState;
