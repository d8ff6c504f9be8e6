use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::propagator::{Evolver, GridConfig, PlanSet};
use super::state::QuantumState;
use crate::error::{Error, Result};
use crate::model::{ControlPoint, Modulation, ParameterSet};
use crate::rng;

/// Per-realization record at each requested time.
#[derive(Debug, Clone, PartialEq)]
pub struct RealizationSeries {
    pub times: Vec<usize>,
    /// `Σ m²|a_m|²`
    pub m2: Vec<f64>,
    /// `|a_0|²`
    pub pi0: Vec<f64>,
    /// `Σ m|a_m|²`
    pub m1: Vec<f64>,
    /// Largest transform grid the run needed.
    pub grid_len: usize,
}

/// Check a recording schedule against the run length.
pub fn validate_times(times: &[usize], n_kicks: usize) -> Result<()> {
    if times.is_empty() {
        return Err(Error::config("empty recording schedule"));
    }
    if times[0] < 1 || *times.last().unwrap() > n_kicks {
        return Err(Error::config(format!(
            "recording times must lie in [1, {n_kicks}], got {}..{}",
            times[0],
            times.last().unwrap()
        )));
    }
    if times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("recording times must be strictly increasing"));
    }
    Ok(())
}

/// Roughly `per_decade` logarithmically spaced kicks in `[1, n_kicks]`,
/// always including `n_kicks`.
pub fn log_schedule(n_kicks: usize, per_decade: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut i = 0usize;
    loop {
        let t = 10f64.powf(i as f64 / per_decade as f64).round() as usize;
        if t > n_kicks {
            break;
        }
        if out.last() != Some(&t) {
            out.push(t);
        }
        i += 1;
    }
    if out.last() != Some(&n_kicks) {
        out.push(n_kicks);
    }
    out
}

/// Evolve one plane wave `|m=0, β⟩` and record observables at `times`.
#[allow(clippy::too_many_arguments)]
pub fn run_realization(
    ps: &ParameterSet,
    k: f64,
    eps: f64,
    beta: f64,
    phases: (f64, f64),
    times: &[usize],
    grid: &GridConfig,
) -> Result<RealizationSeries> {
    let plans = PlanSet::new(grid);
    run_realization_with(
        ps,
        ControlPoint::new(k, eps),
        beta,
        phases,
        times,
        grid,
        &plans,
    )
}

pub(crate) fn run_realization_with(
    ps: &ParameterSet,
    control: ControlPoint,
    beta: f64,
    phases: (f64, f64),
    times: &[usize],
    grid: &GridConfig,
    plans: &PlanSet,
) -> Result<RealizationSeries> {
    validate_times(times, ps.n_kicks)?;
    let modulation = Modulation::from_params(ps).with_phases(phases.0, phases.1);
    let mut state = QuantumState::plane_wave(grid.initial_len(), beta, ps.kbar)?;
    let mut ev = Evolver::new(*grid, plans.clone(), &state, control);

    let mut rec = RealizationSeries {
        times: times.to_vec(),
        m2: Vec::with_capacity(times.len()),
        pi0: Vec::with_capacity(times.len()),
        m1: Vec::with_capacity(times.len()),
        grid_len: 0,
    };
    let last = *times.last().unwrap();
    let mut next = times.iter().peekable();
    // Kick n (0-based) happens at t = n; observables after period t are
    // recorded once kicks 0..t-1 and their free flights have run.
    for n in 0..last {
        let k_n = modulation.amplitude(control.k, control.eps, n as u64);
        ev.step(&mut state, k_n);
        let t = n + 1;
        if next.peek() == Some(&&t) {
            next.next();
            ev.check_edges(&state, t)?;
            rec.m2.push(state.second_moment());
            rec.pi0.push(state.probability(0));
            rec.m1.push(state.first_moment());
        }
    }
    rec.grid_len = ev.grid_len();
    Ok(rec)
}

/// Ensemble-averaged observables at one control point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableSeries {
    pub control: ControlPoint,
    /// Value of the path's fitting coordinate at this point.
    pub control_value: f64,
    pub times: Vec<usize>,
    pub p2: Vec<f64>,
    pub p2_err: Vec<f64>,
    pub pi0: Vec<f64>,
    pub pi0_err: Vec<f64>,
    pub n_realizations: usize,
    /// Mean momentum and its error; not persisted in CSV.
    #[serde(skip)]
    pub m1: Vec<f64>,
    #[serde(skip)]
    pub m1_err: Vec<f64>,
}

impl ObservableSeries {
    pub fn validate(&self) -> Result<()> {
        let n = self.times.len();
        if [
            self.p2.len(),
            self.p2_err.len(),
            self.pi0.len(),
            self.pi0_err.len(),
        ]
        .iter()
        .any(|&l| l != n)
        {
            return Err(Error::Parse(
                "observable columns have unequal lengths".into(),
            ));
        }
        if self.times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Parse("times not strictly increasing".into()));
        }
        let bad = |x: &f64| !x.is_finite();
        if self.p2.iter().any(|&x| x < 0.0 || bad(&x))
            || self.pi0.iter().any(|&x| !(0.0..=1.0).contains(&x))
            || self
                .p2_err
                .iter()
                .chain(&self.pi0_err)
                .any(|&x| x < 0.0 || bad(&x))
        {
            return Err(Error::Parse("observable values out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n_realizations: usize,
    pub seed: u64,
    /// Draw φ₂, φ₃ uniformly in [0, 2π) per realization.
    pub random_phases: bool,
    pub grid: GridConfig,
}

impl EnsembleConfig {
    pub fn new(n_realizations: usize, seed: u64) -> Self {
        Self {
            n_realizations,
            seed,
            random_phases: true,
            grid: GridConfig::default(),
        }
    }
}

/// Random inputs of realization `index`: quasimomentum and phases.
pub fn realization_draws(
    ps: &ParameterSet,
    cfg: &EnsembleConfig,
    index: usize,
) -> (f64, (f64, f64)) {
    let mut r = rng::stream(cfg.seed, index as u64);
    let beta: f64 = r.random();
    let phases = if cfg.random_phases {
        (r.random::<f64>() * 2.0 * PI, r.random::<f64>() * 2.0 * PI)
    } else {
        (ps.phi2, ps.phi3)
    };
    (beta, phases)
}

/// Average `n_realizations` independent fibers at one control point.
///
/// Realizations run in parallel but are reduced in index order, so the output
/// is bitwise independent of the number of worker threads.
pub fn run_ensemble(
    ps: &ParameterSet,
    control: ControlPoint,
    control_value: f64,
    times: &[usize],
    cfg: &EnsembleConfig,
) -> Result<ObservableSeries> {
    ps.validate()?;
    cfg.grid.validate()?;
    if cfg.n_realizations < 2 {
        return Err(Error::config("an ensemble needs at least 2 realizations"));
    }
    validate_times(times, ps.n_kicks)?;
    let plans = PlanSet::new(&cfg.grid);

    let runs: Vec<RealizationSeries> = (0..cfg.n_realizations)
        .into_par_iter()
        .map(|i| {
            let (beta, phases) = realization_draws(ps, cfg, i);
            run_realization_with(ps, control, beta, phases, times, &cfg.grid, &plans)
        })
        .collect::<Result<_>>()?;

    let (p2, p2_err) = mean_and_sem(&runs, |r| &r.m2);
    let (pi0, pi0_err) = mean_and_sem(&runs, |r| &r.pi0);
    let (m1, m1_err) = mean_and_sem(&runs, |r| &r.m1);
    Ok(ObservableSeries {
        control,
        control_value,
        times: times.to_vec(),
        p2,
        p2_err,
        pi0: pi0.into_iter().map(|x| x.clamp(0.0, 1.0)).collect(),
        pi0_err,
        n_realizations: cfg.n_realizations,
        m1,
        m1_err,
    })
}

fn mean_and_sem<F>(runs: &[RealizationSeries], field: F) -> (Vec<f64>, Vec<f64>)
where
    F: Fn(&RealizationSeries) -> &Vec<f64>,
{
    let n = runs.len() as f64;
    let len = field(&runs[0]).len();
    let mut mean = vec![0.0; len];
    for r in runs {
        for (m, x) in mean.iter_mut().zip(field(r)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; len];
    for r in runs {
        for ((v, x), m) in var.iter_mut().zip(field(r)).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let sem = var.iter().map(|v| (v / (n - 1.0) / n).sqrt()).collect();
    (mean, sem)
}
