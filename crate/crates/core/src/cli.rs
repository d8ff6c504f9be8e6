//! Command-line pipeline: simulate, analyze, universality, presets, synth.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analysis::{analyze, Analysis, AnalysisConfig};
use crate::baselines::{
    classical_diffusion, linear_grid, synth_scaling_data, FSpec, PhaseMode, SynthDesign, XiSpec,
};
use crate::crit::{
    reported_table, universality_report, CriticalFit, CrossingEstimate, NuEstimate,
    UniversalityReport,
};
use crate::engine::{
    log_schedule, run_ensemble, EnsembleConfig, GridConfig, ObservableSeries, DEFAULT_MAX_M,
};
use crate::error::{Error, Result};
use crate::io::{
    fmt_f64, read_json, unix_now, write_json, write_point, write_table, PointRecord, RunKind,
    RunManifest, SeriesSidecar, CODE_VERSION,
};
use crate::model::{
    presets, ControlPath, ControlPoint, ParameterSet, PathCoordinate, DEFAULT_KICKS,
};
use crate::plot::{render, Layer};
use crate::rng::derive_seed;
use crate::scaling::{lambda_series, Branch, LambdaSource, ScalingResult, TimeWindow};

pub const OUTPUT_ROOT_ENV: &str = "QPKR_OUTPUT_ROOT";
pub const DEFAULT_POINTS: usize = 20;
pub const DEFAULT_REALIZATIONS: usize = 1024;
pub const DEFAULT_PER_DECADE: usize = 20;
pub const DEFAULT_REPLICAS: usize = 100;
pub const ANALYSIS_DIR: &str = "analysis";
/// ν of the numerical reference line in the universality plot.
pub const REFERENCE_NU: f64 = 1.58;

#[derive(Debug, Parser)]
#[command(
    name = "qpkr",
    version,
    about = "Quasi-periodic kicked rotor: simulation and finite-time scaling"
)]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a sweep along a parameter set's control path.
    Simulate(SimulateArgs),
    /// Collapse a run, fit the critical law and bootstrap the errors.
    Analyze(AnalyzeArgs),
    /// Combine exponents of several analyzed runs.
    Universality(UniversalityArgs),
    /// List the built-in parameter sets.
    Presets(PresetsArgs),
    /// Oracle data sets.
    #[command(subcommand)]
    Synth(SynthCommand),
}

#[derive(Debug, Clone, Default, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub preset: Option<String>,
    /// TOML file with the same keys as the flags; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub realizations: Option<usize>,
    #[arg(long)]
    pub kicks: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Momentum lattice half-width M.
    #[arg(long)]
    pub grid_m: Option<usize>,
    /// Always evolve on the full lattice.
    #[arg(long)]
    pub fixed_grid: bool,
    /// Recording times per decade of kicks.
    #[arg(long)]
    pub per_decade: Option<usize>,
    /// Analysis window stored in the manifest: paper, default or T_MIN:T_MAX.
    #[arg(long)]
    pub window: Option<TimeWindow>,
    /// Keep the preset's modulation phases instead of drawing them.
    #[arg(long)]
    pub no_random_phases: bool,
    #[arg(long)]
    pub dry_run: bool,
    /// Continue an interrupted run in the output directory.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Parent of the default output directory.
    #[arg(long, env = OUTPUT_ROOT_ENV)]
    pub output_root: Option<PathBuf>,
}

/// Keys accepted in a simulate config file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateFile {
    pub preset: Option<String>,
    pub params: Option<ParameterSet>,
    pub points: Option<usize>,
    pub realizations: Option<usize>,
    pub kicks: Option<usize>,
    pub seed: Option<u64>,
    pub grid_m: Option<usize>,
    pub adaptive_grid: Option<bool>,
    pub per_decade: Option<usize>,
    pub window: Option<String>,
    pub random_phases: Option<bool>,
    pub out: Option<PathBuf>,
}

/// Fully resolved simulate request.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulateOptions {
    pub preset: Option<String>,
    pub params: ParameterSet,
    pub points: usize,
    pub realizations: usize,
    pub seed: u64,
    pub grid: GridConfig,
    pub per_decade: usize,
    pub window: TimeWindow,
    pub random_phases: bool,
    pub resume: bool,
    pub out: PathBuf,
}

fn default_window(kicks: usize) -> TimeWindow {
    TimeWindow {
        t_min: (kicks / 10)
            .max(TimeWindow::PAPER.t_min)
            .min(kicks.saturating_sub(1).max(1)),
        t_max: kicks,
    }
}

impl SimulateArgs {
    pub fn resolve(&self) -> Result<SimulateOptions> {
        let file: SimulateFile = match &self.config {
            Some(p) => toml::from_str(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
            None => SimulateFile::default(),
        };
        let (preset, mut params) = match (&self.preset, &file.params, &file.preset) {
            (Some(label), _, _) | (None, None, Some(label)) => {
                (Some(label.clone()), ParameterSet::preset(label)?)
            }
            (None, Some(ps), _) => (None, ps.clone()),
            (None, None, None) => {
                return Err(Error::config(
                    "give --preset or a config file with [params]",
                ))
            }
        };
        params.n_kicks = self.kicks.or(file.kicks).unwrap_or(DEFAULT_KICKS);
        params.validate()?;
        let seed = self.seed.or(file.seed).unwrap_or(0);
        let grid = GridConfig {
            max_m: self.grid_m.or(file.grid_m).unwrap_or(DEFAULT_MAX_M),
            adaptive: !self.fixed_grid && file.adaptive_grid.unwrap_or(true),
        };
        grid.validate()?;
        let window = match (self.window, &file.window) {
            (Some(w), _) => w,
            (None, Some(w)) => w.parse()?,
            (None, None) => default_window(params.n_kicks),
        };
        if window.t_max > params.n_kicks {
            return Err(Error::config(format!(
                "window {window} extends past {} kicks",
                params.n_kicks
            )));
        }
        let out = match (&self.out, &file.out) {
            (Some(o), _) | (None, Some(o)) => o.clone(),
            (None, None) => self
                .output_root
                .clone()
                .unwrap_or_else(|| PathBuf::from("runs"))
                .join(format!("{}_seed{seed}", params.label)),
        };
        Ok(SimulateOptions {
            preset,
            params,
            points: self.points.or(file.points).unwrap_or(DEFAULT_POINTS),
            realizations: self
                .realizations
                .or(file.realizations)
                .unwrap_or(DEFAULT_REALIZATIONS),
            seed,
            grid,
            per_decade: self
                .per_decade
                .or(file.per_decade)
                .unwrap_or(DEFAULT_PER_DECADE),
            window,
            random_phases: !self.no_random_phases && file.random_phases.unwrap_or(true),
            resume: self.resume,
            out,
        })
    }
}

/// One planned sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlannedPoint {
    pub index: usize,
    pub s: f64,
    pub control: ControlPoint,
    pub control_value: f64,
}

pub fn sweep_plan(path: &ControlPath, points: usize) -> Result<Vec<PlannedPoint>> {
    path.sweep(points)?
        .into_iter()
        .enumerate()
        .map(|(index, (s, control))| {
            Ok(PlannedPoint {
                index,
                s,
                control,
                control_value: path.coordinate_value(s)?,
            })
        })
        .collect()
}

fn new_manifest(
    opts: &SimulateOptions,
    kind: RunKind,
    plan: &[PlannedPoint],
    times: Vec<usize>,
) -> RunManifest {
    let now = unix_now();
    RunManifest {
        kind,
        code_version: CODE_VERSION.to_string(),
        preset: opts.preset.clone(),
        params: opts.params.clone(),
        sweep: plan.iter().map(|p| p.control_value).collect(),
        n_realizations: opts.realizations,
        grid: opts.grid,
        seed: opts.seed,
        random_phases: opts.random_phases,
        times,
        window: opts.window,
        output_dir: opts.out.clone(),
        created_unix: now,
        updated_unix: now,
        points: vec![],
    }
}

fn same_plan(a: &RunManifest, b: &RunManifest) -> bool {
    a.kind == b.kind
        && a.params == b.params
        && a.sweep == b.sweep
        && a.n_realizations == b.n_realizations
        && a.grid == b.grid
        && a.seed == b.seed
        && a.random_phases == b.random_phases
        && a.times == b.times
}

/// Run (or resume) a sweep, writing one CSV and sidecar per point and the
/// manifest after every point.
pub fn cmd_simulate(opts: &SimulateOptions) -> Result<PathBuf> {
    if opts.realizations < 2 {
        return Err(Error::config("at least 2 realizations are required"));
    }
    if opts.per_decade == 0 {
        return Err(Error::config("per-decade must be at least 1"));
    }
    let plan = sweep_plan(&opts.params.path, opts.points)?;
    let times = log_schedule(opts.params.n_kicks, opts.per_decade);
    let dir = &opts.out;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let fresh = new_manifest(opts, RunKind::Quantum, &plan, times.clone());

    let mut manifest = if RunManifest::path(dir).exists() {
        if !opts.resume {
            return Err(Error::config(format!(
                "{} already holds a run; pass --resume or choose another --out",
                dir.display()
            )));
        }
        let old = RunManifest::load(dir)?;
        if !same_plan(&old, &fresh) {
            return Err(Error::config(
                "resume: the existing run was made with different settings",
            ));
        }
        let mut kept = old.clone();
        kept.points.retain(|p| match old.check_point(dir, p) {
            Ok(()) => true,
            Err(e) => {
                log::warn!("point {} will be recomputed: {e}", p.index);
                false
            }
        });
        kept
    } else {
        fresh
    };

    for p in &plan {
        if manifest.points.iter().any(|r| r.index == p.index) {
            continue;
        }
        let seed = derive_seed(opts.seed, p.index as u64);
        let cfg = EnsembleConfig {
            n_realizations: opts.realizations,
            seed,
            random_phases: opts.random_phases,
            grid: opts.grid,
        };
        log::info!(
            "point {}/{}: {} ({})",
            p.index + 1,
            plan.len(),
            p.control,
            p.control_value
        );
        let obs = run_ensemble(&opts.params, p.control, p.control_value, &times, &cfg)?;
        let sidecar = SeriesSidecar {
            kind: RunKind::Quantum,
            params: opts.params.clone(),
            control: p.control,
            control_value: p.control_value,
            seed,
            n_realizations: opts.realizations,
            grid: opts.grid,
            transform_len: opts.grid.transform_len(),
            random_phases: opts.random_phases,
            code_version: CODE_VERSION.to_string(),
        };
        let record = write_point(dir, p.index, p.s, &obs, &sidecar)?;
        manifest.points.push(record);
        manifest.points.sort_by_key(|r| r.index);
        manifest.updated_unix = unix_now();
        manifest.save(dir)?;
    }
    manifest.save(dir)?;
    Ok(dir.clone())
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    /// Run directory written by `simulate` or `synth scaling`.
    pub run: PathBuf,
    /// Observable behind Λ: p2 or pi0.
    #[arg(long, default_value = "p2")]
    pub source: LambdaSource,
    /// paper, default or T_MIN:T_MAX (default: the run's window).
    #[arg(long)]
    pub window: Option<TimeWindow>,
    /// Bootstrap replicas; 0 disables.
    #[arg(long, default_value_t = DEFAULT_REPLICAS)]
    pub bootstrap: usize,
    /// Bootstrap seed (default: derived from the run seed).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Control value of the series whose ln ξ is pinned to 0.
    #[arg(long)]
    pub gauge_ref: Option<f64>,
    /// Also render SVG plots.
    #[arg(long)]
    pub svg: bool,
    /// Output directory (default: RUN/analysis).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Contents of `critical.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriticalReport {
    pub label: String,
    pub params: ParameterSet,
    pub source: LambdaSource,
    pub window: TimeWindow,
    pub bootstrap_seed: u64,
    pub crossing: CrossingEstimate,
    pub collapse_chi2_per_dof: f64,
    pub collapse_sweeps: usize,
    pub xi_errors: String,
    pub fit: CriticalFit,
}

pub const CRITICAL_FILE: &str = "critical.json";

fn csv_branch(b: Branch) -> &'static str {
    match b {
        Branch::Localized => "localized",
        Branch::Diffusive => "diffusive",
        Branch::CriticalAmbiguous => "critical-ambiguous",
    }
}

fn curve_points(scaling: &ScalingResult, branch: Branch) -> Vec<(f64, f64)> {
    let zs: Vec<f64> = scaling
        .f_samples
        .iter()
        .filter(|s| s.branch == branch)
        .map(|s| s.z)
        .collect();
    let (lo, hi) = zs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &z| {
            (a.min(z), b.max(z))
        });
    if zs.is_empty() {
        return vec![];
    }
    linear_grid(lo, hi, 200)
        .into_iter()
        .map(|z| (z, scaling.eval_f(branch, z)))
        .collect()
}

/// Collapse and fit a complete run directory and write the result files.
pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<Analysis> {
    let manifest = RunManifest::load(&args.run)?;
    manifest.validate(&args.run)?;
    let window = args.window.unwrap_or(manifest.window);
    let observables = manifest.load_series(&args.run)?;
    let series = observables
        .iter()
        .map(|o| lambda_series(o, window, args.source))
        .collect::<Result<Vec<_>>>()?;
    let seed = args
        .seed
        .unwrap_or_else(|| derive_seed(manifest.seed, u64::MAX));
    let cfg = AnalysisConfig {
        gauge_ref: args.gauge_ref,
        replicas: args.bootstrap,
        seed,
        ..Default::default()
    };
    let analysis = analyze(&series, &cfg)?;

    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.run.join(ANALYSIS_DIR));
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let sc = &analysis.scaling;
    let fit = &analysis.fit;

    write_table(
        &out.join("lambda.csv"),
        &["control", "t", "ln_t", "ln_lambda", "ln_lambda_err"],
        series.iter().flat_map(|s| {
            (0..s.len()).map(move |i| {
                vec![
                    fmt_f64(s.control_value),
                    s.times[i].to_string(),
                    fmt_f64((s.times[i] as f64).ln()),
                    fmt_f64(s.lambda[i].ln()),
                    fmt_f64(s.lambda_err[i]),
                ]
            })
        }),
    )?;
    write_table(
        &out.join("scaling_samples.csv"),
        &[
            "z",
            "ln_lambda",
            "ln_lambda_err",
            "fitted",
            "branch",
            "control",
            "t",
        ],
        sc.f_samples.iter().map(|s| {
            vec![
                fmt_f64(s.z),
                fmt_f64(s.ln_lambda),
                fmt_f64(s.ln_lambda_err),
                fmt_f64(s.fitted),
                csv_branch(s.branch).to_string(),
                fmt_f64(s.control_value),
                s.t.to_string(),
            ]
        }),
    )?;
    let loc = curve_points(sc, Branch::Localized);
    let dif = curve_points(sc, Branch::Diffusive);
    write_table(
        &out.join("scaling_curve.csv"),
        &["branch", "z", "f"],
        loc.iter()
            .map(|p| (Branch::Localized, p))
            .chain(dif.iter().map(|p| (Branch::Diffusive, p)))
            .map(|(b, &(z, f))| vec![csv_branch(b).to_string(), fmt_f64(z), fmt_f64(f)]),
    )?;
    write_table(
        &out.join("xi.csv"),
        &[
            "control",
            "xi",
            "ln_xi",
            "ln_xi_err",
            "branch",
            "classified",
            "slope",
            "slope_err",
            "isolated",
            "xi_fit",
        ],
        sc.xi.iter().map(|e| {
            vec![
                fmt_f64(e.control_value),
                fmt_f64(e.xi),
                fmt_f64(e.ln_xi),
                fmt_f64(e.ln_xi_err),
                csv_branch(e.branch).to_string(),
                csv_branch(e.classified).to_string(),
                fmt_f64(e.slope),
                fmt_f64(e.slope_err),
                e.isolated.to_string(),
                fmt_f64(1.0 / fit.inverse_xi(e.control_value)),
            ]
        }),
    )?;
    let (q_lo, q_hi) = (sc.xi[0].control_value, sc.xi[sc.xi.len() - 1].control_value);
    let fit_curve: Vec<(f64, f64)> = linear_grid(q_lo, q_hi, 400)
        .into_iter()
        .map(|q| (q, 1.0 / fit.inverse_xi(q)))
        .collect();
    write_table(
        &out.join("xi_fit.csv"),
        &["control", "xi_fit"],
        fit_curve.iter().map(|&(q, x)| vec![fmt_f64(q), fmt_f64(x)]),
    )?;
    write_json(&out.join("scaling.json"), sc)?;
    let report = CriticalReport {
        label: manifest.params.label.clone(),
        params: manifest.params.clone(),
        source: args.source,
        window,
        bootstrap_seed: seed,
        crossing: analysis.crossing.clone(),
        collapse_chi2_per_dof: sc.chi2_per_dof,
        collapse_sweeps: sc.sweeps,
        xi_errors: analysis.xi_errors.clone(),
        fit: fit.clone(),
    };
    write_json(&out.join(CRITICAL_FILE), &report)?;

    if args.svg {
        let samples = |b: Branch| -> Vec<(f64, f64)> {
            sc.f_samples
                .iter()
                .filter(|s| s.branch == b)
                .map(|s| (s.z, s.ln_lambda))
                .collect()
        };
        let svg = render(
            "scaling collapse",
            "ln xi - (1/3) ln t",
            "ln Lambda",
            &[
                Layer::points(samples(Branch::Localized)),
                Layer::points(samples(Branch::Diffusive)),
                Layer::line(loc),
                Layer::line(dif),
            ],
        );
        fs::write(out.join("scaling.svg"), svg)
            .map_err(|e| Error::io(out.join("scaling.svg"), e))?;
        let xi_pts: Vec<(f64, f64)> = sc.xi.iter().map(|e| (e.control_value, e.xi)).collect();
        let svg = render(
            "xi",
            "control",
            "xi",
            &[Layer::points(xi_pts), Layer::line(fit_curve)],
        );
        fs::write(out.join("xi.svg"), svg).map_err(|e| Error::io(out.join("xi.svg"), e))?;
    }
    Ok(analysis)
}

#[derive(Debug, Clone, Default, Args)]
pub struct UniversalityArgs {
    /// Analyzed run directories (or their analysis directories).
    pub runs: Vec<PathBuf>,
    /// Use the built-in published exponents instead of runs.
    #[arg(long)]
    pub from_table: bool,
    #[arg(long, default_value = "universality")]
    pub out: PathBuf,
}

pub fn load_critical(dir: &Path) -> Result<CriticalReport> {
    let direct = dir.join(CRITICAL_FILE);
    let nested = dir.join(ANALYSIS_DIR).join(CRITICAL_FILE);
    let path = if direct.exists() { direct } else { nested };
    if !path.exists() {
        return Err(Error::config(format!(
            "{} has not been analyzed (no {CRITICAL_FILE})",
            dir.display()
        )));
    }
    read_json(&path)
}

/// Weighted mean of ν across sets, written as table and plot data.
pub fn cmd_universality(args: &UniversalityArgs) -> Result<UniversalityReport> {
    struct Row {
        params: ParameterSet,
        q_c: f64,
        q_c_err: f64,
    }
    let mut rows: Vec<Row> = Vec::new();
    let mut estimates: Vec<NuEstimate> = Vec::new();
    if args.from_table {
        for (p, e) in presets().into_iter().zip(reported_table()) {
            rows.push(Row {
                params: p.params,
                q_c: p.reported_qc,
                q_c_err: f64::NAN,
            });
            estimates.push(e);
        }
    }
    for dir in &args.runs {
        let r = load_critical(dir)?;
        estimates.push(NuEstimate {
            label: r.label.clone(),
            nu: r.fit.nu,
            sigma: r.fit.nu_sigma(),
        });
        rows.push(Row {
            params: r.params,
            q_c: r.fit.q_c,
            q_c_err: r.fit.q_c_sigma(),
        });
    }
    let report = universality_report(&estimates)?;

    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let opt = |x: f64| {
        if x.is_finite() {
            fmt_f64(x)
        } else {
            String::new()
        }
    };
    write_table(
        &args.out.join("table1.csv"),
        &[
            "label",
            "kbar",
            "omega2_cycles",
            "omega3_cycles",
            "path",
            "coordinate",
            "q_c",
            "q_c_err",
            "nu",
            "nu_err",
            "deviation",
            "flagged",
        ],
        rows.iter().zip(&report.entries).map(|(r, e)| {
            vec![
                e.label.clone(),
                fmt_f64(r.params.kbar),
                fmt_f64(r.params.omega2.cycles()),
                fmt_f64(r.params.omega3.cycles()),
                r.params.path.to_string(),
                r.params.path.coordinate.to_string(),
                opt(r.q_c),
                opt(r.q_c_err),
                fmt_f64(e.nu),
                fmt_f64(e.sigma),
                fmt_f64(e.deviation),
                e.flagged.to_string(),
            ]
        }),
    )?;
    write_table(
        &args.out.join("fig3.csv"),
        &[
            "index",
            "label",
            "nu",
            "sigma",
            "mean",
            "mean_err",
            "reference_nu",
        ],
        report.entries.iter().enumerate().map(|(i, e)| {
            vec![
                (i + 1).to_string(),
                e.label.clone(),
                fmt_f64(e.nu),
                fmt_f64(e.sigma),
                fmt_f64(report.mean),
                fmt_f64(report.mean_err),
                fmt_f64(REFERENCE_NU),
            ]
        }),
    )?;
    write_json(&args.out.join("universality.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Args)]
pub struct PresetsArgs {
    /// Print one preset as a TOML parameter set.
    #[arg(long)]
    pub toml: Option<String>,
}

pub fn presets_table() -> String {
    let mut s = String::from(
        "label  kbar  omega2/2pi  omega3/2pi  path                     coord  q_c    nu\n",
    );
    for p in presets() {
        let ps = &p.params;
        s.push_str(&format!(
            "{:<6} {:<5} {:<11} {:<11} {:<24} {:<6} {:<6} {:.2} +- {:.2}\n",
            ps.label,
            ps.kbar,
            ps.omega2.to_string(),
            ps.omega3.to_string(),
            ps.path.to_string(),
            ps.path.coordinate.to_string(),
            p.reported_qc,
            p.reported_nu,
            p.reported_nu_err
        ));
    }
    s
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// Λ data with a known ξ(q) law, written as a run directory.
    Scaling(SynthScalingArgs),
    /// Classical standard-map spread ⟨(p − p₀)²⟩ per kick.
    Classical(SynthClassicalArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SynthScalingArgs {
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 6.67)]
    pub q_c: f64,
    #[arg(long, default_value_t = 1.58)]
    pub nu: f64,
    #[arg(long, default_value_t = 0.01)]
    pub beta: f64,
    /// Relative noise on Λ.
    #[arg(long, default_value_t = 0.02)]
    pub noise: f64,
    #[arg(long, default_value_t = 4.0)]
    pub q_min: f64,
    #[arg(long, default_value_t = 9.0)]
    pub q_max: f64,
    #[arg(long, default_value_t = DEFAULT_POINTS)]
    pub points: usize,
    #[arg(long, default_value_t = DEFAULT_KICKS)]
    pub kicks: usize,
    #[arg(long, default_value_t = DEFAULT_PER_DECADE)]
    pub per_decade: usize,
    /// Piecewise-linear scaling function instead of the smooth one.
    #[arg(long)]
    pub linear: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Write synthetic Λ data as a run directory that `analyze` accepts.
///
/// `p2 = Λ t^{2/3}`; `pi0 ∝ p2^{-1/2}`, scaled to stay within [0, 1].
pub fn cmd_synth_scaling(args: &SynthScalingArgs) -> Result<PathBuf> {
    let f = if args.linear {
        FSpec::Linear {
            localized_intercept: 0.0,
            diffusive_intercept: 0.0,
        }
    } else {
        FSpec::Tip {
            critical_ln_lambda: 0.4,
            mu: 1.58,
        }
    };
    let xi = XiSpec::Critical {
        alpha: args.alpha,
        q_c: args.q_c,
        nu: args.nu,
        beta: args.beta,
    };
    let mut params = ParameterSet::preset("A")?;
    params.label = "synthetic".into();
    params.n_kicks = args.kicks;
    params.path = ControlPath::new(
        ControlPoint::new(args.q_min, 0.0),
        ControlPoint::new(args.q_max, 0.0),
        PathCoordinate::K,
    )?;
    let opts = SimulateOptions {
        preset: None,
        params: params.clone(),
        points: args.points,
        realizations: 0,
        seed: args.seed,
        grid: GridConfig::default(),
        per_decade: args.per_decade,
        window: default_window(args.kicks),
        random_phases: false,
        resume: false,
        out: args.out.clone(),
    };
    let plan = sweep_plan(&params.path, args.points)?;
    let times = log_schedule(args.kicks, args.per_decade);
    let design = SynthDesign {
        controls: plan.iter().map(|p| p.control_value).collect(),
        times: times.clone(),
    };
    let series = synth_scaling_data(&f, &xi, &design, args.noise, args.seed)?;

    let p2: Vec<Vec<f64>> = series
        .iter()
        .map(|s| {
            s.times
                .iter()
                .zip(&s.lambda)
                .map(|(&t, l)| l * (t as f64).powf(2.0 / 3.0))
                .collect()
        })
        .collect();
    let scale = p2.iter().flatten().fold(1.0f64, |m, &v| m.min(v.sqrt()));

    let dir = &args.out;
    if RunManifest::path(dir).exists() {
        return Err(Error::config(format!(
            "{} already holds a run",
            dir.display()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = new_manifest(&opts, RunKind::Synthetic, &plan, times.clone());
    for ((p, s), p2) in plan.iter().zip(&series).zip(p2) {
        let pi0: Vec<f64> = p2.iter().map(|v| scale / v.sqrt()).collect();
        let obs = ObservableSeries {
            control: p.control,
            control_value: p.control_value,
            times: times.clone(),
            p2_err: p2.iter().map(|v| v * args.noise).collect(),
            pi0_err: pi0.iter().map(|v| v * args.noise / 2.0).collect(),
            p2,
            pi0,
            n_realizations: 0,
            m1: vec![],
            m1_err: vec![],
        };
        let sidecar = SeriesSidecar {
            kind: RunKind::Synthetic,
            params: params.clone(),
            control: p.control,
            control_value: s.control_value,
            seed: args.seed,
            n_realizations: 0,
            grid: opts.grid,
            transform_len: 0,
            random_phases: false,
            code_version: CODE_VERSION.to_string(),
        };
        let record: PointRecord = write_point(dir, p.index, p.s, &obs, &sidecar)?;
        manifest.points.push(record);
    }
    manifest.updated_unix = unix_now();
    manifest.save(dir)?;
    write_json(
        &dir.join("truth.json"),
        &serde_json::json!({ "f": f, "xi": xi, "noise": args.noise }),
    )?;
    Ok(dir.clone())
}

#[derive(Debug, Clone, Args)]
pub struct SynthClassicalArgs {
    #[arg(long, default_value = "A")]
    pub preset: String,
    #[arg(long, short = 'k')]
    pub k: f64,
    #[arg(long, default_value_t = 0.0)]
    pub eps: f64,
    /// Override the preset's effective Planck constant.
    #[arg(long)]
    pub kbar: Option<f64>,
    #[arg(long, default_value_t = 100)]
    pub kicks: usize,
    #[arg(long, default_value_t = 100_000)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep the preset's modulation phases instead of drawing them.
    #[arg(long)]
    pub fixed_phases: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Sidecar of a classical oracle run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassicalSidecar {
    pub kind: RunKind,
    pub params: ParameterSet,
    pub k: f64,
    pub eps: f64,
    pub random_phases: bool,
    pub count: usize,
    pub seed: u64,
    pub code_version: String,
}

/// Write `classical.csv` and its sidecar into the output directory.
pub fn cmd_synth_classical(args: &SynthClassicalArgs) -> Result<PathBuf> {
    let mut ps = ParameterSet::preset(&args.preset)?;
    if let Some(kbar) = args.kbar {
        ps.kbar = kbar;
        ps.validate()?;
    }
    let phases = if args.fixed_phases {
        PhaseMode::Fixed
    } else {
        PhaseMode::Random
    };
    let c = classical_diffusion(
        &ps, args.k, args.eps, phases, args.kicks, args.count, args.seed,
    )?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    write_table(
        &args.out.join("classical.csv"),
        &["t", "p2", "p2_err"],
        (0..c.times.len()).map(|i| {
            vec![
                c.times[i].to_string(),
                fmt_f64(c.p2[i]),
                fmt_f64(c.p2_err[i]),
            ]
        }),
    )?;
    let sidecar = ClassicalSidecar {
        kind: RunKind::Classical,
        params: ps,
        k: args.k,
        eps: args.eps,
        random_phases: !args.fixed_phases,
        count: args.count,
        seed: args.seed,
        code_version: CODE_VERSION.to_string(),
    };
    write_json(&args.out.join("classical.json"), &sidecar)?;
    Ok(args.out.clone())
}

/// Execute a parsed command line, printing a short summary.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => {
            let opts = a.resolve()?;
            if a.dry_run {
                println!(
                    "set {} ({} points, {} kicks)",
                    opts.params.label, opts.points, opts.params.n_kicks
                );
                println!("index  s         K         eps       control");
                for p in sweep_plan(&opts.params.path, opts.points)? {
                    println!(
                        "{:<6} {:<9.6} {:<9.6} {:<9.6} {:.6}",
                        p.index, p.s, p.control.k, p.control.eps, p.control_value
                    );
                }
                return Ok(());
            }
            let dir = cmd_simulate(&opts)?;
            println!("{}", dir.display());
        }
        Command::Analyze(a) => {
            let r = cmd_analyze(&a)?;
            let f = &r.fit;
            println!("q_c = {:.4} +- {:.4}", f.q_c, f.q_c_sigma());
            println!("nu  = {:.4} +- {:.4}", f.nu, f.nu_sigma());
            println!(
                "fit chi2/dof = {:.3}, collapse chi2/dof = {:.3}",
                f.chi2_per_dof, r.scaling.chi2_per_dof
            );
        }
        Command::Universality(a) => {
            let r = cmd_universality(&a)?;
            for e in &r.entries {
                let mark = if e.flagged { "  *" } else { "" };
                println!(
                    "{:<10} {:.3} +- {:.3}  ({:+.2} sigma){mark}",
                    e.label, e.nu, e.sigma, e.deviation
                );
            }
            println!(
                "weighted mean nu = {:.4} +- {:.4} (spread {:.4})",
                r.mean, r.mean_err, r.spread
            );
        }
        Command::Presets(a) => match a.toml {
            Some(label) => print!("{}", ParameterSet::preset(&label)?.to_toml()),
            None => print!("{}", presets_table()),
        },
        Command::Synth(SynthCommand::Scaling(a)) => {
            println!("{}", cmd_synth_scaling(&a)?.display())
        }
        Command::Synth(SynthCommand::Classical(a)) => {
            println!("{}", cmd_synth_classical(&a)?.display())
        }
    }
    Ok(())
}
