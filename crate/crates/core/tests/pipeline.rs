use std::fs;
use std::path::Path;

use qpkr::cli::{
    cmd_analyze, cmd_simulate, cmd_synth_classical, cmd_synth_scaling, cmd_universality,
    load_critical, AnalyzeArgs, SimulateArgs, SynthClassicalArgs, SynthScalingArgs,
    UniversalityArgs,
};
use qpkr::io::{read_series_csv, RunManifest};
use qpkr::scaling::{collapse, lambda_series, Branch, CollapseConfig, LambdaSource, TimeWindow};
use qpkr::Error;

fn tiny_run(out: &Path, seed: u64) -> SimulateArgs {
    SimulateArgs {
        preset: Some("A".into()),
        points: Some(3),
        realizations: Some(8),
        kicks: Some(40),
        seed: Some(seed),
        per_decade: Some(10),
        out: Some(out.to_path_buf()),
        ..Default::default()
    }
}

fn synth(out: &Path, noise: f64, linear: bool, seed: u64) -> SynthScalingArgs {
    SynthScalingArgs {
        alpha: 0.05,
        q_c: 6.67,
        nu: 1.58,
        beta: 0.01,
        noise,
        q_min: 4.0,
        q_max: 9.0,
        points: 20,
        kicks: 1000,
        per_decade: 20,
        linear,
        seed,
        out: out.to_path_buf(),
    }
}

fn analyze_args(run: &Path, replicas: usize) -> AnalyzeArgs {
    AnalyzeArgs {
        run: run.to_path_buf(),
        source: LambdaSource::P2,
        window: None,
        bootstrap: replicas,
        seed: None,
        gauge_ref: None,
        svg: true,
        out: None,
    }
}

#[test]
fn simulate_writes_one_csv_per_point_and_a_valid_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    cmd_simulate(&tiny_run(&out, 42).resolve().unwrap()).unwrap();
    let m = RunManifest::load(&out).unwrap();
    m.validate(&out).unwrap();
    assert_eq!(m.points.len(), 3);
    assert_eq!(
        m.window,
        TimeWindow {
            t_min: 30,
            t_max: 40
        }
    );
    for p in &m.points {
        let c = read_series_csv(&out.join(&p.csv)).unwrap();
        assert_eq!(*c.times.last().unwrap(), 40);
        assert!(out.join(&p.sidecar).exists());
    }
    let series = m.load_series(&out).unwrap();
    assert_eq!(series[0].control_value, 4.0);
    assert_eq!(series[2].control_value, 8.0);
}

#[test]
fn rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    cmd_simulate(&tiny_run(&a, 7).resolve().unwrap()).unwrap();
    cmd_simulate(&tiny_run(&b, 7).resolve().unwrap()).unwrap();
    for p in RunManifest::load(&a).unwrap().points {
        assert_eq!(
            fs::read(a.join(&p.csv)).unwrap(),
            fs::read(b.join(&p.csv)).unwrap()
        );
        assert_eq!(
            fs::read(a.join(&p.sidecar)).unwrap(),
            fs::read(b.join(&p.sidecar)).unwrap()
        );
    }
}

#[test]
fn existing_run_needs_resume() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let args = tiny_run(&out, 1);
    cmd_simulate(&args.resolve().unwrap()).unwrap();
    assert!(matches!(
        cmd_simulate(&args.resolve().unwrap()),
        Err(Error::Config(_))
    ));

    let mut changed = args.clone();
    changed.resume = true;
    changed.realizations = Some(9);
    assert!(matches!(
        cmd_simulate(&changed.resolve().unwrap()),
        Err(Error::Config(_))
    ));
}

#[test]
fn resume_completes_a_partial_run() {
    let dir = tempfile::tempdir().unwrap();
    let (full, part) = (dir.path().join("full"), dir.path().join("part"));
    cmd_simulate(&tiny_run(&full, 3).resolve().unwrap()).unwrap();
    cmd_simulate(&tiny_run(&part, 3).resolve().unwrap()).unwrap();

    // drop the last point and damage another
    let mut m = RunManifest::load(&part).unwrap();
    let last = m.points.pop().unwrap();
    fs::remove_file(part.join(&last.csv)).unwrap();
    m.save(&part).unwrap();
    fs::write(part.join(&m.points[0].csv), "t,p2,p2_err,pi0,pi0_err\n").unwrap();
    assert!(matches!(m.validate(&part), Err(Error::Manifest(_))));

    let mut args = tiny_run(&part, 3);
    args.resume = true;
    cmd_simulate(&args.resolve().unwrap()).unwrap();
    let m = RunManifest::load(&part).unwrap();
    m.validate(&part).unwrap();
    for p in &m.points {
        assert_eq!(
            fs::read(full.join(&p.csv)).unwrap(),
            fs::read(part.join(&p.csv)).unwrap()
        );
    }
}

#[test]
fn tampered_file_blocks_analysis() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("syn");
    cmd_synth_scaling(&synth(&out, 0.02, false, 1)).unwrap();
    let m = RunManifest::load(&out).unwrap();
    let path = out.join(&m.points[5].csv);
    let text = fs::read_to_string(&path).unwrap().replacen('1', "2", 1);
    fs::write(&path, text).unwrap();
    assert!(matches!(
        cmd_analyze(&analyze_args(&out, 0)),
        Err(Error::Manifest(_))
    ));
    fs::remove_file(&path).unwrap();
    assert!(matches!(
        cmd_analyze(&analyze_args(&out, 0)),
        Err(Error::Manifest(_))
    ));
}

#[test]
fn noiseless_synthetic_analysis_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("syn");
    cmd_synth_scaling(&synth(&out, 0.0, true, 0)).unwrap();
    let a = cmd_analyze(&analyze_args(&out, 0)).unwrap();
    assert!(
        a.scaling.chi2_per_dof < 1e-6,
        "collapse {}",
        a.scaling.chi2_per_dof
    );
    assert!(a.fit.chi2_per_dof < 1e-6, "fit {}", a.fit.chi2_per_dof);
    assert!((a.fit.nu - 1.58).abs() < 1e-4 && (a.fit.q_c - 6.67).abs() < 1e-4);

    let analysis = out.join("analysis");
    for f in [
        "lambda.csv",
        "scaling_samples.csv",
        "scaling_curve.csv",
        "xi.csv",
        "xi_fit.csv",
        "scaling.json",
        "critical.json",
        "scaling.svg",
        "xi.svg",
    ] {
        assert!(analysis.join(f).exists(), "{f}");
    }
    let r = load_critical(&out).unwrap();
    assert_eq!(r.label, "synthetic");
}

#[test]
fn pi0_source_agrees_on_synthetic_data() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("syn");
    cmd_synth_scaling(&synth(&out, 0.0, true, 0)).unwrap();
    let mut args = analyze_args(&out, 0);
    args.source = LambdaSource::Pi0;
    args.svg = false;
    let a = cmd_analyze(&args).unwrap();
    assert!((a.fit.nu - 1.58).abs() < 1e-4, "{}", a.fit.nu);
}

#[test]
fn analysis_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("syn");
    cmd_synth_scaling(&synth(&out, 0.02, false, 4)).unwrap();
    let mut args = analyze_args(&out, 20);
    args.out = Some(dir.path().join("a1"));
    cmd_analyze(&args).unwrap();
    args.out = Some(dir.path().join("a2"));
    cmd_analyze(&args).unwrap();
    for f in ["critical.json", "xi.csv", "scaling_samples.csv"] {
        assert_eq!(
            fs::read(dir.path().join("a1").join(f)).unwrap(),
            fs::read(dir.path().join("a2").join(f)).unwrap()
        );
    }
}

#[test]
fn single_control_point_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("syn");
    let mut s = synth(&out, 0.0, true, 0);
    s.points = 2;
    cmd_synth_scaling(&s).unwrap();
    let mut m = RunManifest::load(&out).unwrap();
    m.points.truncate(1);
    m.sweep.truncate(1);
    m.save(&out).unwrap();
    assert!(matches!(
        cmd_analyze(&analyze_args(&out, 0)),
        Err(Error::Config(_))
    ));
}

#[test]
fn universality_over_analyzed_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut runs = vec![];
    for seed in 0..3 {
        let out = dir.path().join(format!("syn{seed}"));
        cmd_synth_scaling(&synth(&out, 0.02, false, seed)).unwrap();
        cmd_analyze(&analyze_args(&out, 20)).unwrap();
        runs.push(out);
    }
    let out = dir.path().join("u");
    let r = cmd_universality(&UniversalityArgs {
        runs: runs.clone(),
        from_table: false,
        out: out.clone(),
    })
    .unwrap();
    assert_eq!(r.entries.len(), 3);
    assert!((r.mean - 1.58).abs() < 0.05, "{}", r.mean);
    assert!(out.join("table1.csv").exists() && out.join("fig3.csv").exists());

    let one = UniversalityArgs {
        runs: runs[..1].to_vec(),
        from_table: false,
        out,
    };
    assert!(matches!(cmd_universality(&one), Err(Error::Config(_))));
}

#[test]
fn classical_oracle_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("classical");
    cmd_synth_classical(&SynthClassicalArgs {
        preset: "A".into(),
        k: 5.0,
        eps: 0.0,
        kbar: None,
        kicks: 5,
        count: 2000,
        seed: 1,
        fixed_phases: false,
        out: out.clone(),
    })
    .unwrap();
    let text = fs::read_to_string(out.join("classical.csv")).unwrap();
    assert!(text.starts_with("t,p2,p2_err\n1,"));
    assert_eq!(text.lines().count(), 6);
    let side = fs::read_to_string(out.join("classical.json")).unwrap();
    assert!(side.contains("\"kind\": \"classical\""));
}

#[test]
fn localized_xi_grows_toward_the_transition() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let args = SimulateArgs {
        preset: Some("A".into()),
        points: Some(12),
        realizations: Some(48),
        kicks: Some(400),
        seed: Some(5),
        out: Some(out.clone()),
        ..Default::default()
    };
    cmd_simulate(&args.resolve().unwrap()).unwrap();
    let m = RunManifest::load(&out).unwrap();
    let series: Vec<_> = m
        .load_series(&out)
        .unwrap()
        .iter()
        .map(|o| lambda_series(o, m.window, LambdaSource::P2).unwrap())
        .collect();
    let r = collapse(&series, None, &CollapseConfig::default()).unwrap();
    let loc: Vec<_> =
        r.xi.iter()
            .filter(|e| e.branch == Branch::Localized)
            .collect();
    assert!(loc.len() >= 3, "{} localized series", loc.len());
    for w in loc.windows(2) {
        let err = w[0].ln_xi_err.hypot(w[1].ln_xi_err);
        assert!(
            w[1].ln_xi >= w[0].ln_xi - 2.0 * err,
            "ln xi {} at {} then {} at {} (err {err})",
            w[0].ln_xi,
            w[0].control_value,
            w[1].ln_xi,
            w[1].control_value
        );
    }
}
