use tori_core::lab::{
    emit_plot_data, fit_scaling, preset_names, read_plot_data, run_escape_sweep, run_pipeline,
    synthetic_records, ExperimentConfig, FitKind, FitLaw, FitPoint, StageStatus, SweepResult,
    PIPELINE_STAGES, PLOT_CURVE_POINTS,
};

#[test]
fn every_preset_loads_and_validates() {
    for name in preset_names() {
        let cfg = ExperimentConfig::preset(name).unwrap();
        cfg.validate().unwrap();
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(again, cfg, "{name}");
    }
    assert!(ExperimentConfig::preset("no-such-preset").is_err());
}

#[test]
fn config_rejects_bad_input() {
    let base = "omega = [1.0, 1.5]\nI_star = [0.0, 0.0]\n[hamiltonian]\nterms = []\n";
    assert!(ExperimentConfig::from_toml_str(base).is_ok());
    assert!(ExperimentConfig::from_toml_str(&format!("bogus = 1\n{base}")).is_err());
    assert!(ExperimentConfig::from_toml_str(&format!("r_grid = [0.1, 0.2]\n{base}")).is_err());
    assert!(ExperimentConfig::from_toml_str(&format!("ensemble_size = 0\n{base}")).is_err());
}

#[test]
fn config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.toml");
    let cfg = ExperimentConfig::preset("pendulum").unwrap();
    std::fs::write(&path, cfg.to_toml_string().unwrap()).unwrap();
    assert_eq!(ExperimentConfig::from_path(&path).unwrap(), cfg);
}

#[test]
fn double_exp_fit_recovers_synthetic_law() {
    let grid = [0.4, 0.2, 0.1, 0.05];
    let records = synthetic_records(&grid, 0.5, 0.5, 5);
    let res = SweepResult::from_records(None, 0, &grid, records);
    let fit = &res.double_exp_fit;
    assert_eq!(fit.fit_kind, FitKind::DoubleExpLaw);
    assert!((fit.fitted_u.unwrap() - 0.5).abs() < 1e-9);
    assert!((fit.fitted_c.unwrap() - 0.5).abs() < 1e-9);
    assert!(!fit.extrapolative);
}

#[test]
fn fit_needs_two_uncensored_points() {
    let pts = vec![
        FitPoint { r: 0.4, log_t: 10.0, censored: false },
        FitPoint { r: 0.2, log_t: 12.0, censored: true },
    ];
    let fit = fit_scaling(&pts, FitLaw::ExpLaw);
    assert_eq!(fit.fit_kind, FitKind::Insufficient);
    assert!(fit.fitted_u.is_none());
    assert_eq!(fit.censored_count, 1);
}

#[test]
fn plot_data_round_trip() {
    let grid = [0.4, 0.2, 0.1];
    let res = SweepResult::from_records(None, 0, &grid, synthetic_records(&grid, 1.0, 0.5, 3));
    let mut buf = Vec::new();
    emit_plot_data(Some(&res), &mut buf).unwrap();
    let rows = read_plot_data(buf.as_slice()).unwrap();
    assert_eq!(rows.len(), grid.len() + PLOT_CURVE_POINTS);
    for (row, s) in rows.iter().zip(&res.summaries) {
        assert_eq!(row.kind, "data");
        let want = s.median_t.ln();
        assert!((row.median_log_t.unwrap() - want).abs() < 1e-12 * want);
        assert!((row.fitted_log_t.unwrap() - want).abs() < 1e-8 * want);
    }
    let mut empty = Vec::new();
    emit_plot_data(None, &mut empty).unwrap();
    assert!(read_plot_data(empty.as_slice()).unwrap().is_empty());
}

#[test]
fn sweep_is_independent_of_thread_count() {
    let mut cfg = ExperimentConfig::preset("pendulum").unwrap();
    cfg.escape.budget_steps = 20_000;
    cfg.ensemble_size = 4;
    let a = run_escape_sweep(&cfg).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b = pool.install(|| run_escape_sweep(&cfg).unwrap());
    let lines = |r: &SweepResult| {
        let mut v = Vec::new();
        r.write_jsonl(&mut v).unwrap();
        v
    };
    assert_eq!(lines(&a), lines(&b));
    assert_eq!(a.records.len(), 16);
}

#[test]
fn convex_pipeline_runs_every_stage() {
    let cfg = ExperimentConfig::preset("golden-convex").unwrap();
    let report = run_pipeline(&cfg).unwrap();
    let stages: Vec<&str> = report.stages.iter().map(|s| s.stage.as_str()).collect();
    assert_eq!(stages, PIPELINE_STAGES);
    assert!(report.stages.iter().all(|s| s.status == StageStatus::Ok), "{:?}", report.stages);
    assert!(report.steepness.as_ref().unwrap().accepted);
    assert!((report.exponents.as_ref().unwrap().u - 0.5).abs() < 1e-15);
    assert!(report.comparison.is_some());
}

#[test]
fn saddle_pipeline_stops_at_steepness() {
    let report = run_pipeline(&ExperimentConfig::preset("saddle").unwrap()).unwrap();
    assert_eq!(report.failed_stage(), Some("steepness"));
    let v = report.steepness.unwrap();
    assert!(!v.accepted && v.witness.is_some());
    assert!(report.stages[3..].iter().all(|s| s.status == StageStatus::Skipped));
}

#[test]
fn resonant_pipeline_stops_at_birkhoff() {
    let report = run_pipeline(&ExperimentConfig::preset("resonant").unwrap()).unwrap();
    assert_eq!(report.failed_stage(), Some("birkhoff"));
    let msg = report.stages[1].message.clone().unwrap();
    assert!(msg.contains("small divisor"), "{msg}");
}
