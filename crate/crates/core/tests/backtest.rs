use inflcast::backtest::{
    cells, forecast_cell, per_forecaster_eval, run_backtest, stratify, training_length_sweep, write_run, BacktestConfig,
    Cell, DataSet, Method, Period, SpanBasis, SweepParameter, LOSSES_FILE, METADATA_FILE, SCORES_FILE,
};
use inflcast::data::{PanelRecord, SurveyPanel};
use inflcast::distributions::Gaussian;
use inflcast::scoring::crps_gaussian;
use inflcast::synthetic::{generate, SyntheticSpec};
use inflcast::{Error, Quarter};

fn q(s: &str) -> Quarter {
    s.parse().unwrap()
}

fn small_spec() -> SyntheticSpec {
    SyntheticSpec {
        first_month: "1984-01".parse().unwrap(),
        first_vintage: q("1994Q3"),
        last_vintage: q("2003Q2"),
        panel_start: q("1986Q1"),
        panel_end: q("2002Q4"),
        forecasters: 12,
        ..Default::default()
    }
}

fn small_config() -> BacktestConfig {
    let mut c = BacktestConfig::new(q("2003Q2"));
    c.test_end = q("2002Q1");
    c.training_window = 20;
    c
}

fn quick_methods(c: &mut BacktestConfig) {
    c.methods = vec![Method::Spf, Method::SpfMse, Method::Pnc, Method::Tnc, Method::Gm, Method::GmVa];
}

#[test]
fn reversed_span_is_a_config_error() {
    let data = generate(&small_spec()).unwrap();
    let mut c = small_config();
    c.test_start = q("2001Q1");
    c.test_end = q("2000Q1");
    assert!(matches!(run_backtest(&c, &data), Err(Error::Config(_))));
}

#[test]
fn horizons_target_origin_plus_h_minus_one() {
    let data = generate(&small_spec()).unwrap();
    let mut c = small_config();
    c.methods = vec![Method::Spf, Method::Pnc];
    let out = run_backtest(&c, &data).unwrap();
    for l in &out.losses {
        assert_eq!(l.target, l.origin + (l.horizon as i64 - 1));
        assert!(c.span().contains(l.target));
    }
    for h in 1..=5 {
        assert_eq!(out.table.get(Method::Spf, h).unwrap().n, c.span().quarters().count());
    }

    c.span_basis = SpanBasis::Origin;
    let out = run_backtest(&c, &data).unwrap();
    assert!(out.losses.iter().all(|l| c.span().contains(l.origin)));
}

#[test]
fn counts_and_abstentions_cover_every_cell() {
    let data = generate(&small_spec()).unwrap();
    let mut c = small_config();
    // early vintages are too short for a 60-quarter no-change window
    c.pnc_window_length = 60;
    quick_methods(&mut c);
    let out = run_backtest(&c, &data).unwrap();
    let n_cells = cells(&c).len();
    for row in &out.table.rows {
        assert_eq!(row.n + row.abstentions, c.span().quarters().count(), "{:?}", row.method);
    }
    let pnc_abst: Vec<_> = out.abstentions.iter().filter(|a| a.method == Method::Pnc).collect();
    assert!(!pnc_abst.is_empty());
    assert!(pnc_abst.iter().all(|a| a.reason.contains("quarterly rates")));
    assert_eq!(out.losses.len() + out.abstentions.len(), n_cells * c.methods.len());
    for h in 1..=5 {
        let row = out.table.get(Method::Pnc, h).unwrap();
        if let Some(dm) = &row.dm_mae {
            assert_eq!(dm.n, row.n);
        }
        assert!(out.table.get(Method::Spf, h).unwrap().dm_code_mae.is_none());
    }
}

#[test]
fn point_forecast_is_the_median() {
    let data = generate(&small_spec()).unwrap();
    let c = small_config();
    for cell in [Cell { origin: q("1998Q2"), horizon: 1 }, Cell { origin: q("2000Q4"), horizon: 4 }] {
        for (m, f) in forecast_cell(&c, &data, cell, &Method::ALL) {
            let f = f.unwrap_or_else(|e| panic!("{m}: {e}"));
            assert!((f.point - f.distribution.quantile(0.5).unwrap()).abs() < 1e-9, "{m}");
        }
    }
}

#[test]
fn identical_runs_write_identical_files() {
    let data = generate(&small_spec()).unwrap();
    let mut c = small_config();
    c.sub_periods = vec![Period::new(q("1995Q3"), q("1998Q4")), Period::new(q("1999Q1"), q("2002Q1"))];
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for (threads, dir) in [1, 4].into_iter().zip(&dirs) {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let out = pool.install(|| run_backtest(&c, &data)).unwrap();
        write_run(&out, &data, dir.path()).unwrap();
    }
    for f in [SCORES_FILE, LOSSES_FILE, METADATA_FILE] {
        let a = std::fs::read(dirs[0].path().join(f)).unwrap();
        let b = std::fs::read(dirs[1].path().join(f)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{f} differs");
    }
}

#[test]
fn stratification_identities() {
    let data = generate(&small_spec()).unwrap();
    let mut c = small_config();
    quick_methods(&mut c);
    let out = run_backtest(&c, &data).unwrap();

    let whole = stratify(&out, &[c.span()]).unwrap();
    assert_eq!(whole[0], out.table);

    let parts = [Period::new(q("1995Q3"), q("1997Q4")), Period::new(q("1998Q1"), q("2002Q1"))];
    let tables = stratify(&out, &parts).unwrap();
    for full in &out.table.rows {
        let (mut sum, mut n) = (0.0, 0);
        for t in &tables {
            let r = t.get(full.method, full.horizon).unwrap();
            sum += r.mae.unwrap_or(0.0) * r.n as f64;
            n += r.n;
        }
        assert_eq!(n, full.n);
        assert!((sum / n as f64 - full.mae.unwrap()).abs() < 1e-12);
    }

    assert!(matches!(
        stratify(&out, &[Period::new(q("1980Q1"), q("1980Q4"))]),
        Err(Error::EmptyPeriod(_))
    ));
}

#[test]
fn sweep_at_default_length_matches_default_run() {
    let data = generate(&small_spec()).unwrap();
    let c = small_config();
    let mut plain = c.clone();
    plain.methods = vec![Method::Pnc];
    plain.baseline = Method::Pnc;
    let base = run_backtest(&plain, &data).unwrap();
    let rows = training_length_sweep(&c, &data, SweepParameter::PncWindow, &[4, 20]).unwrap();
    assert!(rows.iter().filter(|r| r.length == 4).all(|r| r.status == "infeasible" && r.n == 0));
    for r in rows.iter().filter(|r| r.length == 20) {
        let b = base.table.get(Method::Pnc, r.horizon).unwrap();
        assert_eq!((r.mae, r.crps, r.n), (b.mae, b.crps, b.n));
    }

    let mut fitted = c.clone();
    fitted.methods = vec![Method::Spf, Method::Gm];
    assert!(training_length_sweep(&fitted, &data, SweepParameter::PncWindow, &[20]).is_err());
    let rows = training_length_sweep(&fitted, &data, SweepParameter::TrainingWindow, &[12, 20]).unwrap();
    assert!(rows.iter().all(|r| r.method == Method::Gm && r.status == "ok"));
}

#[test]
fn per_forecaster_completeness_and_perfect_forecaster() {
    let spec = small_spec();
    let data = generate(&spec).unwrap();
    let c = small_config();
    let period = Period::new(q("1999Q1"), q("2002Q1"));
    let mut records: Vec<PanelRecord> = data.panel.records().collect();
    // F001 loses one cell in scope; PERFECT knows every outcome
    records.retain(|r| !(r.forecaster_id == "F001" && r.origin == q("2000Q2") && r.horizon == 3));
    for h in 1..=5u8 {
        for k in period.quarters() {
            let origin = k - (h as i64 - 1);
            let y = data.cpi.realized(k, c.evaluation_vintage).unwrap();
            records.push(PanelRecord { origin, horizon: h, forecaster_id: "PERFECT".into(), value: y });
        }
    }
    let data = DataSet::new(data.cpi, SurveyPanel::from_records(records).unwrap());
    let eval = per_forecaster_eval(&c, &data, period, None).unwrap();
    let ids: Vec<&str> = eval.rows.iter().map(|r| r.forecaster_id.as_str()).collect();
    assert!(!ids.contains(&"F001"));
    for core in 2..=spec.core {
        assert!(ids.contains(&format!("F{core:03}").as_str()));
    }
    for r in eval.rows.iter().filter(|r| r.forecaster_id == "PERFECT") {
        assert_eq!(r.mae, 0.0);
        assert_eq!(r.n, period.quarters().count());
    }

    let only = ["F001".to_string()];
    let none = per_forecaster_eval(&c, &data, period, Some(&only)).unwrap();
    assert!(none.rows.is_empty());
    assert!(none.note.is_some());
}

// Serially independent rates with a known standard deviation, an unbiased
// panel and no revisions.
fn white_noise() -> (DataSet, BacktestConfig, f64) {
    let spec = SyntheticSpec {
        seed: 11,
        first_month: "1946-01".parse().unwrap(),
        first_vintage: q("1958Q1"),
        last_vintage: q("2012Q2"),
        panel_start: q("1950Q1"),
        panel_end: q("2011Q4"),
        forecasters: 8,
        persistence: 0.0,
        shock_sd: 1.5,
        revision_sd: 0.0,
        ..Default::default()
    };
    let mut c = BacktestConfig::new(q("2012Q2"));
    c.test_start = q("1965Q1");
    c.methods = vec![Method::Spf, Method::Pnc, Method::Tnc];
    (generate(&spec).unwrap(), c, spec.shock_sd)
}

#[test]
fn white_noise_no_change_comparison() {
    let (data, c, sd) = white_noise();
    let out = run_backtest(&c, &data).unwrap();
    // the true predictive distribution scored on the same outcomes
    let truth = Gaussian::new(3.0, sd).unwrap();
    let ideal = c.span().quarters().map(|k| crps_gaussian(&truth, data.cpi.realized(k, c.evaluation_vintage).unwrap())).sum::<f64>()
        / c.span().quarters().count() as f64;
    assert!((ideal / (sd / std::f64::consts::PI.sqrt()) - 1.0).abs() < 0.15);
    for h in 1..=5u8 {
        let pnc = out.table.get(Method::Pnc, h).unwrap().crps.unwrap();
        let tnc = out.table.get(Method::Tnc, h).unwrap().crps.unwrap();
        if h >= 2 {
            assert!(pnc < tnc, "h={h}: pnc {pnc} tnc {tnc}");
        }
        assert!((pnc / ideal - 1.0).abs() < 0.08, "h={h}: pnc {pnc} ideal {ideal}");
    }

    let sweep = training_length_sweep(&c, &data, SweepParameter::PncWindow, &[8, 20, 40]).unwrap();
    let crps_at = |len: usize| -> f64 {
        let rows: Vec<f64> = sweep.iter().filter(|r| r.length == len).map(|r| r.crps.unwrap()).collect();
        rows.iter().sum::<f64>() / rows.len() as f64
    };
    let (short, mid, long) = (crps_at(8), crps_at(20), crps_at(40));
    assert!(long < short, "longer windows should approach the ideal: {short} {mid} {long}");
    assert!((long - ideal).abs() < (short - ideal).abs());
    for v in [short, mid, long] {
        assert!((v / ideal - 1.0).abs() < 0.15, "curve not flat: {short} {mid} {long}");
    }
}
