//! Rolling-origin backtest: forecasts, losses, score tables and DM codes.
//!
//! Every forecast issued at origin `t` sees only vintages released at or
//! before `t` and survey rounds up to `t`. Realized values for scoring come
//! from the evaluation vintage. Methods that cannot forecast a cell abstain
//! with a recorded reason instead of producing a value.

mod config;
mod report;

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{BacktestConfig, Method, Period, SpanBasis};
pub use report::{
    format_2dp, read_scores_csv, render_markdown, write_forecasters_csv, write_losses_csv, write_run,
    write_scores_csv, write_sweep_csv, RunMetadata, FORECASTERS_FILE, LOSSES_FILE, METADATA_FILE, SCORES_FILE,
    SWEEP_FILE,
};

use crate::data::{sha256_hex, CovariateRow, SurveyPanel, VintageStore};
use crate::error::{Error, Result};
use crate::estimation::{
    fit_gm_em, fit_hr_pair, FitReport, HrFitOptions, TrainingSet, MIN_TRAINING_ROWS,
};
use crate::forecasters::{
    gm_forecast, hr_forecast, probabilistic_no_change, spf_ensemble, spf_median_mse, traditional_no_change,
    Forecast, GmVariant, MseState,
};
use crate::quarter::Quarter;
use crate::scoring::{absolute_error, aggregate, crps, dm_test, DmResult, ScoreSeries};

pub const CPI_FILE: &str = "cpi_vintages.csv";
pub const PANEL_FILE: &str = "spf_panel.csv";

/// The two input stores.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    pub cpi: VintageStore,
    pub panel: SurveyPanel,
}

impl DataSet {
    pub fn new(cpi: VintageStore, panel: SurveyPanel) -> Self {
        DataSet { cpi, panel }
    }

    /// Reads `cpi_vintages.csv` and `spf_panel.csv` from `dir`.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        Ok(DataSet {
            cpi: VintageStore::from_csv_path(dir.join(CPI_FILE))?,
            panel: SurveyPanel::from_csv_path(dir.join(PANEL_FILE))?,
        })
    }

    /// Writes both stores in canonical form into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.cpi.write_csv(std::fs::File::create(dir.join(CPI_FILE))?)?;
        self.panel.write_csv(std::fs::File::create(dir.join(PANEL_FILE))?)?;
        Ok(())
    }

    /// SHA-256 of each store's canonical CSV.
    pub fn content_hashes(&self) -> Result<BTreeMap<String, String>> {
        let mut cpi = Vec::new();
        self.cpi.write_csv(&mut cpi)?;
        let mut panel = Vec::new();
        self.panel.write_csv(&mut panel)?;
        Ok(BTreeMap::from([
            (CPI_FILE.to_string(), sha256_hex(&cpi)),
            (PANEL_FILE.to_string(), sha256_hex(&panel)),
        ]))
    }
}

/// One forecast origin and horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub origin: Quarter,
    pub horizon: u8,
}

impl Cell {
    pub fn target(&self) -> Quarter {
        self.origin + (self.horizon as i64 - 1)
    }
}

/// Cells of the test span for one horizon, in chronological order.
pub fn cells_for(period: Period, horizon: u8, basis: SpanBasis) -> Vec<Cell> {
    period
        .quarters()
        .map(|k| Cell {
            origin: match basis {
                SpanBasis::Target => k - (horizon as i64 - 1),
                SpanBasis::Origin => k,
            },
            horizon,
        })
        .collect()
}

/// All cells of a run, horizon-major.
pub fn cells(config: &BacktestConfig) -> Vec<Cell> {
    config.horizons.iter().flat_map(|&h| cells_for(config.span(), h, config.span_basis)).collect()
}

/// The quarter a loss is filed under when selecting periods.
pub fn period_key(origin: Quarter, horizon: u8, basis: SpanBasis) -> Quarter {
    match basis {
        SpanBasis::Target => origin + (horizon as i64 - 1),
        SpanBasis::Origin => origin,
    }
}

/// Survey and no-change covariates for one origin; `realized` is looked up
/// in `vintage` when given.
pub fn covariate_row(
    data: &DataSet,
    origin: Quarter,
    horizon: u8,
    pnc_length: usize,
    vintage: Option<Quarter>,
) -> Result<CovariateRow> {
    let (mu_spf, sigma2_spf) = data.panel.spf_summary(origin, horizon)?;
    let pnc = data.cpi.pnc_window_backfilled(origin, pnc_length)?;
    let target = origin + (horizon as i64 - 1);
    Ok(CovariateRow {
        origin,
        horizon,
        mu_spf,
        sigma2_spf,
        mu_pnc: pnc.median(),
        sigma2_pnc: pnc.sample_variance(),
        realized: vintage.and_then(|v| data.cpi.realized(target, v).ok()),
    })
}

/// Training rows for a forecast issued at `origin`: the `training_window`
/// most recent origins whose targets are observed at `origin`, with realized
/// values from the vintage available then.
pub fn training_set(config: &BacktestConfig, data: &DataSet, origin: Quarter, horizon: u8) -> Result<TrainingSet> {
    let vintage = data.cpi.latest_vintage_at(origin)?;
    let last = origin - horizon as i64;
    let first = last - (config.training_window as i64 - 1);
    let rows: Vec<CovariateRow> = Quarter::range_inclusive(first, last)
        .filter_map(|s| covariate_row(data, s, horizon, config.covariate_pnc_length, Some(vintage)).ok())
        .filter(|r| r.realized.is_some())
        .collect();
    if rows.len() < MIN_TRAINING_ROWS {
        return Err(Error::InsufficientTraining { rows: rows.len(), needed: MIN_TRAINING_ROWS });
    }
    TrainingSet::new(rows, horizon, config.training_window)
}

/// Fits the model behind a postprocessing method at one cell.
pub fn fit_cell(config: &BacktestConfig, data: &DataSet, cell: Cell, method: Method) -> Result<FitReport> {
    let train = training_set(config, data, cell.origin, cell.horizon)?;
    match method {
        Method::Hr1 => Ok(fit_hr_pair(&train, &HrFitOptions::default())?.0),
        Method::Hr2 => Ok(fit_hr_pair(&train, &HrFitOptions::default())?.1),
        Method::Gm => fit_gm_em(&train, GmVariant::Standard),
        Method::GmVa => fit_gm_em(&train, GmVariant::VarianceAdjusted),
        _ => Err(Error::Unsupported("only hr1, hr2, gm and gmva are fitted")),
    }
}

/// Forecasts of several methods at one cell, sharing the covariates, the
/// training set and the HR fits between them.
pub fn forecast_cell(
    config: &BacktestConfig,
    data: &DataSet,
    cell: Cell,
    methods: &[Method],
) -> Vec<(Method, Result<Forecast>)> {
    let Cell { origin, horizon } = cell;
    let needs_training = methods.iter().any(|m| matches!(m, Method::Hr1 | Method::Hr2 | Method::Gm | Method::GmVa));
    let train = needs_training.then(|| training_set(config, data, origin, horizon));
    let row = needs_training.then(|| covariate_row(data, origin, horizon, config.covariate_pnc_length, None));
    let needs_hr = methods.iter().any(|m| matches!(m, Method::Hr1 | Method::Hr2));
    let hr = match (&train, needs_hr) {
        (Some(Ok(t)), true) => Some(fit_hr_pair(t, &HrFitOptions::default())),
        _ => None,
    };
    let with_fit = |fit: Result<FitReport>| -> Result<Forecast> {
        let row = row.as_ref().expect("row built with training").as_ref().map_err(Error::duplicate)?;
        let fit = fit?;
        match (fit.hr_params(), fit.gm_params()) {
            (Some(p), _) => hr_forecast(p, row),
            (_, Some(p)) => gm_forecast(p, row),
            _ => unreachable!("fits are HR or GM"),
        }
    };
    let train_ref = || -> Result<&TrainingSet> {
        train.as_ref().expect("training built").as_ref().map_err(Error::duplicate)
    };
    methods
        .iter()
        .map(|&m| {
            let f = match m {
                Method::Spf => spf_ensemble(origin, horizon, &data.panel),
                Method::SpfMse => MseState::spf_median(&data.panel, &data.cpi, origin, horizon, config.training_window)
                    .and_then(|mse| spf_median_mse(origin, horizon, &data.panel, &mse, config.spf_mse_scale)),
                Method::Pnc => probabilistic_no_change(origin, config.pnc_window_length, &data.cpi),
                Method::Tnc => MseState::traditional_no_change(&data.cpi, origin, horizon, config.tnc_mse_window)
                    .and_then(|mse| traditional_no_change(origin, &data.cpi, &mse)),
                Method::Hr1 | Method::Hr2 => {
                    let pair = train_ref().and_then(|_| hr.as_ref().expect("hr fitted").as_ref().map_err(Error::duplicate));
                    with_fit(pair.map(|(a, b)| if m == Method::Hr1 { a.clone() } else { b.clone() }))
                }
                Method::Gm => with_fit(train_ref().and_then(|t| fit_gm_em(t, GmVariant::Standard))),
                Method::GmVa => with_fit(train_ref().and_then(|t| fit_gm_em(t, GmVariant::VarianceAdjusted))),
            };
            (m, f)
        })
        .collect()
}

/// A forecast that was issued and scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub method: Method,
    pub horizon: u8,
    pub origin: Quarter,
    pub target: Quarter,
    pub point: f64,
    pub realized: f64,
    pub absolute_error: f64,
    pub crps: f64,
}

/// A cell a method did not score, and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Abstention {
    pub method: Method,
    pub horizon: u8,
    pub origin: Quarter,
    pub reason: String,
}

/// Aggregate scores of one method at one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub method: Method,
    pub horizon: u8,
    pub mae: Option<f64>,
    pub crps: Option<f64>,
    /// DM code against the baseline on absolute errors; `None` for the
    /// baseline itself or when fewer than two common origins exist.
    pub dm_code_mae: Option<String>,
    pub dm_code_crps: Option<String>,
    pub n: usize,
    pub abstentions: usize,
    #[serde(skip)]
    pub dm_mae: Option<DmResult>,
    #[serde(skip)]
    pub dm_crps: Option<DmResult>,
}

/// Scores of every method and horizon over one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub period: Period,
    pub baseline: Method,
    pub rows: Vec<ScoreRow>,
}

impl ScoreTable {
    pub fn get(&self, method: Method, horizon: u8) -> Option<&ScoreRow> {
        self.rows.iter().find(|r| r.method == method && r.horizon == horizon)
    }

    pub fn methods(&self) -> Vec<Method> {
        let mut m: Vec<Method> = Vec::new();
        for r in &self.rows {
            if !m.contains(&r.method) {
                m.push(r.method);
            }
        }
        m
    }

    pub fn horizons(&self) -> Vec<u8> {
        let mut h: Vec<u8> = self.rows.iter().map(|r| r.horizon).collect();
        h.sort_unstable();
        h.dedup();
        h
    }
}

/// Everything a run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct BacktestOutput {
    pub config: BacktestConfig,
    pub table: ScoreTable,
    pub losses: Vec<LossRecord>,
    pub abstentions: Vec<Abstention>,
}

impl BacktestOutput {
    /// Per-origin losses of one method, chronological.
    pub fn series(&self, method: Method, horizon: u8) -> Vec<&LossRecord> {
        self.losses.iter().filter(|l| l.method == method && l.horizon == horizon).collect()
    }
}

/// Runs every configured method over the test span.
///
/// Cells are evaluated in parallel; the output order and values do not
/// depend on the thread count.
pub fn run_backtest(config: &BacktestConfig, data: &DataSet) -> Result<BacktestOutput> {
    config.validate()?;
    let mut methods = config.methods.clone();
    if !methods.contains(&config.baseline) {
        methods.insert(0, config.baseline);
    }
    let all_cells = cells(config);
    let per_cell: Vec<_> = all_cells
        .par_iter()
        .map(|&cell| (cell, forecast_cell(config, data, cell, &methods)))
        .collect();

    let mut losses = Vec::new();
    let mut abstentions = Vec::new();
    for (cell, results) in per_cell {
        let realized = data.cpi.realized(cell.target(), config.evaluation_vintage);
        for (method, result) in results {
            let abstain = |reason: String| Abstention { method, horizon: cell.horizon, origin: cell.origin, reason };
            match (&realized, result) {
                (_, Err(e)) => abstentions.push(abstain(e.to_string())),
                (Err(e), Ok(_)) => abstentions.push(abstain(e.to_string())),
                (Ok(y), Ok(f)) => losses.push(LossRecord {
                    method,
                    horizon: cell.horizon,
                    origin: cell.origin,
                    target: cell.target(),
                    point: f.point,
                    realized: *y,
                    absolute_error: absolute_error(f.point, *y),
                    crps: crps(&f.distribution, *y),
                }),
            }
        }
    }
    sort_records(&mut losses, &mut abstentions);
    let table = build_table(config.span(), &losses, &abstentions, &methods, &config.horizons, config.baseline)?;
    Ok(BacktestOutput { config: config.clone(), table, losses, abstentions })
}

fn sort_records(losses: &mut [LossRecord], abstentions: &mut [Abstention]) {
    let order = |m: Method| Method::ALL.iter().position(|&x| x == m);
    losses.sort_by_key(|r| (order(r.method), r.horizon, r.origin));
    abstentions.sort_by_key(|r| (order(r.method), r.horizon, r.origin));
}

fn build_table(
    period: Period,
    losses: &[LossRecord],
    abstentions: &[Abstention],
    methods: &[Method],
    horizons: &[u8],
    baseline: Method,
) -> Result<ScoreTable> {
    let series = |m: Method, h: u8, f: fn(&LossRecord) -> f64| -> Result<ScoreSeries> {
        let (o, v) = losses.iter().filter(|l| l.method == m && l.horizon == h).map(|l| (l.origin, f(l))).unzip();
        ScoreSeries::new(o, v, h)
    };
    let ae = |l: &LossRecord| l.absolute_error;
    let cr = |l: &LossRecord| l.crps;
    let mut rows = Vec::new();
    for &h in horizons {
        let base_ae = series(baseline, h, ae)?;
        let base_cr = series(baseline, h, cr)?;
        for &m in methods {
            let s_ae = series(m, h, ae)?;
            let s_cr = series(m, h, cr)?;
            let dm = |s: &ScoreSeries, b: &ScoreSeries| -> Option<DmResult> {
                if m == baseline {
                    return None;
                }
                let (a, b) = ScoreSeries::align(s, b);
                dm_test(&a, &b).ok()
            };
            let dm_mae = dm(&s_ae, &base_ae);
            let dm_crps = dm(&s_cr, &base_cr);
            rows.push(ScoreRow {
                method: m,
                horizon: h,
                mae: aggregate(&s_ae).ok(),
                crps: aggregate(&s_cr).ok(),
                dm_code_mae: dm_mae.as_ref().map(|d| d.code.clone()),
                dm_code_crps: dm_crps.as_ref().map(|d| d.code.clone()),
                n: s_ae.len(),
                abstentions: abstentions.iter().filter(|a| a.method == m && a.horizon == h).count(),
                dm_mae,
                dm_crps,
            });
        }
    }
    Ok(ScoreTable { period, baseline, rows })
}

/// Recomputes the score table on each sub-period. A period in which no
/// forecast was scored is an error.
pub fn stratify(output: &BacktestOutput, periods: &[Period]) -> Result<Vec<ScoreTable>> {
    let cfg = &output.config;
    let methods = output.table.methods();
    periods
        .iter()
        .map(|&p| {
            let inside = |origin: Quarter, h: u8| p.contains(period_key(origin, h, cfg.span_basis));
            let losses: Vec<LossRecord> =
                output.losses.iter().filter(|l| inside(l.origin, l.horizon)).cloned().collect();
            if losses.is_empty() {
                return Err(Error::EmptyPeriod(p.to_string()));
            }
            let abst: Vec<Abstention> =
                output.abstentions.iter().filter(|a| inside(a.origin, a.horizon)).cloned().collect();
            build_table(p, &losses, &abst, &methods, &cfg.horizons, cfg.baseline)
        })
        .collect()
}

/// Which window a length sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// The probabilistic no-change window; only the PNC method is rerun.
    #[default]
    PncWindow,
    /// The training window of the fitted methods.
    TrainingWindow,
}

impl std::str::FromStr for SweepParameter {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "pnc" | "pnc_window_length" => Ok(SweepParameter::PncWindow),
            "training" | "training_window" => Ok(SweepParameter::TrainingWindow),
            other => Err(Error::Config(format!("unknown sweep parameter {other:?}"))),
        }
    }
}

impl std::fmt::Display for SweepParameter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepParameter::PncWindow => "pnc_window_length",
            SweepParameter::TrainingWindow => "training_window",
        })
    }
}

/// Scores of one method and horizon at one window length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub parameter: SweepParameter,
    pub length: usize,
    pub method: Method,
    pub horizon: u8,
    pub mae: Option<f64>,
    pub crps: Option<f64>,
    pub n: usize,
    pub abstentions: usize,
    /// `"ok"`, or `"infeasible"` for lengths below the minimum of 8.
    pub status: String,
}

/// Reruns the backtest once per length, varying one window.
pub fn training_length_sweep(
    config: &BacktestConfig,
    data: &DataSet,
    parameter: SweepParameter,
    lengths: &[usize],
) -> Result<Vec<SweepRow>> {
    let methods: Vec<Method> = config
        .methods
        .iter()
        .copied()
        .filter(|m| match parameter {
            SweepParameter::PncWindow => *m == Method::Pnc,
            SweepParameter::TrainingWindow => m.is_postprocessor(),
        })
        .collect();
    if methods.is_empty() {
        return Err(Error::Config(format!("no configured method depends on {parameter}")));
    }
    let mut rows = Vec::new();
    for &length in lengths {
        if length < 8 {
            for &m in &methods {
                for &h in &config.horizons {
                    rows.push(SweepRow {
                        parameter,
                        length,
                        method: m,
                        horizon: h,
                        mae: None,
                        crps: None,
                        n: 0,
                        abstentions: 0,
                        status: "infeasible".into(),
                    });
                }
            }
            continue;
        }
        let mut cfg = config.clone();
        match parameter {
            SweepParameter::PncWindow => cfg.pnc_window_length = length,
            SweepParameter::TrainingWindow => cfg.training_window = length,
        }
        cfg.methods = methods.clone();
        cfg.baseline = methods[0];
        let out = run_backtest(&cfg, data)?;
        for r in &out.table.rows {
            rows.push(SweepRow {
                parameter,
                length,
                method: r.method,
                horizon: r.horizon,
                mae: r.mae,
                crps: r.crps,
                n: r.n,
                abstentions: r.abstentions,
                status: "ok".into(),
            });
        }
    }
    Ok(rows)
}

/// Accuracy of one panelist at one horizon against the survey median.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecasterRow {
    pub forecaster_id: String,
    pub horizon: u8,
    pub mae: f64,
    pub spf_median_mae: f64,
    /// DM code of the panelist against the survey median on absolute errors.
    pub dm_code: Option<String>,
    pub n: usize,
}

/// Per-panelist evaluation over one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecasterEval {
    pub period: Period,
    pub rows: Vec<ForecasterRow>,
    pub note: Option<String>,
}

/// Evaluates panelists who forecast every horizon at every origin of
/// `period` for which the target is observed. With `ids` only those
/// panelists are considered.
pub fn per_forecaster_eval(
    config: &BacktestConfig,
    data: &DataSet,
    period: Period,
    ids: Option<&[String]>,
) -> Result<ForecasterEval> {
    let mut scored: Vec<(Cell, f64, f64)> = Vec::new();
    for &h in &config.horizons {
        for cell in cells_for(period, h, config.span_basis) {
            let Ok(y) = data.cpi.realized(cell.target(), config.evaluation_vintage) else { continue };
            let Ok(e) = data.panel.ensemble(cell.origin, h) else { continue };
            scored.push((cell, y, e.median()));
        }
    }
    if scored.is_empty() {
        return Err(Error::EmptyPeriod(period.to_string()));
    }
    let candidates: Vec<String> = match ids {
        Some(ids) => ids.to_vec(),
        None => data.panel.forecaster_ids(),
    };
    let complete: Vec<String> = candidates
        .into_iter()
        .filter(|id| scored.iter().all(|(c, _, _)| data.panel.value(c.origin, c.horizon, id).is_some()))
        .collect();
    if complete.is_empty() {
        return Ok(ForecasterEval {
            period,
            rows: Vec::new(),
            note: Some(format!("no forecaster has a complete record in {period}")),
        });
    }
    let mut rows = Vec::new();
    for id in &complete {
        for &h in &config.horizons {
            let cells: Vec<&(Cell, f64, f64)> = scored.iter().filter(|(c, _, _)| c.horizon == h).collect();
            if cells.is_empty() {
                continue;
            }
            let origins: Vec<Quarter> = cells.iter().map(|(c, _, _)| c.origin).collect();
            let own: Vec<f64> = cells
                .iter()
                .map(|(c, y, _)| absolute_error(data.panel.value(c.origin, h, id).expect("complete"), *y))
                .collect();
            let med: Vec<f64> = cells.iter().map(|(_, y, m)| absolute_error(*m, *y)).collect();
            let a = ScoreSeries::new(origins.clone(), own, h)?;
            let b = ScoreSeries::new(origins, med, h)?;
            rows.push(ForecasterRow {
                forecaster_id: id.clone(),
                horizon: h,
                mae: aggregate(&a)?,
                spf_median_mae: aggregate(&b)?,
                dm_code: dm_test(&a, &b).ok().map(|d| d.code),
                n: a.len(),
            });
        }
    }
    Ok(ForecasterEval { period, rows, note: None })
}
