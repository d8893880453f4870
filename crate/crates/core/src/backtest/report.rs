use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    stratify, BacktestConfig, BacktestOutput, DataSet, ForecasterEval, LossRecord, Method, Period, ScoreRow,
    ScoreTable, SweepRow,
};
use crate::error::{Error, Result};

pub const SCORES_FILE: &str = "scores.csv";
pub const LOSSES_FILE: &str = "losses.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const FORECASTERS_FILE: &str = "forecasters.csv";
pub const METADATA_FILE: &str = "run_metadata.json";

fn num(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

fn opt_num(s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| Error::Parse(format!("not a number: {s:?}")))
}

/// Writes one or more score tables; the `period` column tells them apart.
pub fn write_scores_csv<W: Write>(tables: &[ScoreTable], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["period", "method", "horizon", "mae", "crps", "dm_code_mae", "dm_code_crps", "n", "abstentions", "baseline"])?;
    for t in tables {
        for r in &t.rows {
            w.write_record([
                t.period.to_string(),
                r.method.to_string(),
                r.horizon.to_string(),
                num(r.mae),
                num(r.crps),
                r.dm_code_mae.clone().unwrap_or_default(),
                r.dm_code_crps.clone().unwrap_or_default(),
                r.n.to_string(),
                r.abstentions.to_string(),
                t.baseline.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads tables written by [`write_scores_csv`], in file order.
pub fn read_scores_csv<R: Read>(reader: R) -> Result<Vec<ScoreTable>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut tables: Vec<ScoreTable> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 10 {
            return Err(Error::Parse(format!("scores row has {} fields, expected 10", rec.len())));
        }
        let period: Period = rec[0].parse()?;
        let baseline: Method = rec[9].parse()?;
        let code = |s: &str| (!s.is_empty()).then(|| s.to_string());
        let int = |s: &str| s.parse::<usize>().map_err(|_| Error::Parse(format!("not a count: {s:?}")));
        let row = ScoreRow {
            method: rec[1].parse()?,
            horizon: rec[2].parse().map_err(|_| Error::Parse(format!("bad horizon {:?}", &rec[2])))?,
            mae: opt_num(&rec[3])?,
            crps: opt_num(&rec[4])?,
            dm_code_mae: code(&rec[5]),
            dm_code_crps: code(&rec[6]),
            n: int(&rec[7])?,
            abstentions: int(&rec[8])?,
            dm_mae: None,
            dm_crps: None,
        };
        match tables.last_mut() {
            Some(t) if t.period == period && t.baseline == baseline => t.rows.push(row),
            _ => tables.push(ScoreTable { period, baseline, rows: vec![row] }),
        }
    }
    Ok(tables)
}

pub fn write_losses_csv<W: Write>(losses: &[LossRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["method", "horizon", "origin", "target", "point", "realized", "ae", "crps"])?;
    for l in losses {
        w.write_record([
            l.method.to_string(),
            l.horizon.to_string(),
            l.origin.to_string(),
            l.target.to_string(),
            l.point.to_string(),
            l.realized.to_string(),
            l.absolute_error.to_string(),
            l.crps.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["parameter", "length", "method", "horizon", "mae", "crps", "n", "abstentions", "status"])?;
    for r in rows {
        w.write_record([
            r.parameter.to_string(),
            r.length.to_string(),
            r.method.to_string(),
            r.horizon.to_string(),
            num(r.mae),
            num(r.crps),
            r.n.to_string(),
            r.abstentions.to_string(),
            r.status.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_forecasters_csv<W: Write>(eval: &ForecasterEval, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["period", "forecaster_id", "horizon", "mae", "spf_median_mae", "dm_code", "n"])?;
    for r in &eval.rows {
        w.write_record([
            eval.period.to_string(),
            r.forecaster_id.clone(),
            r.horizon.to_string(),
            r.mae.to_string(),
            r.spf_median_mae.to_string(),
            r.dm_code.clone().unwrap_or_default(),
            r.n.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Two decimals, ties to even on the exact binary value.
pub fn format_2dp(x: f64) -> String {
    let s = format!("{x:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

/// One markdown section per metric: methods down, horizons across, each
/// entry followed by its DM code against the baseline.
pub fn render_markdown(table: &ScoreTable) -> String {
    let horizons = table.horizons();
    let mut out = format!("## Scores {}\n\nBaseline: {}\n", table.period, table.baseline.label());
    for (title, value, code) in [
        ("MAE", (|r: &ScoreRow| r.mae) as fn(&ScoreRow) -> Option<f64>, (|r: &ScoreRow| r.dm_code_mae.clone()) as fn(&ScoreRow) -> Option<String>),
        ("CRPS", |r: &ScoreRow| r.crps, |r: &ScoreRow| r.dm_code_crps.clone()),
    ] {
        out.push_str(&format!("\n### {title}\n\n| Method |"));
        for h in &horizons {
            out.push_str(&format!(" h={h} |"));
        }
        out.push_str("\n|---|");
        out.push_str(&"---:|".repeat(horizons.len()));
        out.push('\n');
        for m in table.methods() {
            out.push_str(&format!("| {} |", m.label()));
            for &h in &horizons {
                let cell = match table.get(m, h) {
                    Some(r) => match (value(r), code(r)) {
                        (Some(v), Some(c)) => format!("{} ({c})", format_2dp(v)),
                        (Some(v), None) => format_2dp(v),
                        (None, _) => "n/a".into(),
                    },
                    None => String::new(),
                };
                out.push_str(&format!(" {cell} |"));
            }
            out.push('\n');
        }
    }
    out
}

/// Provenance of a run: configuration, data hashes and the conventions
/// that determine the numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub crate_version: String,
    pub config: BacktestConfig,
    pub data_hashes: BTreeMap<String, String>,
    pub conventions: BTreeMap<String, String>,
    pub scored: usize,
    pub abstained: usize,
}

impl RunMetadata {
    pub fn new(output: &BacktestOutput, data: &DataSet) -> Result<Self> {
        let c = &output.config;
        let conventions = [
            ("dm_reference", "standard normal".to_string()),
            ("dm_long_run_variance", "rectangular kernel, lags 0..h-1".into()),
            ("dm_degenerate_variance", "code NA; reject_by_convention when the mean differential is nonzero".into()),
            ("dm_alignment", "origins scored by both methods".into()),
            ("dm_code", "k when the lower tail probability lies in (k/100, (k+1)/100]".into()),
            ("spf_variance", "sample variance, n-1 denominator".into()),
            ("spf_mse_scale", format!("{:?}", c.spf_mse_scale).to_lowercase()),
            ("span_basis", c.span_basis.to_string()),
            ("training_realized_values", "vintage available at the issue quarter".into()),
            ("realized_values", format!("vintage {}", c.evaluation_vintage)),
            ("tnc_mse", "no-change errors inside the issue vintage".into()),
            ("point_forecast", "predictive median".into()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Ok(RunMetadata {
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            config: c.clone(),
            data_hashes: data.content_hashes()?,
            conventions,
            scored: output.losses.len(),
            abstained: output.abstentions.len(),
        })
    }
}

/// Writes `scores.csv` (full span plus configured sub-periods),
/// `losses.csv` and `run_metadata.json` into `dir`.
pub fn write_run(output: &BacktestOutput, data: &DataSet, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut tables = vec![output.table.clone()];
    tables.extend(stratify(output, &output.config.sub_periods)?);
    write_scores_csv(&tables, std::fs::File::create(dir.join(SCORES_FILE))?)?;
    write_losses_csv(&output.losses, std::fs::File::create(dir.join(LOSSES_FILE))?)?;
    let meta = RunMetadata::new(output, data)?;
    let mut f = std::fs::File::create(dir.join(METADATA_FILE))?;
    serde_json::to_writer_pretty(&mut f, &meta)?;
    f.write_all(b"\n")?;
    Ok(())
}
