use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use inflcast::backtest::{
    covariate_row, fit_cell, per_forecaster_eval, read_scores_csv, render_markdown, run_backtest,
    training_length_sweep, write_forecasters_csv, write_run, write_scores_csv, write_sweep_csv, BacktestConfig, Cell,
    DataSet, Method, Period, SweepParameter, FORECASTERS_FILE, SCORES_FILE, SWEEP_FILE,
};
use inflcast::data::{SurveyPanel, VintageStore};
use inflcast::forecasters::{gm_forecast, hr_forecast};
use inflcast::synthetic::{generate, SyntheticSpec};
use inflcast::Quarter;

#[derive(Parser)]
#[command(name = "inflcast", version, about = "Probabilistic inflation forecasts from survey panels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate raw CSVs and write them as a canonical store directory.
    Ingest {
        #[arg(long)]
        cpi: PathBuf,
        #[arg(long)]
        spf: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the backtest and write scores.csv, losses.csv and run_metadata.json.
    Backtest {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Store directory, overriding the `store` key of the config.
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Rerun the backtest for several window lengths and write sweep.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        lengths: Vec<usize>,
        /// Window to vary: `pnc` or `training`.
        #[arg(long, default_value = "pnc")]
        param: SweepParameter,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Print the scores of a finished run.
    Report {
        /// Directory holding scores.csv.
        #[arg(long, default_value = ".")]
        run: PathBuf,
        #[arg(long, value_enum, default_value = "md")]
        format: Format,
    },
    /// Fit one postprocessing model at one origin and print its parameters.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        origin: Quarter,
        #[arg(long)]
        horizon: u8,
        #[arg(long, default_value = "hr2")]
        method: Method,
        /// Write the objective trace as CSV, to stdout when no path is given.
        #[arg(long, num_args = 0..=1)]
        trace: Option<Option<PathBuf>>,
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Score panelists with complete records against the survey median.
    Forecasters {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        period: Period,
        #[arg(long, value_delimiter = ',')]
        ids: Option<Vec<String>>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Write a synthetic store for trying the tool without the public data.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Md,
}

fn load(config: &Path, store: Option<PathBuf>) -> Result<(BacktestConfig, DataSet)> {
    let mut cfg = BacktestConfig::from_path(config).with_context(|| format!("reading {}", config.display()))?;
    if store.is_some() {
        cfg.store = store;
    }
    let Some(dir) = cfg.store.clone() else {
        bail!("no store given: set `store` in the config or pass --store");
    };
    let data = DataSet::load(&dir).with_context(|| format!("loading store {}", dir.display()))?;
    Ok((cfg, data))
}

fn create(dir: &Path, name: &str) -> Result<File> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    File::create(&path).with_context(|| format!("creating {}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        // a closed pipe (e.g. `| head`) is not an error
        Err(e) if broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn broken_pipe(e: &anyhow::Error) -> bool {
    let io = e.downcast_ref::<io::Error>().or_else(|| match e.downcast_ref::<inflcast::Error>() {
        Some(inflcast::Error::Io(io)) => Some(io),
        _ => None,
    });
    io.is_some_and(|io| io.kind() == io::ErrorKind::BrokenPipe)
}

fn run(cli: Cli) -> Result<()> {
    let mut stdout = io::stdout().lock();
    match cli.command {
        Command::Ingest { cpi, spf, out } => {
            let store = VintageStore::from_csv_path(&cpi).with_context(|| format!("reading {}", cpi.display()))?;
            let panel = SurveyPanel::from_csv_path(&spf).with_context(|| format!("reading {}", spf.display()))?;
            let data = DataSet::new(store, panel);
            data.save(&out)?;
            writeln!(stdout, "vintages: {}", data.cpi.vintages().count())?;
            writeln!(stdout, "panel records: {}", data.panel.records().count())?;
            for (file, hash) in data.content_hashes()? {
                writeln!(stdout, "{file} sha256 {hash}")?;
            }
        }
        Command::Backtest { config, out, store } => {
            let (cfg, data) = load(&config, store)?;
            let output = run_backtest(&cfg, &data)?;
            write_run(&output, &data, &out)?;
            writeln!(
                stdout,
                "scored {} forecasts, {} abstentions, results in {}",
                output.losses.len(),
                output.abstentions.len(),
                out.display()
            )?;
        }
        Command::Sweep { config, lengths, param, out, store } => {
            let (cfg, data) = load(&config, store)?;
            let rows = training_length_sweep(&cfg, &data, param, &lengths)?;
            write_sweep_csv(&rows, create(&out, SWEEP_FILE)?)?;
            writeln!(stdout, "{} rows written to {}", rows.len(), out.join(SWEEP_FILE).display())?;
        }
        Command::Report { run, format } => {
            let path = run.join(SCORES_FILE);
            let tables = read_scores_csv(File::open(&path).with_context(|| format!("opening {}", path.display()))?)?;
            match format {
                Format::Csv => write_scores_csv(&tables, &mut stdout)?,
                Format::Md => {
                    for t in &tables {
                        writeln!(stdout, "{}", render_markdown(t))?;
                    }
                }
            }
        }
        Command::Fit { config, origin, horizon, method, trace, store } => {
            let (cfg, data) = load(&config, store)?;
            let cell = Cell { origin, horizon };
            let report = fit_cell(&cfg, &data, cell, method)?;
            let row = covariate_row(&data, origin, horizon, cfg.covariate_pnc_length, Some(cfg.evaluation_vintage))?;
            let forecast = match (report.hr_params(), report.gm_params()) {
                (Some(p), _) => hr_forecast(p, &row)?,
                (_, Some(p)) => gm_forecast(p, &row)?,
                _ => unreachable!("fits are HR or GM"),
            };
            let summary = serde_json::json!({
                "origin": origin,
                "horizon": horizon,
                "target": cell.target(),
                "method": method,
                "params": report.params,
                "objective": report.objective,
                "iterations": report.iterations,
                "converged": report.converged,
                "note": report.note,
                "covariates": row,
                "forecast": forecast,
            });
            match trace {
                Some(Some(path)) => {
                    report.write_trace_csv(File::create(&path)?)?;
                    writeln!(stdout, "{}", serde_json::to_string_pretty(&summary)?)?;
                }
                Some(None) => report.write_trace_csv(&mut stdout)?,
                None => writeln!(stdout, "{}", serde_json::to_string_pretty(&summary)?)?,
            }
        }
        Command::Forecasters { config, period, ids, out, store } => {
            let (cfg, data) = load(&config, store)?;
            let eval = per_forecaster_eval(&cfg, &data, period, ids.as_deref())?;
            write_forecasters_csv(&eval, create(&out, FORECASTERS_FILE)?)?;
            if let Some(note) = &eval.note {
                writeln!(stdout, "{note}")?;
            }
            writeln!(stdout, "{} rows written to {}", eval.rows.len(), out.join(FORECASTERS_FILE).display())?;
        }
        Command::Synth { out, seed } => {
            let data = generate(&SyntheticSpec { seed, ..Default::default() })?;
            data.save(&out)?;
            writeln!(stdout, "synthetic store written to {}", out.display())?;
        }
    }
    Ok(())
}
