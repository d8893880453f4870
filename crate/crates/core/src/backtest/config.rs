use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecasters::MseScale;
use crate::quarter::Quarter;

/// Forecast methods the engine knows how to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Survey panel as a discrete distribution, median as point.
    Spf,
    /// Gaussian around the survey median with a past-MSE scale.
    SpfMse,
    /// Probabilistic no-change: the last N observed rates.
    Pnc,
    /// Traditional no-change: the last observed rate.
    Tnc,
    /// HR with survey covariates.
    Hr1,
    /// HR with survey and no-change covariates.
    Hr2,
    /// Gaussian mixture with survey and window spreads.
    Gm,
    /// Gaussian mixture with fitted spreads.
    GmVa,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Spf,
        Method::SpfMse,
        Method::Pnc,
        Method::Tnc,
        Method::Hr1,
        Method::Hr2,
        Method::Gm,
        Method::GmVa,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Method::Spf => "spf",
            Method::SpfMse => "spf_mse",
            Method::Pnc => "pnc",
            Method::Tnc => "tnc",
            Method::Hr1 => "hr1",
            Method::Hr2 => "hr2",
            Method::Gm => "gm",
            Method::GmVa => "gmva",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Spf => "SPF",
            Method::SpfMse => "SPF median with MSE",
            Method::Pnc => "Probabilistic no-change",
            Method::Tnc => "Traditional no-change",
            Method::Hr1 => "HR with SPF covariates",
            Method::Hr2 => "HR with SPF and PNC covariates",
            Method::Gm => "GM",
            Method::GmVa => "GM with variance adjustment",
        }
    }

    /// Methods whose parameters are fitted on the rolling training window.
    pub fn is_postprocessor(self) -> bool {
        matches!(self, Method::Hr1 | Method::Hr2 | Method::Gm | Method::GmVa | Method::SpfMse)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Method::ALL
            .into_iter()
            .find(|m| m.id() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// Whether the test span selects forecasts by target quarter or by origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanBasis {
    /// Every horizon is scored on the same target quarters.
    #[default]
    Target,
    Origin,
}

impl FromStr for SpanBasis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "target" => Ok(SpanBasis::Target),
            "origin" => Ok(SpanBasis::Origin),
            other => Err(Error::Config(format!("span_basis must be target or origin, got {other:?}"))),
        }
    }
}

impl fmt::Display for SpanBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpanBasis::Target => "target",
            SpanBasis::Origin => "origin",
        })
    }
}

/// An inclusive range of quarters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Period {
    pub start: Quarter,
    pub end: Quarter,
}

impl Period {
    pub fn new(start: Quarter, end: Quarter) -> Self {
        Period { start, end }
    }

    pub fn contains(&self, q: Quarter) -> bool {
        self.start <= q && q <= self.end
    }

    pub fn quarters(&self) -> impl Iterator<Item = Quarter> {
        Quarter::range_inclusive(self.start, self.end)
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.start, self.end)
    }
}

impl FromStr for Period {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .trim()
            .split_once('-')
            .ok_or_else(|| Error::Config(format!("period {s:?} must look like 1995Q3-2000Q4")))?;
        Ok(Period::new(a.parse()?, b.parse()?))
    }
}

/// Everything that defines a backtest run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig {
    /// Directory holding `cpi_vintages.csv` and `spf_panel.csv`.
    pub store: Option<PathBuf>,
    pub evaluation_vintage: Quarter,
    pub test_start: Quarter,
    pub test_end: Quarter,
    pub horizons: Vec<u8>,
    pub methods: Vec<Method>,
    pub baseline: Method,
    /// Window of the probabilistic no-change method.
    pub pnc_window_length: usize,
    /// Window behind the no-change covariates of the postprocessing models.
    pub covariate_pnc_length: usize,
    /// Rolling training window of the fitted methods and the SPF MSE.
    pub training_window: usize,
    /// MSE window of the traditional no-change forecast.
    pub tnc_mse_window: usize,
    pub sub_periods: Vec<Period>,
    pub spf_mse_scale: MseScale,
    pub span_basis: SpanBasis,
}

impl BacktestConfig {
    pub fn new(evaluation_vintage: Quarter) -> Self {
        BacktestConfig {
            store: None,
            evaluation_vintage,
            test_start: Quarter::new(1995, 3).expect("valid"),
            test_end: Quarter::new(2010, 1).expect("valid"),
            horizons: vec![1, 2, 3, 4, 5],
            methods: Method::ALL.to_vec(),
            baseline: Method::Spf,
            pnc_window_length: 20,
            covariate_pnc_length: 20,
            training_window: 40,
            tnc_mse_window: 20,
            sub_periods: Vec::new(),
            spf_mse_scale: MseScale::Rmse,
            span_basis: SpanBasis::Target,
        }
    }

    pub fn span(&self) -> Period {
        Period::new(self.test_start, self.test_end)
    }

    pub fn validate(&self) -> Result<()> {
        if self.test_start > self.test_end {
            return Err(Error::Config(format!(
                "test_start {} is after test_end {}",
                self.test_start, self.test_end
            )));
        }
        if self.horizons.is_empty() || self.horizons.iter().any(|h| !(1..=5).contains(h)) {
            return Err(Error::Config("horizons must be a nonempty subset of 1..=5".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        for (name, w) in [
            ("pnc_window_length", self.pnc_window_length),
            ("covariate_pnc_length", self.covariate_pnc_length),
            ("training_window", self.training_window),
            ("tnc_mse_window", self.tnc_mse_window),
        ] {
            if w < 8 {
                return Err(Error::Config(format!("{name} = {w} is below the minimum of 8")));
            }
        }
        for p in &self.sub_periods {
            if p.start > p.end || p.start < self.test_start || p.end > self.test_end {
                return Err(Error::Config(format!("sub-period {p} is not inside the test span")));
            }
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. Unknown keys are
    /// rejected and `evaluation_vintage` is required.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            if kv.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {}", n + 1, k.trim())));
            }
        }
        let vintage = kv
            .remove("evaluation_vintage")
            .ok_or_else(|| Error::Config("evaluation_vintage is required".into()))?;
        let mut cfg = BacktestConfig::new(vintage.parse()?);
        let usize_of = |k: &str, v: &str| {
            v.parse::<usize>().map_err(|_| Error::Config(format!("{k} must be a positive integer, got {v:?}")))
        };
        let list = |v: &str| -> Vec<String> {
            v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
        };
        for (k, v) in kv {
            match k.as_str() {
                "store" => cfg.store = Some(PathBuf::from(v)),
                "test_start" => cfg.test_start = v.parse()?,
                "test_end" => cfg.test_end = v.parse()?,
                "horizons" => {
                    cfg.horizons = list(&v)
                        .iter()
                        .map(|h| h.parse::<u8>().map_err(|_| Error::Config(format!("bad horizon {h:?}"))))
                        .collect::<Result<_>>()?
                }
                "methods" => cfg.methods = list(&v).iter().map(|m| m.parse()).collect::<Result<_>>()?,
                "baseline" | "baseline_method" => cfg.baseline = v.parse()?,
                "pnc_window_length" => cfg.pnc_window_length = usize_of(&k, &v)?,
                "covariate_pnc_length" => cfg.covariate_pnc_length = usize_of(&k, &v)?,
                "training_window" => cfg.training_window = usize_of(&k, &v)?,
                "tnc_mse_window" => cfg.tnc_mse_window = usize_of(&k, &v)?,
                "sub_periods" => cfg.sub_periods = list(&v).iter().map(|p| p.parse()).collect::<Result<_>>()?,
                "spf_mse_scale" => cfg.spf_mse_scale = v.parse()?,
                "span_basis" => cfg.span_basis = v.parse()?,
                other => return Err(Error::Config(format!("unknown key {other:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_kv_str(&std::fs::read_to_string(path)?)?;
        // relative store paths are resolved against the config file
        if let (Some(store), Some(dir)) = (&cfg.store, path.parent()) {
            if store.is_relative() {
                cfg.store = Some(dir.join(store));
            }
        }
        Ok(cfg)
    }

    /// Serialises back to the `key = value` format, one key per line.
    pub fn to_kv_string(&self) -> String {
        let join = |items: Vec<String>| items.join(",");
        let mut lines = Vec::new();
        if let Some(store) = &self.store {
            lines.push(format!("store = {}", store.display()));
        }
        lines.push(format!("evaluation_vintage = {}", self.evaluation_vintage));
        lines.push(format!("test_start = {}", self.test_start));
        lines.push(format!("test_end = {}", self.test_end));
        lines.push(format!("horizons = {}", join(self.horizons.iter().map(|h| h.to_string()).collect())));
        lines.push(format!("methods = {}", join(self.methods.iter().map(|m| m.id().to_string()).collect())));
        lines.push(format!("baseline = {}", self.baseline));
        lines.push(format!("pnc_window_length = {}", self.pnc_window_length));
        lines.push(format!("covariate_pnc_length = {}", self.covariate_pnc_length));
        lines.push(format!("training_window = {}", self.training_window));
        lines.push(format!("tnc_mse_window = {}", self.tnc_mse_window));
        if !self.sub_periods.is_empty() {
            lines.push(format!("sub_periods = {}", join(self.sub_periods.iter().map(|p| p.to_string()).collect())));
        }
        lines.push(format!(
            "spf_mse_scale = {}",
            match self.spf_mse_scale {
                MseScale::Rmse => "rmse",
                MseScale::Mse => "mse",
            }
        ));
        lines.push(format!("span_basis = {}", self.span_basis));
        lines.join("\n") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_full_config() {
        let text = "\
# defaults
store = data/store
evaluation_vintage = 2010Q2
test_start = 1995Q3
test_end = 2010Q1
horizons = 1, 2,3
methods = spf,pnc,tnc,hr2
sub_periods = 1995Q3-2000Q4, 2001Q1-2005Q4, 2006Q1-2010Q1
spf_mse_scale = mse
";
        let cfg = BacktestConfig::from_kv_str(text).unwrap();
        assert_eq!(cfg.horizons, vec![1, 2, 3]);
        assert_eq!(cfg.methods, vec![Method::Spf, Method::Pnc, Method::Tnc, Method::Hr2]);
        assert_eq!(cfg.sub_periods.len(), 3);
        assert_eq!(cfg.pnc_window_length, 20);
        assert_eq!(cfg.training_window, 40);
        assert_eq!(cfg.spf_mse_scale, MseScale::Mse);
        assert_eq!(BacktestConfig::from_kv_str(&cfg.to_kv_string()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(BacktestConfig::from_kv_str("test_start = 1995Q3").is_err());
        assert!(BacktestConfig::from_kv_str("evaluation_vintage = 2010Q2\ntest_start = 2011Q1").is_err());
        assert!(BacktestConfig::from_kv_str("evaluation_vintage = 2010Q2\nfoo = 1").is_err());
        assert!(BacktestConfig::from_kv_str("evaluation_vintage = 2010Q2\ntraining_window = 4").is_err());
        assert!(BacktestConfig::from_kv_str("evaluation_vintage = 2010Q2\nmethods = spf,xyz").is_err());
        assert!(BacktestConfig::from_kv_str("evaluation_vintage = 2010Q2\nsub_periods = 1990Q1-1995Q1").is_err());
        assert!(BacktestConfig::from_kv_str("evaluation_vintage = 2010Q2\nhorizons = 0").is_err());
    }
}
