//! Deterministic synthetic vintages and survey panels for tests, examples
//! and demos.
//!
//! Inflation follows a mean-reverting process, and quarterly average CPI
//! levels grow at exactly those rates. Each vintage publishes the CPI path
//! with revisions that fade over a year; panelists blend the
//! future rate with the last observed one, plus a personal bias and noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backtest::DataSet;
use crate::data::{CpiRecord, PanelRecord, SurveyPanel, VintageStore};
use crate::error::Result;
use crate::normal;
use crate::quarter::{Month, Quarter};

/// Shape of a synthetic data set.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub seed: u64,
    /// First month of CPI history in every vintage.
    pub first_month: Month,
    pub first_vintage: Quarter,
    pub last_vintage: Quarter,
    pub panel_start: Quarter,
    pub panel_end: Quarter,
    pub forecasters: usize,
    /// The first `core` panelists answer every round.
    pub core: usize,
    pub participation: f64,
    pub mean_rate: f64,
    pub persistence: f64,
    pub shock_sd: f64,
    /// Standard deviation of level revisions, as a fraction.
    pub revision_sd: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let q = |y, n| Quarter::new(y, n).expect("valid quarter");
        SyntheticSpec {
            seed: 7,
            first_month: Month::new(1978, 1).expect("valid month"),
            first_vintage: q(1994, 3),
            last_vintage: q(2012, 2),
            panel_start: q(1983, 1),
            panel_end: q(2011, 4),
            forecasters: 30,
            core: 4,
            participation: 0.7,
            mean_rate: 3.0,
            persistence: 0.6,
            shock_sd: 1.2,
            revision_sd: 0.0005,
        }
    }
}

fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.random_range(f64::EPSILON..1.0);
    normal::quantile(u)
}

/// Builds both stores from `spec`. The same spec always yields the same data.
pub fn generate(spec: &SyntheticSpec) -> Result<DataSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let last_month = spec.last_vintage.first_month();
    let n_months = last_month.diff(spec.first_month) as usize + 1;
    let first_q = Quarter::of_month(spec.first_month);
    let last_q = Quarter::of_month(last_month).max(spec.panel_end + 4);
    let quarters: Vec<Quarter> = Quarter::range_inclusive(first_q, last_q).collect();

    let mut rate = spec.mean_rate;
    let rates: Vec<f64> = quarters
        .iter()
        .map(|_| {
            rate = spec.mean_rate + spec.persistence * (rate - spec.mean_rate) + spec.shock_sd * std_normal(&mut rng);
            rate
        })
        .collect();
    let rate_of = |q: Quarter| rates[q.diff(first_q) as usize];

    // Quarterly average levels follow the rates exactly; the months of a
    // quarter wiggle symmetrically around that average.
    let mut months = Vec::with_capacity(n_months);
    let mut levels = Vec::with_capacity(n_months);
    let mut m = spec.first_month;
    let mut average = 100.0;
    let mut current = Quarter::of_month(m);
    for _ in 0..n_months {
        let q = Quarter::of_month(m);
        if q != current {
            average *= (1.0 + rate_of(q) / 100.0).powf(0.25);
            current = q;
        }
        let wiggle = [-1e-3, 0.0, 1e-3][m.diff(q.first_month()) as usize];
        months.push(m);
        levels.push(average * (1.0 + wiggle));
        m = m.next();
    }
    let revisions: Vec<f64> = (0..n_months).map(|_| spec.revision_sd * std_normal(&mut rng)).collect();

    let mut cpi = Vec::new();
    for vintage in Quarter::range_inclusive(spec.first_vintage, spec.last_vintage) {
        let end = vintage.first_month();
        for (i, &month) in months.iter().enumerate() {
            if month > end {
                break;
            }
            let age = end.diff(month) as f64;
            let weight = (1.0 - age / 12.0).max(0.0);
            cpi.push(CpiRecord { vintage, month, level: levels[i] * (revisions[i] * weight).exp() });
        }
    }

    let biases: Vec<f64> = (0..spec.forecasters).map(|_| 0.3 * std_normal(&mut rng)).collect();
    let mut panel = Vec::new();
    for origin in Quarter::range_inclusive(spec.panel_start, spec.panel_end) {
        let last_seen = rate_of(origin - 1);
        for (i, bias) in biases.iter().enumerate() {
            let answers = i < spec.core || rng.random_bool(spec.participation);
            for h in 1..=5u8 {
                let noise = std_normal(&mut rng);
                if !answers {
                    continue;
                }
                let target = rate_of(origin + (h as i64 - 1));
                let w = 0.6 / h as f64;
                let value = w * target + (1.0 - w) * last_seen + bias + (0.3 + 0.1 * h as f64) * noise;
                panel.push(PanelRecord {
                    origin,
                    horizon: h,
                    forecaster_id: format!("F{:03}", i + 1),
                    value: (value * 10.0).round() / 10.0,
                });
            }
        }
    }
    Ok(DataSet::new(VintageStore::from_records(cpi)?, SurveyPanel::from_records(panel)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_well_formed() {
        let spec = SyntheticSpec { last_vintage: Quarter::new(1999, 4).unwrap(), panel_end: Quarter::new(1998, 4).unwrap(), ..Default::default() };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
        let v = Quarter::new(1999, 4).unwrap();
        let (last, _) = a.cpi.last_rate_at(v).unwrap();
        assert_eq!(last, Quarter::new(1999, 3).unwrap());
        assert!(a.panel.ensemble(Quarter::new(1990, 1).unwrap(), 5).unwrap().len() >= spec.core);
    }
}
