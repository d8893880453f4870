//! Real-time CPI vintages, the survey panel and the covariates derived from
//! them.
//!
//! Both stores are built once from their canonical CSV files and are
//! read-only afterwards.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distributions::Ensemble;
use crate::error::{Error, Result};
use crate::quarter::{Month, Quarter};

/// One row of `cpi_vintages.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpiRecord {
    pub vintage: Quarter,
    pub month: Month,
    pub level: f64,
}

/// One row of `spf_panel.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRecord {
    pub origin: Quarter,
    pub horizon: u8,
    pub forecaster_id: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct Vintage {
    first_month: Month,
    levels: Vec<f64>,
    rates: Vec<(Quarter, f64)>,
}

impl Vintage {
    fn last_month(&self) -> Month {
        let mut m = self.first_month;
        for _ in 1..self.levels.len() {
            m = m.next();
        }
        m
    }
}

/// Annualised quarter-over-quarter growth in percentage points,
/// `((z_t / z_{t-1})^4 - 1) · 100`.
pub fn annualized_growth(level: f64, previous: f64) -> f64 {
    ((level / previous).powi(4) - 1.0) * 100.0
}

// Average levels over complete quarters, then growth between consecutive ones.
fn rates_from_levels(first_month: Month, levels: &[f64]) -> Vec<(Quarter, f64)> {
    let mut quarters: Vec<(Quarter, f64)> = Vec::new();
    let mut month = first_month;
    let mut current: Option<(Quarter, f64, u8)> = None;
    for &level in levels {
        let q = Quarter::of_month(month);
        match current.as_mut() {
            Some((cq, sum, n)) if *cq == q => {
                *sum += level;
                *n += 1;
            }
            _ => {
                if let Some((cq, sum, 3)) = current {
                    quarters.push((cq, sum / 3.0));
                }
                current = Some((q, level, 1));
            }
        }
        month = month.next();
    }
    if let Some((cq, sum, 3)) = current {
        quarters.push((cq, sum / 3.0));
    }
    quarters
        .windows(2)
        .filter(|w| w[1].0.diff(w[0].0) == 1)
        .map(|w| (w[1].0, annualized_growth(w[1].1, w[0].1)))
        .collect()
}

/// Monthly CPI levels for every released vintage.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VintageStore {
    vintages: BTreeMap<Quarter, Vintage>,
}

impl VintageStore {
    /// Builds the store from records in any order.
    ///
    /// Each vintage must cover a contiguous run of months without duplicates
    /// and may not extend past the end of its release quarter.
    pub fn from_records(records: impl IntoIterator<Item = CpiRecord>) -> Result<Self> {
        let mut grouped: BTreeMap<Quarter, BTreeMap<Month, f64>> = BTreeMap::new();
        for r in records {
            if !(r.level.is_finite() && r.level > 0.0) {
                return Err(Error::Parse(format!(
                    "vintage {} month {}: CPI level must be positive, got {}",
                    r.vintage, r.month, r.level
                )));
            }
            let months = grouped.entry(r.vintage).or_default();
            if months.insert(r.month, r.level).is_some() {
                return Err(Error::Parse(format!(
                    "vintage {} lists month {} twice",
                    r.vintage, r.month
                )));
            }
        }
        let mut vintages = BTreeMap::new();
        for (vintage, months) in grouped {
            let (&first_month, _) = months.iter().next().expect("groups are nonempty");
            let (&last_month, _) = months.iter().next_back().expect("groups are nonempty");
            if last_month.diff(first_month) as usize + 1 != months.len() {
                return Err(Error::Parse(format!(
                    "vintage {vintage} has gaps between {first_month} and {last_month}"
                )));
            }
            if Quarter::of_month(last_month) > vintage {
                return Err(Error::Parse(format!(
                    "vintage {vintage} covers {last_month}, after its release quarter"
                )));
            }
            let levels: Vec<f64> = months.into_values().collect();
            let rates = rates_from_levels(first_month, &levels);
            vintages.insert(vintage, Vintage { first_month, levels, rates });
        }
        Ok(VintageStore { vintages })
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let records = rdr.deserialize().collect::<std::result::Result<Vec<CpiRecord>, _>>()?;
        Self::from_records(records)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    /// Writes the canonical CSV, sorted by vintage then month.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        for record in self.records() {
            wtr.serialize(record)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn records(&self) -> impl Iterator<Item = CpiRecord> + '_ {
        self.vintages.iter().flat_map(|(&vintage, v)| {
            let mut month = v.first_month;
            v.levels.iter().map(move |&level| {
                let r = CpiRecord { vintage, month, level };
                month = month.next();
                r
            })
        })
    }

    pub fn vintages(&self) -> impl Iterator<Item = Quarter> + '_ {
        self.vintages.keys().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.vintages.is_empty()
    }

    /// Last month covered by a vintage.
    pub fn last_month(&self, vintage: Quarter) -> Result<Month> {
        self.vintages
            .get(&vintage)
            .map(Vintage::last_month)
            .ok_or(Error::MissingVintage(vintage))
    }

    /// Quarterly inflation rates of a vintage, oldest first. Quarters with
    /// incompletely observed months are dropped.
    pub fn quarterly_rates(&self, vintage: Quarter) -> Result<&[(Quarter, f64)]> {
        let v = self.vintages.get(&vintage).ok_or(Error::MissingVintage(vintage))?;
        if v.rates.is_empty() {
            return Err(Error::InsufficientData(format!(
                "vintage {vintage} has fewer than 2 complete quarters"
            )));
        }
        Ok(&v.rates)
    }

    /// The most recent vintage released at or before `issue`.
    pub fn latest_vintage_at(&self, issue: Quarter) -> Result<Quarter> {
        self.vintages
            .range(..=issue)
            .next_back()
            .map(|(q, _)| *q)
            .ok_or(Error::NoDataYet(issue))
    }

    pub fn earliest_vintage(&self) -> Option<Quarter> {
        self.vintages.keys().next().copied()
    }

    /// Rate of `target` as published in `evaluation_vintage`.
    pub fn realized(&self, target: Quarter, evaluation_vintage: Quarter) -> Result<f64> {
        let rates = self.quarterly_rates(evaluation_vintage)?;
        rates
            .binary_search_by(|(q, _)| q.cmp(&target))
            .map(|i| rates[i].1)
            .map_err(|_| Error::PendingObservation { target, vintage: evaluation_vintage })
    }

    /// Most recent rate observable when issuing at `issue`, with its quarter.
    pub fn last_rate_at(&self, issue: Quarter) -> Result<(Quarter, f64)> {
        let rates = self.quarterly_rates(self.latest_vintage_at(issue)?)?;
        Ok(*rates.last().expect("quarterly_rates is nonempty"))
    }

    /// The `length` most recent rates available at `issue`, as an ensemble.
    pub fn pnc_window(&self, issue: Quarter, length: usize) -> Result<Ensemble> {
        let rates = self.quarterly_rates(self.latest_vintage_at(issue)?)?;
        window_of(rates, issue, length)
    }

    /// Like [`pnc_window`](Self::pnc_window), but for issue quarters that
    /// predate the first release it falls back to the earliest vintage,
    /// truncated to quarters before `issue`. Only used to build training
    /// covariates for origins that are never themselves forecast.
    pub fn pnc_window_backfilled(&self, issue: Quarter, length: usize) -> Result<Ensemble> {
        match self.latest_vintage_at(issue) {
            Ok(v) => window_of(self.quarterly_rates(v)?, issue, length),
            Err(Error::NoDataYet(_)) => {
                let earliest = self.earliest_vintage().ok_or(Error::NoDataYet(issue))?;
                let rates = self.quarterly_rates(earliest)?;
                let end = rates.partition_point(|(q, _)| *q < issue);
                window_of(&rates[..end], issue, length)
            }
            Err(e) => Err(e),
        }
    }
}

fn window_of(rates: &[(Quarter, f64)], issue: Quarter, length: usize) -> Result<Ensemble> {
    if length == 0 || rates.len() < length {
        return Err(Error::InsufficientHistory { issue, needed: length, available: rates.len() });
    }
    Ensemble::new(rates[rates.len() - length..].iter().map(|(_, r)| *r).collect::<Vec<_>>())
}

/// Point forecasts of the survey panel keyed by origin, horizon and
/// forecaster. Missing forecasts are simply absent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SurveyPanel {
    cells: BTreeMap<(Quarter, u8), BTreeMap<String, f64>>,
}

impl SurveyPanel {
    pub fn from_records(records: impl IntoIterator<Item = PanelRecord>) -> Result<Self> {
        let mut cells: BTreeMap<(Quarter, u8), BTreeMap<String, f64>> = BTreeMap::new();
        for r in records {
            if !(1..=5).contains(&r.horizon) {
                return Err(Error::Parse(format!("horizon {} outside 1..=5", r.horizon)));
            }
            if !r.value.is_finite() {
                return Err(Error::Parse(format!(
                    "non-finite forecast from {} at {} h={}",
                    r.forecaster_id, r.origin, r.horizon
                )));
            }
            let cell = cells.entry((r.origin, r.horizon)).or_default();
            if cell.insert(r.forecaster_id.clone(), r.value).is_some() {
                return Err(Error::Parse(format!(
                    "duplicate forecast from {} at {} h={}",
                    r.forecaster_id, r.origin, r.horizon
                )));
            }
        }
        Ok(SurveyPanel { cells })
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let records = rdr.deserialize().collect::<std::result::Result<Vec<PanelRecord>, _>>()?;
        Self::from_records(records)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        for record in self.records() {
            wtr.serialize(record)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn records(&self) -> impl Iterator<Item = PanelRecord> + '_ {
        self.cells.iter().flat_map(|(&(origin, horizon), members)| {
            members.iter().map(move |(id, &value)| PanelRecord {
                origin,
                horizon,
                forecaster_id: id.clone(),
                value,
            })
        })
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Values submitted for one origin and horizon, keyed by forecaster.
    pub fn members(&self, origin: Quarter, horizon: u8) -> Option<&BTreeMap<String, f64>> {
        self.cells.get(&(origin, horizon))
    }

    pub fn value(&self, origin: Quarter, horizon: u8, forecaster_id: &str) -> Option<f64> {
        self.cells.get(&(origin, horizon))?.get(forecaster_id).copied()
    }

    pub fn forecaster_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .cells
            .values()
            .flat_map(|m| m.keys().cloned())
            .collect();
        ids.sort();
        ids.dedup();
        ids
    }

    /// The panel as an ensemble; needs at least two members.
    pub fn ensemble(&self, origin: Quarter, horizon: u8) -> Result<Ensemble> {
        let members = self.members(origin, horizon).map_or(0, BTreeMap::len);
        if members < 2 {
            return Err(Error::InsufficientPanel { origin, horizon, members });
        }
        Ensemble::new(self.cells[&(origin, horizon)].values().copied().collect::<Vec<_>>())
    }

    /// Panel median (even counts averaged) and sample variance.
    pub fn spf_summary(&self, origin: Quarter, horizon: u8) -> Result<(f64, f64)> {
        let e = self.ensemble(origin, horizon)?;
        Ok((e.median(), e.sample_variance()))
    }
}

/// Summary covariates for one origin and horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovariateRow {
    pub origin: Quarter,
    pub horizon: u8,
    pub mu_spf: f64,
    pub sigma2_spf: f64,
    pub mu_pnc: f64,
    pub sigma2_pnc: f64,
    /// Observed rate of the target quarter, `None` while pending.
    pub realized: Option<f64>,
}

impl CovariateRow {
    pub fn target(&self) -> Quarter {
        self.origin + (self.horizon as i64 - 1)
    }

    pub fn sigma_spf(&self) -> f64 {
        self.sigma2_spf.sqrt()
    }

    pub fn sigma_pnc(&self) -> f64 {
        self.sigma2_pnc.sqrt()
    }
}

/// SHA-256 of a byte slice as lowercase hex.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(s: &str) -> Quarter {
        s.parse().unwrap()
    }

    fn m(s: &str) -> Month {
        s.parse().unwrap()
    }

    /// Levels growing by `ratio` per quarter, flat within each quarter.
    fn vintage_records(vintage: &str, start: &str, months: usize, ratio: f64) -> Vec<CpiRecord> {
        let mut month = m(start);
        (0..months)
            .map(|i| {
                let r = CpiRecord {
                    vintage: q(vintage),
                    month,
                    level: 100.0 * ratio.powi((i / 3) as i32),
                };
                month = month.next();
                r
            })
            .collect()
    }

    #[test]
    fn constant_levels_give_zero_rates() {
        let store = VintageStore::from_records(vintage_records("1995Q1", "1990-01", 60, 1.0)).unwrap();
        let rates = store.quarterly_rates(q("1995Q1")).unwrap();
        assert_eq!(rates.len(), 19);
        assert!(rates.iter().all(|(_, r)| *r == 0.0));
    }

    #[test]
    fn growth_formula() {
        assert!((annualized_growth(100.5, 100.0) - 2.0150).abs() < 1e-4);
        let store = VintageStore::from_records(vintage_records("1995Q1", "1990-01", 12, 1.005)).unwrap();
        for (_, r) in store.quarterly_rates(q("1995Q1")).unwrap() {
            assert!((r - 2.01505006249996).abs() < 1e-9);
        }
    }

    #[test]
    fn partial_quarters_dropped() {
        // Feb 1990 .. Apr 1991: 1990Q1 and 1991Q2 are incomplete.
        let store = VintageStore::from_records(vintage_records("1991Q2", "1990-02", 15, 1.01)).unwrap();
        let rates = store.quarterly_rates(q("1991Q2")).unwrap();
        let quarters: Vec<String> = rates.iter().map(|(q, _)| q.to_string()).collect();
        assert_eq!(quarters, ["1990Q3", "1990Q4", "1991Q1"]);
    }

    #[test]
    fn store_validation() {
        let mut recs = vintage_records("1995Q1", "1990-01", 12, 1.0);
        recs.remove(5);
        assert!(VintageStore::from_records(recs).is_err());
        let mut recs = vintage_records("1995Q1", "1990-01", 12, 1.0);
        recs.push(recs[3].clone());
        assert!(VintageStore::from_records(recs).is_err());
        assert!(VintageStore::from_records(vintage_records("1990Q2", "1990-01", 12, 1.0)).is_err());
        let store = VintageStore::from_records(vintage_records("1995Q1", "1994-10", 3, 1.0)).unwrap();
        assert!(matches!(store.quarterly_rates(q("1995Q1")), Err(Error::InsufficientData(_))));
        assert!(matches!(store.quarterly_rates(q("1996Q1")), Err(Error::MissingVintage(_))));
    }

    #[test]
    fn latest_vintage_lookup() {
        let mut recs = vintage_records("1994Q3", "1990-01", 54, 1.0);
        recs.extend(vintage_records("1994Q4", "1990-01", 57, 1.0));
        recs.extend(vintage_records("1995Q2", "1990-01", 63, 1.0));
        let store = VintageStore::from_records(recs).unwrap();
        assert_eq!(store.latest_vintage_at(q("2008Q1")).unwrap(), q("1995Q2"));
        assert_eq!(store.latest_vintage_at(q("1995Q1")).unwrap(), q("1994Q4"));
        assert_eq!(store.latest_vintage_at(q("1994Q3")).unwrap(), q("1994Q3"));
        assert!(matches!(store.latest_vintage_at(q("1994Q2")), Err(Error::NoDataYet(_))));
    }

    #[test]
    fn pnc_window_and_realized() {
        let store = VintageStore::from_records(vintage_records("1996Q1", "1990-01", 72, 1.01)).unwrap();
        let rates = store.quarterly_rates(q("1996Q1")).unwrap();
        assert_eq!(rates.len(), 23);
        let w = store.pnc_window(q("1996Q1"), 20).unwrap();
        assert_eq!(w.len(), 20);
        assert!((w.median() - annualized_growth(1.01, 1.0)).abs() < 1e-9);
        assert!(matches!(
            store.pnc_window(q("1996Q1"), 24),
            Err(Error::InsufficientHistory { needed: 24, available: 23, .. })
        ));
        assert!(store.realized(q("1995Q4"), q("1996Q1")).is_ok());
        assert!(matches!(
            store.realized(q("1996Q1"), q("1996Q1")),
            Err(Error::PendingObservation { .. })
        ));
        // backfilled windows before the first release truncate the earliest vintage
        let early = store.pnc_window_backfilled(q("1993Q1"), 8).unwrap();
        assert_eq!(early.len(), 8);
        assert!(store.pnc_window(q("1993Q1"), 8).is_err());
        assert!(store.pnc_window_backfilled(q("1991Q1"), 8).is_err());
    }

    #[test]
    fn panel_summary() {
        let recs = ["1", "2", "3", "100"].iter().zip([1.0, 2.0, 3.0, 100.0]).map(|(id, v)| PanelRecord {
            origin: q("2008Q1"),
            horizon: 2,
            forecaster_id: id.to_string(),
            value: v,
        });
        let panel = SurveyPanel::from_records(recs).unwrap();
        let (median, var) = panel.spf_summary(q("2008Q1"), 2).unwrap();
        assert_eq!(median, 2.5);
        assert!((var - 7205.0 / 3.0).abs() < 1e-9);
        assert!(matches!(panel.spf_summary(q("2008Q1"), 1), Err(Error::InsufficientPanel { members: 0, .. })));

        let single = SurveyPanel::from_records([PanelRecord {
            origin: q("2008Q1"),
            horizon: 1,
            forecaster_id: "463".into(),
            value: 2.0,
        }])
        .unwrap();
        assert!(matches!(single.spf_summary(q("2008Q1"), 1), Err(Error::InsufficientPanel { members: 1, .. })));
        assert_eq!(single.value(q("2008Q1"), 1, "463"), Some(2.0));
    }

    #[test]
    fn panel_rejects_bad_records() {
        let rec = |h: u8, id: &str| PanelRecord { origin: q("2008Q1"), horizon: h, forecaster_id: id.into(), value: 1.0 };
        assert!(SurveyPanel::from_records([rec(6, "a")]).is_err());
        assert!(SurveyPanel::from_records([rec(1, "a"), rec(1, "a")]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let store = VintageStore::from_records(vintage_records("1995Q1", "1990-01", 24, 1.01)).unwrap();
        let mut buf = Vec::new();
        store.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("vintage,month,level\n1995Q1,1990-01,100"));
        assert_eq!(VintageStore::from_csv_reader(&buf[..]).unwrap(), store);
    }

    proptest! {
        #[test]
        fn rates_insensitive_to_record_order(seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut recs = vintage_records("1996Q1", "1990-01", 60, 1.007);
            recs.extend(vintage_records("1995Q3", "1990-01", 57, 1.004));
            let sorted = VintageStore::from_records(recs.clone()).unwrap();
            recs.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(VintageStore::from_records(recs).unwrap(), sorted);
        }

        #[test]
        fn panel_median_within_range(values in proptest::collection::vec(-10.0..10.0f64, 2..30)) {
            let recs = values.iter().enumerate().map(|(i, &v)| PanelRecord {
                origin: "2000Q1".parse().unwrap(), horizon: 1, forecaster_id: i.to_string(), value: v,
            });
            let panel = SurveyPanel::from_records(recs).unwrap();
            let (median, var) = panel.spf_summary("2000Q1".parse().unwrap(), 1).unwrap();
            let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo <= median && median <= hi);
            prop_assert_eq!(var == 0.0, lo == hi);
        }

        #[test]
        fn newer_vintages_do_not_change_past_windows(bump in 0.5..2.0f64) {
            let base = vintage_records("1996Q1", "1990-01", 72, 1.01);
            let store = VintageStore::from_records(base.clone()).unwrap();
            let mut grown = base;
            grown.extend(vintage_records("1996Q2", "1990-01", 75, 1.0 + bump / 100.0));
            let grown = VintageStore::from_records(grown).unwrap();
            prop_assert_eq!(store.pnc_window(q("1996Q1"), 20).unwrap(), grown.pnc_window(q("1996Q1"), 20).unwrap());
            prop_assert_eq!(store.last_rate_at(q("1996Q1")).unwrap(), grown.last_rate_at(q("1996Q1")).unwrap());
        }
    }
}
