//! Forecast methods: the survey ensemble and its median, the two no-change
//! references, the SPF median with MSE, and the two postprocessing models.

use serde::{Deserialize, Serialize};

use crate::data::{CovariateRow, SurveyPanel, VintageStore};
use crate::distributions::{Gaussian, GaussianMixture2, PredictiveDistribution, TwoPieceNormal};
use crate::error::{Error, Result};
use crate::quarter::Quarter;

/// Shortest error history an MSE-based method will score with.
pub const MIN_MSE_ERRORS: usize = 8;

/// A predictive distribution together with the point forecast it implies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub distribution: PredictiveDistribution,
    pub point: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HrVariant {
    /// Location and both scales driven by the survey median and variance.
    SpfOnly,
    /// Adds the no-change window median and variance as covariates.
    SpfPnc,
}

/// Heteroscedastic regression coefficients for a two-piece normal:
///
/// ```text
/// μ   = a  + b1·μ_SPF   + b2·μ_PNC
/// σ1² = c1 + d11·σ²_SPF + d12·σ²_PNC
/// σ2² = c2 + d21·σ²_SPF + d22·σ²_PNC
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HrParams {
    pub a: f64,
    pub b1: f64,
    pub b2: f64,
    pub c1: f64,
    pub d11: f64,
    pub d12: f64,
    pub c2: f64,
    pub d21: f64,
    pub d22: f64,
    pub variant: HrVariant,
}

impl HrParams {
    /// Validates the nonnegativity constraints and, for the SPF-only
    /// variant, that the no-change coefficients are zero.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: f64,
        b1: f64,
        b2: f64,
        c1: f64,
        d11: f64,
        d12: f64,
        c2: f64,
        d21: f64,
        d22: f64,
        variant: HrVariant,
    ) -> Result<Self> {
        let p = HrParams { a, b1, b2, c1, d11, d12, c2, d21, d22, variant };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.a, self.b1, self.b2, self.c1, self.d11, self.d12, self.c2, self.d21, self.d22];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("HR coefficients must be finite".into()));
        }
        if [self.c1, self.d11, self.d12, self.c2, self.d21, self.d22].iter().any(|&x| x < 0.0) {
            return Err(Error::InvalidParameter("HR variance coefficients must be nonnegative".into()));
        }
        if self.variant == HrVariant::SpfOnly && (self.b2 != 0.0 || self.d12 != 0.0 || self.d22 != 0.0) {
            return Err(Error::InvalidParameter(
                "SPF-only HR model cannot carry no-change coefficients".into(),
            ));
        }
        Ok(())
    }

    /// Pass-through model: the survey median as mode, the survey spread on
    /// both sides.
    pub fn identity(variant: HrVariant) -> Self {
        HrParams {
            a: 0.0,
            b1: 1.0,
            b2: 0.0,
            c1: 0.0,
            d11: 1.0,
            d12: 0.0,
            c2: 0.0,
            d21: 1.0,
            d22: 0.0,
            variant,
        }
    }
}

/// Mode and squared scales without flooring.
pub fn hr_moments(params: &HrParams, row: &CovariateRow) -> (f64, f64, f64) {
    let mu = params.a + params.b1 * row.mu_spf + params.b2 * row.mu_pnc;
    let var1 = params.c1 + params.d11 * row.sigma2_spf + params.d12 * row.sigma2_pnc;
    let var2 = params.c2 + params.d21 * row.sigma2_spf + params.d22 * row.sigma2_pnc;
    (mu, var1, var2)
}

pub fn hr_predict(params: &HrParams, row: &CovariateRow) -> Result<TwoPieceNormal> {
    if row.sigma2_spf < 0.0 || row.sigma2_pnc < 0.0 {
        return Err(Error::InvalidParameter("covariate variances must be nonnegative".into()));
    }
    let (mu, var1, var2) = hr_moments(params, row);
    TwoPieceNormal::new(mu, var1.max(0.0).sqrt(), var2.max(0.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GmVariant {
    /// Component scales are the survey and window standard deviations.
    Standard,
    /// Component scales are estimated.
    VarianceAdjusted,
}

/// Mixture weight on the survey component and, for the variance-adjusted
/// variant, the two fitted component scales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmParams {
    pub alpha: f64,
    pub sigmas: Option<(f64, f64)>,
    pub variant: GmVariant,
}

impl GmParams {
    pub fn standard(alpha: f64) -> Result<Self> {
        check_weight(alpha)?;
        Ok(GmParams { alpha, sigmas: None, variant: GmVariant::Standard })
    }

    pub fn variance_adjusted(alpha: f64, sigma1: f64, sigma2: f64) -> Result<Self> {
        check_weight(alpha)?;
        if !(sigma1 > 0.0 && sigma2 > 0.0 && sigma1.is_finite() && sigma2.is_finite()) {
            return Err(Error::InvalidParameter("GM scales must be positive".into()));
        }
        Ok(GmParams { alpha, sigmas: Some((sigma1, sigma2)), variant: GmVariant::VarianceAdjusted })
    }
}

fn check_weight(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("mixture weight {alpha} outside [0, 1]")))
    }
}

/// Mixture anchored at the survey median (component 1) and the window
/// median (component 2).
pub fn gm_predict(params: &GmParams, row: &CovariateRow) -> Result<GaussianMixture2> {
    let (s1, s2) = match (params.variant, params.sigmas) {
        (GmVariant::Standard, _) => {
            if !(row.sigma2_spf > 0.0 && row.sigma2_pnc > 0.0) {
                return Err(Error::InvalidParameter(
                    "standard GM needs positive survey and window spreads".into(),
                ));
            }
            (row.sigma_spf(), row.sigma_pnc())
        }
        (GmVariant::VarianceAdjusted, Some(s)) => s,
        (GmVariant::VarianceAdjusted, None) => {
            return Err(Error::InvalidParameter("variance-adjusted GM needs scales".into()))
        }
    };
    GaussianMixture2::new(params.alpha, row.mu_spf, s1, row.mu_pnc, s2)
}

/// Squared errors of one method at one horizon, all realized before the
/// issue quarter, most recent last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseState {
    squared_errors: Vec<f64>,
    window: usize,
}

impl MseState {
    /// Keeps the last `window` squared errors.
    pub fn from_squared_errors(mut squared_errors: Vec<f64>, window: usize) -> Self {
        if squared_errors.len() > window {
            squared_errors.drain(..squared_errors.len() - window);
        }
        MseState { squared_errors, window }
    }

    /// Errors of the traditional no-change forecast at horizon `h`, taken
    /// inside the vintage available at `issue`: for each of the last
    /// `window` observed quarters `s`, the no-change forecast of `s` was the
    /// rate of `s - h`.
    pub fn traditional_no_change(
        store: &VintageStore,
        issue: Quarter,
        horizon: u8,
        window: usize,
    ) -> Result<Self> {
        let rates = store.quarterly_rates(store.latest_vintage_at(issue)?)?;
        let lag = horizon as usize;
        let errors: Vec<f64> = rates
            .windows(lag + 1)
            .filter(|w| w[lag].0.diff(w[0].0) == lag as i64)
            .map(|w| (w[lag].1 - w[0].1).powi(2))
            .collect();
        Ok(Self::from_squared_errors(errors, window))
    }

    /// Errors of the survey median over the past `window` origins whose
    /// targets are already observed at `issue`, scored against the vintage
    /// available at `issue`. Origins without a usable panel are skipped.
    pub fn spf_median(
        panel: &SurveyPanel,
        store: &VintageStore,
        issue: Quarter,
        horizon: u8,
        window: usize,
    ) -> Result<Self> {
        let vintage = store.latest_vintage_at(issue)?;
        let last_origin = issue - horizon as i64;
        let first_origin = last_origin - (window as i64 - 1);
        let errors = Quarter::range_inclusive(first_origin, last_origin)
            .filter_map(|origin| {
                let (median, _) = panel.spf_summary(origin, horizon).ok()?;
                let target = origin + (horizon as i64 - 1);
                let y = store.realized(target, vintage).ok()?;
                Some((median - y).powi(2))
            })
            .collect();
        Ok(Self::from_squared_errors(errors, window))
    }

    pub fn len(&self) -> usize {
        self.squared_errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.squared_errors.is_empty()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Mean squared error; fails with fewer than [`MIN_MSE_ERRORS`] errors.
    pub fn mse(&self) -> Result<f64> {
        let need = MIN_MSE_ERRORS.min(self.window.max(1));
        if self.squared_errors.len() < need {
            return Err(Error::InsufficientData(format!(
                "MSE window holds {} errors, need {need}",
                self.squared_errors.len()
            )));
        }
        Ok(self.squared_errors.iter().sum::<f64>() / self.squared_errors.len() as f64)
    }
}

/// How the SPF-median-with-MSE method turns the MSE into a scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MseScale {
    /// Root mean squared error, in percentage points.
    #[default]
    Rmse,
    /// The mean squared error itself.
    Mse,
}

impl std::str::FromStr for MseScale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "rmse" => Ok(MseScale::Rmse),
            "mse" => Ok(MseScale::Mse),
            other => Err(Error::Config(format!("spf_mse_scale must be rmse or mse, got {other:?}"))),
        }
    }
}

/// Gaussian centred on the most recent observed rate, scaled by the root
/// MSE of past no-change forecasts.
pub fn traditional_no_change(
    issue: Quarter,
    store: &VintageStore,
    mse: &MseState,
) -> Result<Forecast> {
    let (_, point) = store.last_rate_at(issue)?;
    let sigma = mse.mse()?.sqrt();
    Ok(Forecast { distribution: Gaussian::new(point, sigma)?.into(), point })
}

/// Equal mass on the `length` most recent rates; the median is the point
/// forecast. Identical at every horizon.
pub fn probabilistic_no_change(issue: Quarter, length: usize, store: &VintageStore) -> Result<Forecast> {
    let window = store.pnc_window(issue, length)?;
    let point = window.median();
    Ok(Forecast { distribution: window.into(), point })
}

/// The raw survey panel as a discrete predictive distribution.
pub fn spf_ensemble(origin: Quarter, horizon: u8, panel: &SurveyPanel) -> Result<Forecast> {
    let e = panel.ensemble(origin, horizon)?;
    let point = e.median();
    Ok(Forecast { distribution: e.into(), point })
}

/// Gaussian around the survey median with a scale from the median's past MSE.
pub fn spf_median_mse(
    origin: Quarter,
    horizon: u8,
    panel: &SurveyPanel,
    mse: &MseState,
    scale: MseScale,
) -> Result<Forecast> {
    let (median, _) = panel.spf_summary(origin, horizon)?;
    let mse = mse.mse()?;
    let sigma = match scale {
        MseScale::Rmse => mse.sqrt(),
        MseScale::Mse => mse,
    };
    Ok(Forecast { distribution: Gaussian::new(median, sigma)?.into(), point: median })
}

/// HR forecast; the point forecast is the median of the two-piece normal.
pub fn hr_forecast(params: &HrParams, row: &CovariateRow) -> Result<Forecast> {
    let d = hr_predict(params, row)?;
    let point = d.quantile(0.5)?;
    Ok(Forecast { distribution: d.into(), point })
}

/// GM forecast; the point forecast is the mixture median.
pub fn gm_forecast(params: &GmParams, row: &CovariateRow) -> Result<Forecast> {
    let d = gm_predict(params, row)?;
    let point = d.quantile(0.5)?;
    Ok(Forecast { distribution: d.into(), point })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CpiRecord, PanelRecord};
    use crate::distributions::SIGMA_FLOOR;
    use crate::scoring::crps;

    fn q(s: &str) -> Quarter {
        s.parse().unwrap()
    }

    fn row(mu_spf: f64, s_spf: f64, mu_pnc: f64, s_pnc: f64) -> CovariateRow {
        CovariateRow {
            origin: q("2008Q1"),
            horizon: 2,
            mu_spf,
            sigma2_spf: s_spf * s_spf,
            mu_pnc,
            sigma2_pnc: s_pnc * s_pnc,
            realized: None,
        }
    }

    fn flat_store(vintage: &str, level_growth: f64) -> VintageStore {
        let mut month = "1985-01".parse().unwrap();
        let v = q(vintage);
        let months = (v.first_month().diff(month)) as usize;
        let recs: Vec<CpiRecord> = (0..months)
            .map(|i| {
                let r = CpiRecord { vintage: v, month, level: 100.0 * level_growth.powi((i / 3) as i32) };
                month = month.next();
                r
            })
            .collect();
        VintageStore::from_records(recs).unwrap()
    }

    #[test]
    fn table_three_parameters() {
        let p = HrParams::new(0.36, 0.53, 0.0, 0.0, 0.52, 0.0, 0.0, 0.0, 3.10, HrVariant::SpfPnc).unwrap();
        let d = hr_predict(&p, &row(2.90, 0.82, 3.30, 1.86)).unwrap();
        assert!((d.mu() - 1.90).abs() <= 0.01);
        assert!((d.sigma1() - 0.59).abs() <= 0.01);
        assert!((d.sigma2() - 3.27).abs() <= 0.01);
        assert!((d.quantile(0.5).unwrap() - 3.67).abs() <= 0.01);
    }

    #[test]
    fn hr_identity_and_constant() {
        let r = row(2.9, 0.82, 3.3, 1.86);
        let d = hr_predict(&HrParams::identity(HrVariant::SpfPnc), &r).unwrap();
        assert_eq!((d.mu(), d.sigma1(), d.sigma2()), (2.9, r.sigma_spf(), r.sigma_spf()));
        let p = HrParams::new(5.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, HrVariant::SpfPnc).unwrap();
        let d = hr_predict(&p, &r).unwrap();
        assert_eq!((d.mu(), d.sigma1(), d.sigma2()), (5.0, SIGMA_FLOOR, SIGMA_FLOOR));
    }

    #[test]
    fn hr_affine_by_hand() {
        let p = HrParams::new(-0.2, 0.7, 0.4, 0.1, 0.3, 0.2, 0.05, 0.9, 1.1, HrVariant::SpfPnc).unwrap();
        let r = row(2.1, 0.6, 3.4, 1.5);
        let d = hr_predict(&p, &r).unwrap();
        let mu = -0.2 + 0.7 * 2.1 + 0.4 * 3.4;
        let v1 = 0.1 + 0.3 * r.sigma2_spf + 0.2 * r.sigma2_pnc;
        let v2 = 0.05 + 0.9 * r.sigma2_spf + 1.1 * r.sigma2_pnc;
        assert_eq!(d.mu(), mu);
        assert_eq!(d.sigma1(), v1.sqrt());
        assert_eq!(d.sigma2(), v2.sqrt());
    }

    #[test]
    fn hr_param_constraints() {
        assert!(HrParams::new(0.0, 1.0, 0.0, -0.1, 1.0, 0.0, 0.0, 1.0, 0.0, HrVariant::SpfPnc).is_err());
        assert!(HrParams::new(0.0, 1.0, 0.5, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, HrVariant::SpfOnly).is_err());
        assert!(HrParams::identity(HrVariant::SpfOnly).validate().is_ok());
    }

    #[test]
    fn gm_cases() {
        let r = row(2.20, 0.85, 3.05, 1.39);
        let std = gm_predict(&GmParams::standard(0.3).unwrap(), &r).unwrap();
        let [(_, g1), (_, g2)] = std.components();
        assert!((g1.sigma() - 0.85).abs() < 1e-15 && (g2.sigma() - 1.39).abs() < 1e-15);
        let other = gm_predict(&GmParams::standard(0.8).unwrap(), &r).unwrap();
        assert_eq!(other.components()[0].1, g1);
        assert_eq!(other.components()[1].1, g2);

        let va = GmParams::variance_adjusted(0.59, 0.98, 1.30).unwrap();
        let f = gm_forecast(&va, &r).unwrap();
        assert!((f.point - 2.49).abs() <= 0.01);

        let one = gm_predict(&GmParams::standard(1.0).unwrap(), &r).unwrap();
        let g = Gaussian::new(2.20, 0.85).unwrap();
        for y in [-1.0, 2.0, 2.2, 5.0] {
            assert!((one.cdf(y) - g.cdf(y)).abs() < 1e-15);
        }
        assert!(gm_predict(&GmParams::standard(0.5).unwrap(), &row(2.0, 0.0, 3.0, 1.0)).is_err());
    }

    #[test]
    fn spf_ensemble_and_mse_wrapper() {
        let recs = [("a", 2.0), ("b", 3.0)].map(|(id, v)| PanelRecord {
            origin: q("2008Q1"),
            horizon: 1,
            forecaster_id: id.into(),
            value: v,
        });
        let panel = SurveyPanel::from_records(recs).unwrap();
        let f = spf_ensemble(q("2008Q1"), 1, &panel).unwrap();
        assert_eq!(f.point, 2.5);
        assert!((crps(&f.distribution, 2.5) - 0.25).abs() < 1e-15);

        let zeros = MseState::from_squared_errors(vec![0.0; 40], 40);
        let f = spf_median_mse(q("2008Q1"), 1, &panel, &zeros, MseScale::Rmse).unwrap();
        assert_eq!(f.distribution, Gaussian::new(2.5, SIGMA_FLOOR).unwrap().into());
        let ones = MseState::from_squared_errors(vec![1.0; 40], 40);
        let f = spf_median_mse(q("2008Q1"), 1, &panel, &ones, MseScale::Rmse).unwrap();
        assert_eq!(f.distribution, Gaussian::new(2.5, 1.0).unwrap().into());
        let fours = MseState::from_squared_errors(vec![4.0; 40], 40);
        let rmse = spf_median_mse(q("2008Q1"), 1, &panel, &fours, MseScale::Rmse).unwrap();
        let mse = spf_median_mse(q("2008Q1"), 1, &panel, &fours, MseScale::Mse).unwrap();
        assert_eq!(rmse.distribution, Gaussian::new(2.5, 2.0).unwrap().into());
        assert_eq!(mse.distribution, Gaussian::new(2.5, 4.0).unwrap().into());

        let short = MseState::from_squared_errors(vec![1.0; 5], 40);
        assert!(spf_median_mse(q("2008Q1"), 1, &panel, &short, MseScale::Rmse).is_err());
    }

    #[test]
    fn no_change_on_constant_history() {
        let store = flat_store("2000Q1", 1.0);
        let mse = MseState::traditional_no_change(&store, q("2000Q1"), 1, 20).unwrap();
        assert_eq!(mse.len(), 20);
        let f = traditional_no_change(q("2000Q1"), &store, &mse).unwrap();
        assert_eq!(f.point, 0.0);
        assert!(crps(&f.distribution, 0.0) < 1e-6);
        let rates = store.quarterly_rates(q("2000Q1")).unwrap();
        assert_eq!(f.point, rates.last().unwrap().1);

        let pnc = probabilistic_no_change(q("2000Q1"), 20, &store).unwrap();
        assert_eq!(pnc.point, 0.0);
        assert!(matches!(
            probabilistic_no_change(q("2000Q1"), 200, &store),
            Err(Error::InsufficientHistory { .. })
        ));
    }

    #[test]
    fn mse_window_keeps_most_recent() {
        let s = MseState::from_squared_errors((1..=50).map(f64::from).collect(), 40);
        assert_eq!(s.len(), 40);
        assert_eq!(s.mse().unwrap(), (11..=50).sum::<i32>() as f64 / 40.0);
    }

    #[test]
    fn point_is_median_for_every_method() {
        let r = row(2.4, 0.7, 3.1, 1.6);
        let hr = HrParams::new(0.3, 0.8, 0.1, 0.05, 0.6, 0.1, 0.1, 0.4, 1.2, HrVariant::SpfPnc).unwrap();
        let gm = GmParams::variance_adjusted(0.4, 0.9, 1.4).unwrap();
        for f in [hr_forecast(&hr, &r).unwrap(), gm_forecast(&gm, &r).unwrap()] {
            assert!((f.point - f.distribution.quantile(0.5).unwrap()).abs() < 1e-9);
        }
    }
}
