//! Proper scoring: closed-form CRPS for every predictive distribution, a
//! quadrature oracle for the CRPS integral, absolute error, aggregation and
//! the Diebold–Mariano test with two-digit tail-probability codes.

use serde::{Deserialize, Serialize};

use crate::distributions::{Ensemble, Gaussian, GaussianMixture2, PredictiveDistribution, TwoPieceNormal};
use crate::error::{Error, Result};
use crate::normal::{self, FRAC_1_SQRT_PI};
use crate::quadrature::integrate_pieces;
use crate::quarter::Quarter;

const NUMERIC_TOL: f64 = 1e-11;

/// CRPS by direct integration of `(F(x) - 1{x ≥ y})²`.
///
/// For an ensemble the integrand is piecewise constant and the integral is
/// summed exactly over the sorted members; for continuous distributions the
/// integral runs over `[min(y, q(1e-9)) - 1, max(y, q(1 - 1e-9)) + 1]` with
/// breakpoints at the observation and at every mode. Slow; intended as the
/// reference for the closed forms.
pub fn crps_numeric(dist: &PredictiveDistribution, y: f64) -> f64 {
    if let PredictiveDistribution::Ensemble(e) = dist {
        return crps_stepwise(e, y);
    }
    let lo = y.min(dist.quantile(1e-9).expect("valid probability")) - 1.0;
    let hi = y.max(dist.quantile(1.0 - 1e-9).expect("valid probability")) + 1.0;
    let mut breaks = vec![lo, y, hi];
    match dist {
        PredictiveDistribution::Gaussian(d) => breaks.push(d.mu()),
        PredictiveDistribution::TwoPieceNormal(d) => breaks.push(d.mu()),
        PredictiveDistribution::GaussianMixture2(d) => {
            breaks.extend(d.components().iter().map(|(_, g)| g.mu()))
        }
        PredictiveDistribution::Ensemble(_) => unreachable!(),
    }
    breaks.retain(|b| (lo..=hi).contains(b));
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    integrate_pieces(
        |x| {
            let step = if x >= y { 1.0 } else { 0.0 };
            (dist.cdf(x) - step).powi(2)
        },
        &breaks,
        NUMERIC_TOL,
    )
}

fn crps_stepwise(e: &Ensemble, y: f64) -> f64 {
    let mut breaks: Vec<f64> = e.members().to_vec();
    breaks.push(y);
    breaks.sort_by(f64::total_cmp);
    breaks
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                return 0.0;
            }
            let step = if a >= y { 1.0 } else { 0.0 };
            (e.cdf(a) - step).powi(2) * (b - a)
        })
        .sum()
}

/// Closed-form CRPS of a Gaussian, `σ[z(2Φ(z) - 1) + 2φ(z) - 1/√π]`.
pub fn crps_gaussian(d: &Gaussian, y: f64) -> f64 {
    let z = (y - d.mu()) / d.sigma();
    d.sigma() * (z * (2.0 * normal::cdf(z) - 1.0) + 2.0 * normal::pdf(z) - FRAC_1_SQRT_PI)
}

/// Closed-form CRPS of the two-piece normal.
pub fn crps_tpn(d: &TwoPieceNormal, y: f64) -> f64 {
    let (s1, s2) = (d.sigma1(), d.sigma2());
    let sum = s1 + s2;
    let sum2 = sum * sum;
    let dev = y - d.mu();
    let cubes = s1.powi(3) + s2.powi(3);
    let two_over_sqrt_pi = 2.0 * FRAC_1_SQRT_PI;
    let sqrt2 = std::f64::consts::SQRT_2;
    if y <= d.mu() {
        let z = dev / s1;
        4.0 * s1 * s1 / sum * (z * normal::cdf(z) + normal::pdf(z)) - dev
            + two_over_sqrt_pi * (sqrt2 * s2 * (s2 * s2 - s1 * s1) - cubes) / sum2
    } else {
        let z = dev / s2;
        4.0 * s2 * s2 / sum * (z * normal::cdf(z) + normal::pdf(z))
            + ((s1 - s2).powi(2) - 4.0 * s2 * s2) / sum2 * dev
            + two_over_sqrt_pi * (sqrt2 * s1 * (s1 * s1 - s2 * s2) - cubes) / sum2
    }
}

// E|X| for X ~ N(m, s²).
fn abs_normal_mean(m: f64, s: f64) -> f64 {
    let z = m / s;
    m * (2.0 * normal::cdf(z) - 1.0) + 2.0 * s * normal::pdf(z)
}

/// Closed-form CRPS of a two-component Gaussian mixture,
/// `E|X - y| - ½ E|X - X'|` expanded over component pairs.
pub fn crps_mixture(d: &GaussianMixture2, y: f64) -> f64 {
    let comps = d.components();
    let first: f64 = comps
        .iter()
        .map(|(w, g)| w * abs_normal_mean(y - g.mu(), g.sigma()))
        .sum();
    let mut second = 0.0;
    for (wi, gi) in &comps {
        for (wj, gj) in &comps {
            let s = (gi.sigma().powi(2) + gj.sigma().powi(2)).sqrt();
            second += wi * wj * abs_normal_mean(gi.mu() - gj.mu(), s);
        }
    }
    first - 0.5 * second
}

/// Ensemble CRPS, `(1/M) Σ|x_m - y| - (1/2M²) ΣΣ|x_m - x_n|`.
///
/// The pair sum uses the sorted members: `ΣΣ|x_m - x_n| = 2 Σ_i (2i - M + 1) x_(i)`.
pub fn crps_ensemble(d: &Ensemble, y: f64) -> f64 {
    let xs = d.members();
    let m = xs.len() as f64;
    let first = xs.iter().map(|x| (x - y).abs()).sum::<f64>() / m;
    let pairs: f64 = xs
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * i as f64 - m + 1.0) * x)
        .sum::<f64>()
        * 2.0;
    (first - pairs / (2.0 * m * m)).max(0.0)
}

/// CRPS with the closed form matching the distribution.
pub fn crps(dist: &PredictiveDistribution, y: f64) -> f64 {
    match dist {
        PredictiveDistribution::Gaussian(d) => crps_gaussian(d, y),
        PredictiveDistribution::TwoPieceNormal(d) => crps_tpn(d, y),
        PredictiveDistribution::GaussianMixture2(d) => crps_mixture(d, y),
        PredictiveDistribution::Ensemble(d) => crps_ensemble(d, y),
    }
}

pub fn absolute_error(point: f64, y: f64) -> f64 {
    (point - y).abs()
}

/// Per-origin losses of one method at one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    origins: Vec<Quarter>,
    values: Vec<f64>,
    horizon: u8,
}

impl ScoreSeries {
    pub fn new(origins: Vec<Quarter>, values: Vec<f64>, horizon: u8) -> Result<Self> {
        if origins.len() != values.len() {
            return Err(Error::Alignment(format!(
                "{} origins but {} values",
                origins.len(),
                values.len()
            )));
        }
        if horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be at least 1".into()));
        }
        Ok(ScoreSeries { origins, values, horizon })
    }

    pub fn origins(&self) -> &[Quarter] {
        &self.origins
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn horizon(&self) -> u8 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Restricts both series to the origins they have in common.
    pub fn align(a: &ScoreSeries, b: &ScoreSeries) -> (ScoreSeries, ScoreSeries) {
        let keep = |s: &ScoreSeries, other: &ScoreSeries| {
            let (origins, values) = s
                .origins
                .iter()
                .zip(&s.values)
                .filter(|(q, _)| other.origins.binary_search(q).is_ok())
                .map(|(q, v)| (*q, *v))
                .unzip();
            ScoreSeries { origins, values, horizon: s.horizon }
        };
        (keep(a, b), keep(b, a))
    }
}

/// Arithmetic mean of the losses.
pub fn aggregate(losses: &ScoreSeries) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::InsufficientData("cannot average an empty loss series".into()));
    }
    Ok(losses.values.iter().sum::<f64>() / losses.len() as f64)
}

/// Outcome of a Diebold–Mariano comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmResult {
    /// `None` when the long-run variance estimate is not positive.
    pub statistic: Option<f64>,
    pub lower_tail_prob: Option<f64>,
    /// `"00"`..`"99"`, or `"NA"` for a degenerate variance.
    pub code: String,
    pub degenerate: bool,
    /// Degenerate variance with a nonzero mean differential: the variance is
    /// taken as zero and equal accuracy rejected.
    pub reject_by_convention: bool,
    pub n: usize,
}

/// Diebold–Mariano test on `d_t = loss_a,t - loss_b,t` with a rectangular
/// long-run variance to lag `h - 1` and a standard normal reference.
///
/// A low tail probability means method `a` has the smaller losses.
pub fn dm_test(loss_a: &ScoreSeries, loss_b: &ScoreSeries) -> Result<DmResult> {
    if loss_a.horizon != loss_b.horizon {
        return Err(Error::Alignment(format!(
            "horizons differ: {} vs {}",
            loss_a.horizon, loss_b.horizon
        )));
    }
    if loss_a.origins != loss_b.origins {
        return Err(Error::Alignment("origin quarters differ".into()));
    }
    let t = loss_a.len();
    if t < 2 {
        return Err(Error::InsufficientData(format!("DM test needs T >= 2, got {t}")));
    }
    let d: Vec<f64> = loss_a.values.iter().zip(&loss_b.values).map(|(a, b)| a - b).collect();
    let tf = t as f64;
    let mean = d.iter().sum::<f64>() / tf;
    let autocov = |k: usize| -> f64 {
        (k..t).map(|i| (d[i] - mean) * (d[i - k] - mean)).sum::<f64>() / tf
    };
    let max_lag = (loss_a.horizon as usize - 1).min(t - 1);
    let gamma0 = autocov(0);
    let lrv = gamma0 + 2.0 * (1..=max_lag).map(autocov).sum::<f64>();
    // Rounding noise on a constant differential must not pass for a variance.
    let noise = 1e-13 * (gamma0 + mean * mean);
    if lrv <= noise {
        return Ok(DmResult {
            statistic: None,
            lower_tail_prob: None,
            code: "NA".into(),
            degenerate: true,
            reject_by_convention: mean.abs() > 1e-12 * (1.0 + d.iter().map(|x| x.abs()).fold(0.0, f64::max)),
            n: t,
        });
    }
    let statistic = mean / (lrv / tf).sqrt();
    let p = normal::cdf(statistic);
    Ok(DmResult {
        statistic: Some(statistic),
        lower_tail_prob: Some(p),
        code: encode_tail_probability(p)?,
        degenerate: false,
        reject_by_convention: false,
        n: t,
    })
}

/// Two-digit code for a lower tail probability: `"00"` for `p ≤ 1%`, `"01"`
/// for `1% < p ≤ 2%`, ..., `"99"` for `p > 99%`.
pub fn encode_tail_probability(p: f64) -> Result<String> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("tail probability {p} outside [0, 1]")));
    }
    let mut k = ((p * 100.0).ceil() as i64 - 1).clamp(0, 99);
    // Compare against the decimal thresholds themselves, not the scaled value.
    while k > 0 && p <= k as f64 / 100.0 {
        k -= 1;
    }
    while k < 99 && p > (k + 1) as f64 / 100.0 {
        k += 1;
    }
    Ok(format!("{k:02}"))
}
