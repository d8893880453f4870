//! Parameter estimation over a rolling training window: minimum-CRPS
//! heteroscedastic regression and EM for the two-component mixture.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::CovariateRow;
use crate::distributions::{TwoPieceNormal, SIGMA_FLOOR};
use crate::error::{Error, Result};
use crate::forecasters::{hr_moments, GmParams, GmVariant, HrParams, HrVariant};
use crate::normal;
use crate::optimize::{minimize, BfgsOptions};
use crate::scoring::crps_tpn;

/// Fewest rows either fit accepts.
pub const MIN_TRAINING_ROWS: usize = 10;

/// Covariate rows with observed outcomes for a single horizon, ordered by
/// origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    rows: Vec<CovariateRow>,
    horizon: u8,
    window: usize,
}

impl TrainingSet {
    pub fn new(mut rows: Vec<CovariateRow>, horizon: u8, window: usize) -> Result<Self> {
        if let Some(r) = rows.iter().find(|r| r.realized.is_none()) {
            return Err(Error::InvalidParameter(format!(
                "training row for {} has no realized value",
                r.origin
            )));
        }
        if rows.iter().any(|r| r.horizon != horizon) {
            return Err(Error::InvalidParameter("training rows mix horizons".into()));
        }
        rows.sort_by(|a, b| {
            a.origin.cmp(&b.origin).then_with(|| {
                let key = |r: &CovariateRow| [r.realized.unwrap_or(0.0), r.mu_spf, r.sigma2_spf, r.mu_pnc, r.sigma2_pnc];
                key(a).iter().zip(key(b).iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
            })
        });
        Ok(TrainingSet { rows, horizon, window })
    }

    pub fn rows(&self) -> &[CovariateRow] {
        &self.rows
    }

    pub fn horizon(&self) -> u8 {
        self.horizon
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn realized(&self, i: usize) -> f64 {
        self.rows[i].realized.expect("checked at construction")
    }

    fn require_rows(&self) -> Result<()> {
        if self.rows.len() < MIN_TRAINING_ROWS {
            return Err(Error::InsufficientTraining { rows: self.rows.len(), needed: MIN_TRAINING_ROWS });
        }
        Ok(())
    }

    /// Seed derived from the last origin and the horizon, so refits of the
    /// same cell are reproducible.
    pub fn default_seed(&self) -> u64 {
        let last = self.rows.last().map_or(0, |r| r.origin.year() as i64 * 4 + r.origin.q() as i64);
        (last as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ self.horizon as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum FittedParams {
    Hr(HrParams),
    Gm(GmParams),
}

/// Result of a fit: parameters plus the objective trace of the winning run
/// (mean CRPS for HR, log-likelihood for EM).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub params: FittedParams,
    pub objective: f64,
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub note: Option<String>,
}

impl FitReport {
    pub fn hr_params(&self) -> Option<&HrParams> {
        match &self.params {
            FittedParams::Hr(p) => Some(p),
            FittedParams::Gm(_) => None,
        }
    }

    pub fn gm_params(&self) -> Option<&GmParams> {
        match &self.params {
            FittedParams::Gm(p) => Some(p),
            FittedParams::Hr(_) => None,
        }
    }

    /// Writes `iteration,objective` lines.
    pub fn write_trace_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["iteration", "objective"])?;
        for (i, v) in self.trace.iter().enumerate() {
            wtr.write_record([i.to_string(), v.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HrFitOptions {
    /// Jittered starts in addition to the identity start.
    pub jittered_starts: usize,
    /// `None` uses [`TrainingSet::default_seed`].
    pub seed: Option<u64>,
    pub bfgs: BfgsOptions,
}

impl Default for HrFitOptions {
    fn default() -> Self {
        HrFitOptions { jittered_starts: 4, seed: None, bfgs: BfgsOptions::default() }
    }
}

// Square roots of zero-valued variance coefficients start here instead of at
// zero, where the squared parameterisation has a vanishing gradient.
const ZERO_COEF_ROOT: f64 = 0.1;

fn hr_to_theta(p: &HrParams, seed_zeros: bool) -> Vec<f64> {
    let root = |c: f64| {
        let r = c.max(0.0).sqrt();
        if seed_zeros && r == 0.0 {
            ZERO_COEF_ROOT
        } else {
            r
        }
    };
    match p.variant {
        HrVariant::SpfOnly => vec![p.a, p.b1, root(p.c1), root(p.d11), root(p.c2), root(p.d21)],
        HrVariant::SpfPnc => vec![
            p.a,
            p.b1,
            p.b2,
            root(p.c1),
            root(p.d11),
            root(p.d12),
            root(p.c2),
            root(p.d21),
            root(p.d22),
        ],
    }
}

fn hr_from_theta(t: &[f64], variant: HrVariant) -> HrParams {
    match variant {
        HrVariant::SpfOnly => HrParams {
            a: t[0],
            b1: t[1],
            b2: 0.0,
            c1: t[2] * t[2],
            d11: t[3] * t[3],
            d12: 0.0,
            c2: t[4] * t[4],
            d21: t[5] * t[5],
            d22: 0.0,
            variant,
        },
        HrVariant::SpfPnc => HrParams {
            a: t[0],
            b1: t[1],
            b2: t[2],
            c1: t[3] * t[3],
            d11: t[4] * t[4],
            d12: t[5] * t[5],
            c2: t[6] * t[6],
            d21: t[7] * t[7],
            d22: t[8] * t[8],
            variant,
        },
    }
}

/// Mean CRPS of the HR two-piece normal over the training rows.
pub fn hr_mean_crps(params: &HrParams, train: &TrainingSet) -> f64 {
    let total: f64 = train
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let (mu, v1, v2) = hr_moments(params, row);
            match TwoPieceNormal::new(mu, v1.max(0.0).sqrt(), v2.max(0.0).sqrt()) {
                Ok(d) => crps_tpn(&d, train.realized(i)),
                Err(_) => f64::INFINITY,
            }
        })
        .sum();
    total / train.rows.len() as f64
}

struct Candidate {
    params: HrParams,
    objective: f64,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
}

fn run_starts(train: &TrainingSet, variant: HrVariant, starts: &[Vec<f64>], opts: &BfgsOptions) -> Vec<Candidate> {
    let objective = |t: &[f64]| hr_mean_crps(&hr_from_theta(t, variant), train);
    starts
        .iter()
        .map(|x0| {
            let out = minimize(objective, x0, opts);
            Candidate {
                params: hr_from_theta(&out.x, variant),
                objective: out.value,
                trace: out.trace,
                iterations: out.iterations,
                converged: out.converged,
            }
        })
        .collect()
}

fn hr_starts(variant: HrVariant, jittered: usize, seed: u64) -> Vec<Vec<f64>> {
    let base = hr_to_theta(&HrParams::identity(variant), true);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts = vec![base.clone()];
    for _ in 0..jittered {
        starts.push(
            base.iter()
                .map(|&v| if v != 0.0 { v * rng.random_range(0.5..=2.0) } else { v })
                .collect(),
        );
    }
    starts
}

fn best_of(train: &TrainingSet, variant: HrVariant, candidates: Vec<Candidate>) -> Result<FitReport> {
    let identity = HrParams::identity(variant);
    let identity_objective = hr_mean_crps(&identity, train);
    let mut best: Option<Candidate> = None;
    for c in candidates {
        if c.objective.is_finite() && best.as_ref().is_none_or(|b| c.objective < b.objective) {
            best = Some(c);
        }
    }
    let best = match best {
        Some(b) if b.objective <= identity_objective || !identity_objective.is_finite() => b,
        Some(_) | None if identity_objective.is_finite() => Candidate {
            params: identity,
            objective: identity_objective,
            trace: vec![identity_objective],
            iterations: 0,
            converged: false,
        },
        _ => return Err(Error::FitFailure("objective not finite at any start".into())),
    };
    Ok(FitReport {
        params: FittedParams::Hr(best.params),
        objective: best.objective,
        trace: best.trace,
        iterations: best.iterations,
        converged: best.converged,
        note: None,
    })
}

/// Minimum-CRPS fit of the HR model with default options.
pub fn fit_hr(train: &TrainingSet, variant: HrVariant) -> Result<FitReport> {
    fit_hr_with(train, variant, &HrFitOptions::default())
}

/// Minimum-CRPS fit of the HR model.
///
/// Nonnegative coefficients are optimised through their square roots. BFGS
/// runs from the identity model and from jittered copies of it; the lowest
/// mean CRPS wins and is never worse than the identity model itself. The
/// SPF+PNC fit additionally starts from the SPF-only optimum embedded in the
/// larger model, so its objective never exceeds the nested model's.
pub fn fit_hr_with(train: &TrainingSet, variant: HrVariant, opts: &HrFitOptions) -> Result<FitReport> {
    Ok(match variant {
        HrVariant::SpfOnly => fit_hr_spf_only(train, opts)?,
        HrVariant::SpfPnc => fit_hr_pair(train, opts)?.1,
    })
}

fn fit_hr_spf_only(train: &TrainingSet, opts: &HrFitOptions) -> Result<FitReport> {
    train.require_rows()?;
    let seed = opts.seed.unwrap_or_else(|| train.default_seed());
    let starts = hr_starts(HrVariant::SpfOnly, opts.jittered_starts, seed);
    best_of(train, HrVariant::SpfOnly, run_starts(train, HrVariant::SpfOnly, &starts, &opts.bfgs))
}

/// Fits both HR variants, returning `(spf_only, spf_pnc)`.
pub fn fit_hr_pair(train: &TrainingSet, opts: &HrFitOptions) -> Result<(FitReport, FitReport)> {
    let nested = fit_hr_spf_only(train, opts)?;
    let seed = opts.seed.unwrap_or_else(|| train.default_seed());
    let mut starts = hr_starts(HrVariant::SpfPnc, opts.jittered_starts, seed.wrapping_add(1));
    let p = nested.hr_params().expect("HR fit");
    let embedded = HrParams { variant: HrVariant::SpfPnc, ..*p };
    starts.push(hr_to_theta(&embedded, false));
    let full = best_of(train, HrVariant::SpfPnc, run_starts(train, HrVariant::SpfPnc, &starts, &opts.bfgs))?;
    Ok((nested, full))
}

#[derive(Debug, Clone, Copy)]
pub struct EmOptions {
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions { rel_tol: 1e-6, max_iter: 1000 }
    }
}

fn log_normal_pdf(y: f64, mu: f64, sigma: f64) -> f64 {
    let z = (y - mu) / sigma;
    -0.5 * z * z - sigma.ln() + normal::FRAC_1_SQRT_2PI.ln()
}

fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

pub fn fit_gm_em(train: &TrainingSet, variant: GmVariant) -> Result<FitReport> {
    fit_gm_em_with(train, variant, &EmOptions::default())
}

/// Maximum-likelihood fit of the mixture by EM.
///
/// Component means are fixed at the survey and window medians of each row.
/// The E-step computes the responsibility of the survey component at every
/// realized value; the M-step sets the weight to the mean responsibility and,
/// with variance adjustment, each scale to the responsibility-weighted root
/// mean squared residual about its means.
pub fn fit_gm_em_with(train: &TrainingSet, variant: GmVariant, opts: &EmOptions) -> Result<FitReport> {
    train.require_rows()?;
    let n = train.len();
    let ys: Vec<f64> = (0..n).map(|i| train.realized(i)).collect();
    let rows = &train.rows;

    let (mut s1, mut s2) = match variant {
        GmVariant::Standard => {
            if rows.iter().any(|r| !(r.sigma2_spf > 0.0 && r.sigma2_pnc > 0.0)) {
                return Err(Error::InvalidParameter(
                    "standard GM needs positive survey and window spreads in every row".into(),
                ));
            }
            (1.0, 1.0)
        }
        GmVariant::VarianceAdjusted => {
            let rms = |f: fn(&CovariateRow) -> f64| {
                (rows.iter().zip(&ys).map(|(r, y)| (y - f(r)).powi(2)).sum::<f64>() / n as f64)
                    .sqrt()
                    .max(SIGMA_FLOOR)
            };
            (rms(|r| r.mu_spf), rms(|r| r.mu_pnc))
        }
    };
    let scales = |r: &CovariateRow, s1: f64, s2: f64| match variant {
        GmVariant::Standard => (r.sigma_spf(), r.sigma_pnc()),
        GmVariant::VarianceAdjusted => (s1, s2),
    };
    let log_densities = |s1: f64, s2: f64| -> Vec<(f64, f64)> {
        rows.iter()
            .zip(&ys)
            .map(|(r, &y)| {
                let (a, b) = scales(r, s1, s2);
                (log_normal_pdf(y, r.mu_spf, a), log_normal_pdf(y, r.mu_pnc, b))
            })
            .collect()
    };
    let make_params = |alpha: f64, s1: f64, s2: f64| match variant {
        GmVariant::Standard => GmParams::standard(alpha),
        GmVariant::VarianceAdjusted => GmParams::variance_adjusted(alpha, s1, s2),
    };

    let mut alpha = 0.5;
    let mut ld = log_densities(s1, s2);
    let identical = ld.iter().all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    let loglik = |alpha: f64, ld: &[(f64, f64)]| -> f64 {
        ld.iter().map(|(a, b)| log_add(alpha.ln() + a, (1.0 - alpha).ln() + b)).sum()
    };
    if identical {
        let ll = loglik(alpha, &ld);
        return Ok(FitReport {
            params: FittedParams::Gm(make_params(alpha, s1, s2)?),
            objective: ll,
            trace: vec![ll],
            iterations: 0,
            converged: true,
            note: Some("components identical on every row; weight not identifiable".into()),
        });
    }

    let mut ll = loglik(alpha, &ld);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let resp: Vec<f64> = ld
            .iter()
            .map(|(a, b)| {
                let la = alpha.ln() + a;
                let lb = (1.0 - alpha).ln() + b;
                (la - log_add(la, lb)).exp()
            })
            .collect();
        let total: f64 = resp.iter().sum();
        alpha = (total / n as f64).clamp(0.0, 1.0);
        if variant == GmVariant::VarianceAdjusted {
            let weighted = |w: &dyn Fn(f64) -> f64, f: fn(&CovariateRow) -> f64| -> Option<f64> {
                let (num, den) = rows.iter().zip(&ys).zip(&resp).fold((0.0, 0.0), |(num, den), ((r, y), &ri)| {
                    (num + w(ri) * (y - f(r)).powi(2), den + w(ri))
                });
                (den > 0.0).then(|| (num / den).sqrt().max(SIGMA_FLOOR))
            };
            if let Some(v) = weighted(&|r| r, |r| r.mu_spf) {
                s1 = v;
            }
            if let Some(v) = weighted(&|r| 1.0 - r, |r| r.mu_pnc) {
                s2 = v;
            }
            ld = log_densities(s1, s2);
        }
        let next = loglik(alpha, &ld);
        trace.push(next);
        let change = (next - ll).abs() / ll.abs().max(f64::MIN_POSITIVE);
        ll = next;
        if change < opts.rel_tol {
            converged = true;
            break;
        }
    }

    Ok(FitReport {
        params: FittedParams::Gm(make_params(alpha, s1, s2)?),
        objective: ll,
        trace,
        iterations,
        converged,
        note: None,
    })
}
