//! Predictive distributions: Gaussian, two-piece normal, two-component
//! Gaussian mixture and the discrete equally weighted ensemble.
//!
//! All values are immutable once constructed. Scale parameters are floored at
//! [`SIGMA_FLOOR`] so that degenerate fits (for instance an MSE of zero) still
//! produce a valid distribution whose CRPS collapses to the absolute error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;

/// Lower bound applied to every scale parameter at construction, in
/// percentage points.
pub const SIGMA_FLOOR: f64 = 1e-8;

const BISECTION_TOL: f64 = 1e-12;

fn floor_scale(name: &str, sigma: f64) -> Result<f64> {
    if sigma.is_nan() || sigma < 0.0 || sigma.is_infinite() {
        return Err(Error::InvalidParameter(format!(
            "{name} must be finite and nonnegative, got {sigma}"
        )));
    }
    Ok(sigma.max(SIGMA_FLOOR))
}

fn finite(name: &str, x: f64) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::InvalidParameter(format!("{name} must be finite, got {x}")))
    }
}

fn check_probability(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("probability {p} outside (0, 1)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    mu: f64,
    sigma: f64,
}

impl Gaussian {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        Ok(Gaussian {
            mu: finite("mu", mu)?,
            sigma: floor_scale("sigma", sigma)?,
        })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn cdf(&self, y: f64) -> f64 {
        normal::cdf((y - self.mu) / self.sigma)
    }

    pub fn pdf(&self, y: f64) -> f64 {
        normal::pdf((y - self.mu) / self.sigma) / self.sigma
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        check_probability(p)?;
        Ok(self.mu + self.sigma * normal::quantile(p))
    }
}

/// Two-piece normal distribution with mode `mu`, lower-branch scale `sigma1`
/// and upper-branch scale `sigma2`.
///
/// The density glues two half-normals with a common height at the mode:
///
/// ```text
/// f(y) = sqrt(2/π) / (σ1 + σ2) · exp(-(y-μ)² / 2σ1²)   y ≤ μ
///        sqrt(2/π) / (σ1 + σ2) · exp(-(y-μ)² / 2σ2²)   y ≥ μ
/// ```
///
/// so that `cdf(mu) = sigma1 / (sigma1 + sigma2)`. With `sigma1 < sigma2`
/// the distribution is right skewed and both mean and median exceed the mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoPieceNormal {
    mu: f64,
    sigma1: f64,
    sigma2: f64,
}

impl TwoPieceNormal {
    pub fn new(mu: f64, sigma1: f64, sigma2: f64) -> Result<Self> {
        Ok(TwoPieceNormal {
            mu: finite("mu", mu)?,
            sigma1: floor_scale("sigma1", sigma1)?,
            sigma2: floor_scale("sigma2", sigma2)?,
        })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma1(&self) -> f64 {
        self.sigma1
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// Probability mass below the mode.
    pub fn lower_mass(&self) -> f64 {
        self.sigma1 / (self.sigma1 + self.sigma2)
    }

    pub fn cdf(&self, y: f64) -> f64 {
        let (s1, s2) = (self.sigma1, self.sigma2);
        let sum = s1 + s2;
        if y <= self.mu {
            2.0 * s1 / sum * normal::cdf((y - self.mu) / s1)
        } else {
            (s1 - s2) / sum + 2.0 * s2 / sum * normal::cdf((y - self.mu) / s2)
        }
    }

    pub fn pdf(&self, y: f64) -> f64 {
        let scale = if y <= self.mu { self.sigma1 } else { self.sigma2 };
        let z = (y - self.mu) / scale;
        2.0 * normal::FRAC_1_SQRT_2PI / (self.sigma1 + self.sigma2) * (-0.5 * z * z).exp()
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        check_probability(p)?;
        let (s1, s2) = (self.sigma1, self.sigma2);
        let sum = s1 + s2;
        if p <= self.lower_mass() {
            Ok(self.mu + s1 * normal::quantile(p * sum / (2.0 * s1)))
        } else {
            let inner = ((p * sum - s1 + s2) / (2.0 * s2)).min(1.0 - f64::EPSILON / 2.0);
            Ok(self.mu + s2 * normal::quantile(inner))
        }
    }
}

/// Mixture `alpha · N(mu1, sigma1²) + (1 - alpha) · N(mu2, sigma2²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture2 {
    alpha: f64,
    mu1: f64,
    sigma1: f64,
    mu2: f64,
    sigma2: f64,
}

impl GaussianMixture2 {
    pub fn new(alpha: f64, mu1: f64, sigma1: f64, mu2: f64, sigma2: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidParameter(format!(
                "mixture weight {alpha} outside [0, 1]"
            )));
        }
        Ok(GaussianMixture2 {
            alpha,
            mu1: finite("mu1", mu1)?,
            sigma1: floor_scale("sigma1", sigma1)?,
            mu2: finite("mu2", mu2)?,
            sigma2: floor_scale("sigma2", sigma2)?,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn components(&self) -> [(f64, Gaussian); 2] {
        [
            (self.alpha, Gaussian { mu: self.mu1, sigma: self.sigma1 }),
            (1.0 - self.alpha, Gaussian { mu: self.mu2, sigma: self.sigma2 }),
        ]
    }

    pub fn cdf(&self, y: f64) -> f64 {
        self.components().iter().map(|(w, g)| w * g.cdf(y)).sum()
    }

    pub fn pdf(&self, y: f64) -> f64 {
        self.components().iter().map(|(w, g)| w * g.pdf(y)).sum()
    }

    /// Quantile by bisection. The initial bracket spans ten of the larger
    /// component scales beyond both means and is widened until it holds `p`.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        check_probability(p)?;
        let spread = 10.0 * self.sigma1.max(self.sigma2);
        let mut lo = self.mu1.min(self.mu2) - spread;
        let mut hi = self.mu1.max(self.mu2) + spread;
        while self.cdf(lo) > p {
            lo -= hi - lo;
        }
        while self.cdf(hi) < p {
            hi += hi - lo;
        }
        for _ in 0..400 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= BISECTION_TOL * (1.0 + mid.abs()) {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Discrete distribution putting mass `1/M` on each member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    sorted: Vec<f64>,
}

impl Ensemble {
    pub fn new(members: impl Into<Vec<f64>>) -> Result<Self> {
        let mut sorted = members.into();
        if sorted.is_empty() {
            return Err(Error::InvalidParameter("ensemble must be nonempty".into()));
        }
        if sorted.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter(
                "ensemble members must be finite".into(),
            ));
        }
        sorted.sort_by(f64::total_cmp);
        Ok(Ensemble { sorted })
    }

    /// Members in nondecreasing order.
    pub fn members(&self) -> &[f64] {
        &self.sorted
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Empirical step CDF, `#{x ≤ y} / M`.
    pub fn cdf(&self, y: f64) -> f64 {
        let below = self.sorted.partition_point(|&x| x <= y);
        below as f64 / self.sorted.len() as f64
    }

    /// Empirical quantile: the order statistic at `ceil(M p)`, averaging the
    /// two neighbouring members when `M p` is an integer. For `p = 0.5` this
    /// is the usual median with even-count averaging.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        check_probability(p)?;
        let m = self.sorted.len();
        let pos = m as f64 * p;
        let k = pos.floor() as usize;
        if pos == k as f64 && k >= 1 && k < m {
            Ok(0.5 * (self.sorted[k - 1] + self.sorted[k]))
        } else {
            let idx = (pos.ceil() as usize).clamp(1, m);
            Ok(self.sorted[idx - 1])
        }
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5).expect("0.5 is a valid probability")
    }

    pub fn mean(&self) -> f64 {
        self.sorted.iter().sum::<f64>() / self.sorted.len() as f64
    }

    /// Sample variance with denominator `M - 1`; zero for a single member.
    pub fn sample_variance(&self) -> f64 {
        let m = self.sorted.len();
        if m < 2 {
            return 0.0;
        }
        let mean = self.mean();
        self.sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64
    }
}

/// The forecast object shared by every method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictiveDistribution {
    Gaussian(Gaussian),
    TwoPieceNormal(TwoPieceNormal),
    GaussianMixture2(GaussianMixture2),
    Ensemble(Ensemble),
}

impl PredictiveDistribution {
    pub fn cdf(&self, y: f64) -> f64 {
        match self {
            Self::Gaussian(d) => d.cdf(y),
            Self::TwoPieceNormal(d) => d.cdf(y),
            Self::GaussianMixture2(d) => d.cdf(y),
            Self::Ensemble(d) => d.cdf(y),
        }
    }

    pub fn pdf(&self, y: f64) -> Result<f64> {
        match self {
            Self::Gaussian(d) => Ok(d.pdf(y)),
            Self::TwoPieceNormal(d) => Ok(d.pdf(y)),
            Self::GaussianMixture2(d) => Ok(d.pdf(y)),
            Self::Ensemble(_) => Err(Error::Unsupported("density of a discrete ensemble")),
        }
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        match self {
            Self::Gaussian(d) => d.quantile(p),
            Self::TwoPieceNormal(d) => d.quantile(p),
            Self::GaussianMixture2(d) => d.quantile(p),
            Self::Ensemble(d) => d.quantile(p),
        }
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5).expect("0.5 is a valid probability")
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Gaussian(_) => "gaussian",
            Self::TwoPieceNormal(_) => "two_piece_normal",
            Self::GaussianMixture2(_) => "gaussian_mixture2",
            Self::Ensemble(_) => "ensemble",
        }
    }
}

impl From<Gaussian> for PredictiveDistribution {
    fn from(d: Gaussian) -> Self {
        Self::Gaussian(d)
    }
}

impl From<TwoPieceNormal> for PredictiveDistribution {
    fn from(d: TwoPieceNormal) -> Self {
        Self::TwoPieceNormal(d)
    }
}

impl From<GaussianMixture2> for PredictiveDistribution {
    fn from(d: GaussianMixture2) -> Self {
        Self::GaussianMixture2(d)
    }
}

impl From<Ensemble> for PredictiveDistribution {
    fn from(d: Ensemble) -> Self {
        Self::Ensemble(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate;
    use proptest::prelude::*;

    fn tpn(mu: f64, s1: f64, s2: f64) -> TwoPieceNormal {
        TwoPieceNormal::new(mu, s1, s2).unwrap()
    }

    #[test]
    fn tpn_cdf_at_mode() {
        let d = tpn(1.90, 0.59, 3.27);
        assert!((d.cdf(1.90) - 0.59 / (0.59 + 3.27)).abs() < 1e-15);
        assert!((d.cdf(1.90) - 0.1528).abs() < 5e-5);
        assert_eq!(tpn(0.0, 1.0, 1.0).cdf(0.0), 0.5);
        // both branches of the CDF give sigma1 / (sigma1 + sigma2) at the mode
        let (s1, s2) = (0.59_f64, 3.27_f64);
        let upper = (s1 - s2) / (s1 + s2) + 2.0 * s2 / (s1 + s2) * 0.5;
        assert!((upper - d.lower_mass()).abs() < 1e-15);
    }

    #[test]
    fn tpn_median_matches_worked_example() {
        let median = tpn(1.90, 0.59, 3.27).quantile(0.5).unwrap();
        assert!((median - 3.67).abs() <= 0.01, "median {median}");
    }

    #[test]
    fn tpn_density_continuous_and_normalised() {
        let d = tpn(0.0, 1.0, 1.0);
        assert!((d.pdf(0.0) - 0.398_942_280_401_432_7).abs() < 1e-15);
        let d = tpn(0.0, 1.0, 2.0);
        assert!((d.pdf(-1e-12) - d.pdf(1e-12)).abs() < 1e-12);
        let d = tpn(1.90, 0.59, 3.27);
        let total = integrate(|y| d.pdf(y), -40.0, 1.90, 1e-12)
            + integrate(|y| d.pdf(y), 1.90, 40.0, 1e-12);
        assert!((total - 1.0).abs() < 1e-8, "integral {total}");
    }

    #[test]
    fn mixture_median_matches_worked_example() {
        let d = GaussianMixture2::new(0.59, 2.20, 0.98, 3.05, 1.30).unwrap();
        let median = d.quantile(0.5).unwrap();
        assert!((median - 2.49).abs() <= 0.01, "median {median}");
        assert!((d.cdf(median) - 0.5).abs() < 1e-10);
    }

    #[test]
    fn gaussian_and_ensemble_basics() {
        assert_eq!(Gaussian::new(0.0, 1.0).unwrap().quantile(0.5).unwrap(), 0.0);
        let e = Ensemble::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(e.cdf(0.0), 0.5);
        assert_eq!(e.median(), 0.5);
        assert_eq!(Ensemble::new(vec![1.0, 2.0, 3.0, 100.0]).unwrap().median(), 2.5);
        assert_eq!(Ensemble::new(vec![3.0, 1.0, 2.0]).unwrap().median(), 2.0);
        let window: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(Ensemble::new(window).unwrap().median(), 10.5);
    }

    #[test]
    fn construction_errors() {
        assert!(Ensemble::new(Vec::<f64>::new()).is_err());
        assert!(Ensemble::new(vec![1.0, f64::NAN]).is_err());
        assert!(GaussianMixture2::new(1.1, 0.0, 1.0, 0.0, 1.0).is_err());
        assert!(Gaussian::new(0.0, -1.0).is_err());
        assert_eq!(Gaussian::new(0.0, 0.0).unwrap().sigma(), SIGMA_FLOOR);
    }

    #[test]
    fn quantile_domain_and_pdf_support() {
        let d: PredictiveDistribution = Gaussian::new(0.0, 1.0).unwrap().into();
        assert!(matches!(d.quantile(0.0), Err(Error::Domain(_))));
        assert!(matches!(d.quantile(1.0), Err(Error::Domain(_))));
        let e: PredictiveDistribution = Ensemble::new(vec![1.0]).unwrap().into();
        assert!(matches!(e.pdf(1.0), Err(Error::Unsupported(_))));
    }

    fn continuous() -> impl Strategy<Value = PredictiveDistribution> {
        prop_oneof![
            (-10.0..10.0f64, 0.05..5.0f64)
                .prop_map(|(m, s)| Gaussian::new(m, s).unwrap().into()),
            (-10.0..10.0f64, 0.05..5.0f64, 0.05..5.0f64)
                .prop_map(|(m, a, b)| TwoPieceNormal::new(m, a, b).unwrap().into()),
            (0.0..=1.0f64, -10.0..10.0f64, 0.05..5.0f64, -10.0..10.0f64, 0.05..5.0f64).prop_map(
                |(w, m1, s1, m2, s2)| GaussianMixture2::new(w, m1, s1, m2, s2).unwrap().into()
            ),
        ]
    }

    proptest! {
        #[test]
        fn cdf_monotone_with_unit_limits(d in continuous(), a in -50.0..50.0f64, b in -50.0..50.0f64) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(d.cdf(lo) <= d.cdf(hi));
            prop_assert!(d.cdf(-1e6) < 1e-12);
            prop_assert!(d.cdf(1e6) > 1.0 - 1e-12);
        }

        #[test]
        fn quantile_round_trip(d in continuous()) {
            for i in 1..100 {
                let p = i as f64 / 100.0;
                let y = d.quantile(p).unwrap();
                prop_assert!((d.cdf(y) - p).abs() < 1e-9, "p={} y={} cdf={}", p, y, d.cdf(y));
            }
        }

        #[test]
        fn symmetric_tpn_is_gaussian(mu in -10.0..10.0f64, s in 0.05..5.0f64, y in -20.0..20.0f64, p in 0.001..0.999f64) {
            let t = TwoPieceNormal::new(mu, s, s).unwrap();
            let g = Gaussian::new(mu, s).unwrap();
            prop_assert!((t.cdf(y) - g.cdf(y)).abs() < 1e-12);
            prop_assert!((t.pdf(y) - g.pdf(y)).abs() < 1e-12);
            prop_assert!((t.quantile(p).unwrap() - g.quantile(p).unwrap()).abs() < 1e-12 * (1.0 + mu.abs() + s));
        }

        #[test]
        fn unit_weight_mixture_is_first_component(mu1 in -10.0..10.0f64, s1 in 0.05..5.0f64, mu2 in -10.0..10.0f64, s2 in 0.05..5.0f64, y in -20.0..20.0f64, p in 0.001..0.999f64) {
            let m = GaussianMixture2::new(1.0, mu1, s1, mu2, s2).unwrap();
            let g = Gaussian::new(mu1, s1).unwrap();
            prop_assert!((m.cdf(y) - g.cdf(y)).abs() < 1e-12);
            prop_assert!((m.pdf(y) - g.pdf(y)).abs() < 1e-12);
            prop_assert!((m.quantile(p).unwrap() - g.quantile(p).unwrap()).abs() < 1e-9);
        }
    }
}
