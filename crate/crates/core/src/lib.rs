//! Probabilistic inflation forecasting from survey panels.
//!
//! The crate turns a panel of expert point forecasts and real-time CPI
//! vintages into predictive distributions, scores them with the continuous
//! ranked probability score, and runs a rolling-origin backtest that never
//! looks past the information available when each forecast was issued.
//!
//! * [`distributions`]: Gaussian, two-piece normal, two-component mixture and
//!   discrete ensemble forecasts.
//! * [`scoring`]: closed-form CRPS, a quadrature reference, the
//!   Diebold–Mariano test and two-digit tail codes.
//! * [`data`]: vintage store, survey panel and covariate extraction.
//! * [`forecasters`]: the survey, no-change and postprocessed methods.
//! * [`estimation`]: minimum-CRPS regression and EM mixture fits.
//! * [`backtest`]: the evaluation engine and its reports.
//! * [`synthetic`]: reproducible synthetic stores for tests and demos.
//!
//! ```
//! use inflcast::distributions::TwoPieceNormal;
//! use inflcast::scoring::{crps_numeric, crps_tpn};
//!
//! let d = TwoPieceNormal::new(1.90, 0.59, 3.27)?;
//! let closed = crps_tpn(&d, 4.66);
//! assert!((closed - crps_numeric(&d.into(), 4.66)).abs() < 1e-6);
//! # Ok::<(), inflcast::Error>(())
//! ```

pub mod backtest;
pub mod data;
pub mod distributions;
pub mod error;
pub mod estimation;
pub mod forecasters;
pub mod normal;
pub mod optimize;
pub mod quadrature;
pub mod quarter;
pub mod scoring;
pub mod synthetic;

pub use error::{Error, Result};
pub use quarter::{Month, Quarter};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/distributions.md")]
    mod distributions {}
    #[doc = include_str!("../../../book/src/crps.md")]
    mod crps {}
    #[doc = include_str!("../../../book/src/dm-test.md")]
    mod dm_test {}
    #[doc = include_str!("../../../book/src/vintages.md")]
    mod vintages {}
    #[doc = include_str!("../../../book/src/postprocessing.md")]
    mod postprocessing {}
    #[doc = include_str!("../../../book/src/backtest.md")]
    mod backtest {}
}
