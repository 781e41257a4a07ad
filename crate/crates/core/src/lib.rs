//! Coding schemes for differentially private distributed multiplication.
//!
//! Two inputs `A` and `B` are shared among `N` nodes as noisy linear
//! combinations; every node multiplies its two shares and a linear decoder
//! estimates `AB` from the node products. The crate computes the exact
//! privacy and accuracy signal-to-noise ratios of such codes, builds the
//! layered construction that attains `(1+SNR_a) = (1+SNR_p)^2` together with
//! the classical baselines, checks the converse inequalities, and simulates
//! everything end to end (including a dithered finite-precision pipeline).

pub mod accuracy;
pub mod distributions;
mod error;
mod serde_inf;
pub mod estimation;
pub mod matrix_ext;
pub mod montecarlo;
pub mod precision;
pub mod privacy;
pub mod schemes;
pub mod subsets;

pub use accuracy::{AccuracyReport, ConverseRecord};
pub use distributions::NoiseSpec;
pub use error::{Error, Result};
pub use estimation::{CovariancePair, FactoredModel, Snr};
pub use montecarlo::{DataLaw, SimConfig, SimResult};
pub use privacy::{PrivacyReport, Side};
pub use schemes::{LayeredParams, LinearCode, NoiseKind};
