//! Solvers for nonlinear programs with a cardinality constraint `‖x‖₀ ≤ κ`.
//!
//! The cardinality constraint is replaced by a continuous reformulation over
//! an auxiliary vector `y ∈ [0, 1]ⁿ` with `x ∘ y = 0` and `eᵀy ≥ n − κ`. That
//! program is then approached through a sequence of regularized smooth
//! programs (Scholtes or Kanzow–Schwartz) whose parameter `t` is driven to
//! zero. Limits are certified as S- or M-stationary.
//!
//! The crate is organised as follows:
//!
//! * [`model`]: problem data, the smooth program abstraction and the four
//!   closed-form portfolio risk measures (VaR, CVaR and their robust variants).
//! * [`reformulate`]: the continuous reformulation and both regularizations.
//! * [`nlp`]: a dense augmented-Lagrangian solver over box constraints.
//! * [`homotopy`]: the regularization driver and support polishing.
//! * [`stationarity`]: CC-MFCQ, MFCQ and S/M-stationarity certificates.
//! * [`oracle`]: support enumeration and a Monte Carlo CVaR estimator.
//! * [`bench`]: instance generation, file formats, experiments and profiles.

pub mod bench;
pub mod error;
pub mod homotopy;
pub mod model;
pub mod nlp;
pub mod oracle;
pub mod reformulate;
pub mod stationarity;

pub use error::{Error, Result};
