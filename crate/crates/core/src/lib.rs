//! Distributionally robust probabilistic prediction (DRPP) for stochastic
//! dynamical systems.
//!
//! A stochastic dynamical system steps as `x_{k+1} = f_k(x_k, u_k) + w_k`.
//! A probabilistic predictor observes the state-control pair and emits a full
//! Gaussian pdf for the next state; prediction quality is measured by the
//! logarithmic score `log p̂(x_{k+1})`. When the nominal model (evolution
//! function, noise mean and covariance) is only trusted up to a conic
//! moment-based ambiguity set, the predictors in this crate maximize the
//! worst-case expected score over that set:
//!
//! - [`predictors::noise_drpp_predict`] — closed-form optimum when the
//!   evolution function is exact,
//! - [`predictors::eig_drpp_predict`] — optimum under the eigenvector
//!   restriction, with eigenvalues solved by a small convex program,
//! - explicit worst-case adversaries and offline value bounds in
//!   [`worstcase`],
//! - a seeded Monte-Carlo trajectory harness in [`sim`].

pub mod ambiguity;
pub mod error;
pub mod gaussian;
pub mod linalg;
pub mod predictors;
pub mod sim;
pub mod worstcase;

pub use ambiguity::{AmbiguitySet, Gamma0, SdsStepRealization, StateControl};
pub use error::Error;
pub use gaussian::{confidence_scale, gaussian_log_density, GaussianPdf};
pub use linalg::{mahalanobis_sq, spectral_decompose, SpdMatrix, SpectralDecomposition};
pub use predictors::{P3Solution, PredictorKind};
pub use sim::{ControllerKind, MechanismKind, ScoreSummary, TrajectoryRecord};
pub use worstcase::{AmbiguityVerdict, BoundsReport};

/// Result alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;
