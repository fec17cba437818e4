//! Two-factor rough Bergomi model: exact Gaussian simulation, Black–Scholes
//! pricing utilities, short-maturity smile asymptotics for SPX and VIX
//! options, Monte Carlo smiles and calibration.

#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::excessive_precision
)]

pub mod asymptotics;
pub mod calibration;
pub mod error;
pub mod kernel;
pub mod model;
pub mod montecarlo;
pub mod pricing;
pub mod quadrature;
pub mod rng;
pub mod verify;

pub use asymptotics::{SmileAsymptotics, Underlying};
pub use calibration::{calibrate, CalibrationResult, ObservedLimits};
pub use error::{CalibrationError, Error, InversionError, Result};
pub use kernel::{build_system, GaussianSystem, SchemeDescriptor};
pub use model::ModelParams;
pub use montecarlo::SimConfig;
pub use pricing::{bs_price, implied_vol};
