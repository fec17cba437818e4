//! Error types shared by every module of the crate.

use thiserror::Error;

/// Failure modes of an implied-volatility inversion.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum InversionError {
    #[error("price {price} is below the intrinsic value {bound}")]
    BelowIntrinsic { price: f64, bound: f64 },
    #[error("price {price} is not below the upper bound {bound}")]
    AboveUpper { price: f64, bound: f64 },
    #[error("price {price} is outside the volatility bracket [{lo}, {hi}]")]
    OutsideBracket { price: f64, lo: f64, hi: f64 },
    #[error("time to maturity must be positive, got {0}")]
    NonPositiveMaturity(f64),
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
}

/// Failure modes of the calibration routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("skew observations must be positive, got {0} and {1}")]
    NonPositiveSkew(f64, f64),
    #[error("inferred Hurst exponent {0} lies outside (0, 1/2)")]
    HurstOutOfRange(f64),
    #[error("no root found in the search box (best residual {best_residual:e} at a={a_tilde}, b={b_tilde})")]
    NoRoot {
        best_residual: f64,
        a_tilde: f64,
        b_tilde: f64,
    },
    #[error("target skew {target} is unreachable, attainable range is [{min}, {max}]")]
    Infeasible { target: f64, min: f64, max: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("implied volatility: {0}")]
    Inversion(#[from] InversionError),
    #[error("calibration: {0}")]
    Calibration(#[from] CalibrationError),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
