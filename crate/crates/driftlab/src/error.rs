//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the numerical operations.
///
/// The variants mirror how the experiment runner classifies failures:
/// configuration problems, numerical refusals (an operation declined to
/// produce a number it cannot stand behind), and exhausted budgets.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid argument or state (non-positive time, dimension mismatch, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Quadrature refinement did not settle below the requested tolerance.
    #[error("quadrature did not converge: residual {residual:.3e} (value {value:.6e})")]
    QuadratureResidual { value: f64, residual: f64 },

    /// The inner Kato integral blows up under refinement: the measure is not
    /// in the Kato class at this resolution.
    #[error("not in the Kato class at this resolution: integrand slope {slope:.3} at small times (partial value {partial:.6e})")]
    KatoDivergent { partial: f64, slope: f64 },

    /// Series evaluation was refused because the contraction factor is not
    /// below one at the requested time.
    #[error("series refused at t={t}: contraction factor {rho:.4} >= 1 (largest admitted horizon {t_max:.6})")]
    HorizonExceeded { t: f64, rho: f64, t_max: f64 },

    /// A geometric tail bound was requested with contraction factor >= 1.
    #[error("geometric tail unavailable: contraction factor {rho:.4} >= 1")]
    ContractionUnavailable { rho: f64 },

    /// A deterministic evaluation grid exceeded its node budget.
    #[error("evaluation budget exhausted: {0}")]
    BudgetExhausted(String),

    /// An estimator refused to run because it would overflow.
    #[error("overflow guard: {0}")]
    OverflowGuard(String),

    /// Configuration parsing or validation failure.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit-status category used by the command-line runner:
    /// 2 = validation, 3 = numerical refusal, 4 = budget exhaustion, 1 = other.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Domain(_) => 2,
            Error::HorizonExceeded { .. }
            | Error::ContractionUnavailable { .. }
            | Error::KatoDivergent { .. }
            | Error::OverflowGuard(_)
            | Error::QuadratureResidual { .. } => 3,
            Error::BudgetExhausted(_) => 4,
            _ => 1,
        }
    }
}
