//! Linear programming and the constrained L1 regressions built on it.
//!
//! All four approximation classes share the template
//!
//! ```text
//! f̂(x) = (a0 + a1ᵀz) / (1 + b1ᵀz),      z = x − x0
//! ```
//!
//! with `b1 = 0` for the linear classes. Conservative fits add a sign
//! constraint on every training residual; rational fits are linearized by
//! multiplying through by the denominator and reweighted iteratively.

mod fit;
mod lp;

pub use fit::{fit_cla, fit_la, fit_rational, Fit, FitReport, RationalOptions};
pub use lp::{solve_lp, Constraint, LinearProgram, LpError, LpOutcome, LpSolution, Sense};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pfcore::QuantityOfInterest;
use crate::sampling::{OperatingRange, SamplingError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegressError {
    #[error("{got} samples cannot determine {needed} coefficients")]
    TooFewSamples { needed: usize, got: usize },
    #[error("sample set has no quantity `{0}`")]
    MissingQuantity(QuantityOfInterest),
    #[error("no conservative model satisfies every training sample")]
    InfeasibleConservative,
    #[error("non-positive initial weight")]
    InvalidWeights,
    #[error("linear program: {0}")]
    Lp(#[from] LpError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Linear,
    Rational,
    Pade,
}

/// Side of the true value a conservative model must stay on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Prediction never below the true value.
    Over,
    /// Prediction never above the true value.
    Under,
    None,
}

/// A fitted or constructed approximation of one quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproximationModel {
    pub kind: Kind,
    pub quantity: QuantityOfInterest,
    pub direction: Direction,
    pub a0: f64,
    pub a1: Vec<f64>,
    pub b1: Vec<f64>,
    pub x0: Vec<f64>,
    /// Floor the denominator was held above on the training data.
    pub epsilon: f64,
    pub range: Option<OperatingRange>,
    /// Set when the design matrix was rank deficient and the minimum-norm
    /// coefficients were chosen among equal optima.
    #[serde(default)]
    pub degenerate: bool,
}

impl ApproximationModel {
    pub fn is_rational(&self) -> bool {
        self.b1.iter().any(|&b| b != 0.0)
    }

    pub fn denominator(&self, x: &[f64]) -> f64 {
        1.0 + self
            .b1
            .iter()
            .zip(x.iter().zip(&self.x0))
            .map(|(b, (xi, ci))| b * (xi - ci))
            .sum::<f64>()
    }

    pub fn numerator(&self, x: &[f64]) -> f64 {
        self.a0
            + self
                .a1
                .iter()
                .zip(x.iter().zip(&self.x0))
                .map(|(a, (xi, ci))| a * (xi - ci))
                .sum::<f64>()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.x0.len(), "input dimension mismatch");
        self.numerator(x) / self.denominator(x)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }
}

/// Mean and maximum absolute error of `model` over rows `xs` against
/// `betas`.
pub fn abs_errors(model: &ApproximationModel, xs: &[Vec<f64>], betas: &[f64]) -> (f64, f64) {
    let mut sum = 0.0;
    let mut max: f64 = 0.0;
    for (x, b) in xs.iter().zip(betas) {
        let e = (model.predict(x) - b).abs();
        sum += e;
        max = max.max(e);
    }
    (sum / xs.len().max(1) as f64, max)
}
