//! Weighted L1 fits solved through their linear-programming dual.
//!
//! With `φ_m` the feature row of sample `m` and `r_m = φ_mᵀθ − β_m`, the
//! primal problem is
//!
//! ```text
//! min_θ  Σ ω_m |r_m|   s.t.  r_m ≥ 0 (Over) / r_m ≤ 0 (Under),
//!                            d_mᵀθ ≥ ε − 1 (rational denominators)
//! ```
//!
//! Its dual has one equality row per coefficient and one bounded variable
//! per sample, so the simplex basis stays at most `2n + 1` wide however
//! many samples there are. The coefficients are read back from the simplex
//! multipliers.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{
    abs_errors, solve_lp, ApproximationModel, Direction, Kind, LinearProgram, LpError, LpOutcome,
    RegressError, Sense,
};
use crate::pfcore::QuantityOfInterest;
use crate::sampling::SampleSet;

/// Relative singular value below which a coefficient direction is treated
/// as undetermined by the samples.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub mean_abs_err: f64,
    pub max_abs_err: f64,
    /// Weighted problems solved.
    pub iterations: usize,
    /// `‖w_k − w_{k−1}‖₁` after each solve.
    pub w_delta_history: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub model: ApproximationModel,
    pub report: FitReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationalOptions {
    /// Floor on `1 + b1ᵀz` over the training rows.
    pub epsilon: f64,
    /// Stop once `‖Δw‖₁` falls to this value.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial weights, one per sample; all ones when absent.
    pub w0: Option<Vec<f64>>,
}

impl Default for RationalOptions {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            tol: 1e-6,
            max_iter: 25,
            w0: None,
        }
    }
}

struct Problem<'a> {
    z: Vec<Vec<f64>>,
    betas: &'a [f64],
    quantity: QuantityOfInterest,
    center: &'a [f64],
}

impl<'a> Problem<'a> {
    fn new(
        samples: &'a SampleSet,
        quantity: QuantityOfInterest,
        n_coef: usize,
    ) -> Result<Self, RegressError> {
        let betas = samples
            .betas_for(quantity)
            .ok_or(RegressError::MissingQuantity(quantity))?;
        if samples.len() < n_coef {
            return Err(RegressError::TooFewSamples {
                needed: n_coef,
                got: samples.len(),
            });
        }
        let z = samples
            .xs
            .iter()
            .map(|x| x.iter().zip(&samples.center).map(|(a, c)| a - c).collect())
            .collect();
        Ok(Self {
            z,
            betas,
            quantity,
            center: &samples.center,
        })
    }

    fn n(&self) -> usize {
        self.center.len()
    }

    fn model(
        &self,
        theta: &[f64],
        rational: bool,
        direction: Direction,
        epsilon: f64,
        degenerate: bool,
    ) -> ApproximationModel {
        let n = self.n();
        ApproximationModel {
            kind: if rational {
                Kind::Rational
            } else {
                Kind::Linear
            },
            quantity: self.quantity,
            direction,
            a0: theta[0],
            a1: theta[1..=n].to_vec(),
            b1: if rational {
                theta[n + 1..].to_vec()
            } else {
                vec![0.0; n]
            },
            x0: self.center.to_vec(),
            epsilon,
            range: None,
            degenerate,
        }
    }

    /// Solves the weighted problem; returns the coefficients
    /// `[a0, a1, (b1)]` and whether they were fixed by a minimum-norm
    /// choice.
    fn solve(
        &self,
        weights: &[f64],
        direction: Direction,
        rational: bool,
        epsilon: f64,
    ) -> Result<(Vec<f64>, bool), RegressError> {
        let n = self.n();
        let mm = self.z.len();
        let p = if rational { 2 * n + 1 } else { n + 1 };

        let feature = |m: usize| -> Vec<f64> {
            let mut f = Vec::with_capacity(p);
            f.push(1.0);
            f.extend(&self.z[m]);
            if rational {
                f.extend(self.z[m].iter().map(|v| -self.betas[m] * v));
            }
            f
        };
        let floor_row = |m: usize| -> Vec<f64> {
            let mut d = vec![0.0; n + 1];
            d.extend(&self.z[m]);
            d
        };

        // reparametrize θ = V_r η over the row space of the stacked design
        let rows = if rational { 2 * mm } else { mm };
        let mut g = DMatrix::zeros(rows, p);
        for m in 0..mm {
            g.set_row(m, &nalgebra::RowDVector::from_vec(feature(m)));
            if rational {
                g.set_row(mm + m, &nalgebra::RowDVector::from_vec(floor_row(m)));
            }
        }
        let svd = g.svd(false, true);
        let vt = svd.v_t.expect("requested Vᵀ");
        let smax = svd.singular_values.max();
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&i| svd.singular_values[i] > RANK_TOL * smax)
            .collect();
        let r = keep.len();
        let degenerate = r < p;
        let basis = DMatrix::from_fn(p, r, |i, k| vt[(keep[k], i)]);

        let n_var = if rational { 2 * mm } else { mm };
        let mut objective = Vec::with_capacity(n_var);
        objective.extend_from_slice(self.betas);
        if rational {
            objective.extend(std::iter::repeat(1.0 - epsilon).take(mm));
        }
        let mut lp = LinearProgram::new(objective);
        let mut coeffs = vec![vec![0.0; n_var]; r];
        for m in 0..mm {
            let f = nalgebra::DVector::from_vec(feature(m));
            let proj = basis.tr_mul(&f);
            for k in 0..r {
                coeffs[k][m] = proj[k];
            }
            if rational {
                let d = nalgebra::DVector::from_vec(floor_row(m));
                let proj = basis.tr_mul(&d);
                for k in 0..r {
                    coeffs[k][mm + m] = -proj[k];
                }
            }
        }
        for row in coeffs {
            lp.add(row, Sense::Eq, 0.0);
        }
        let scale = 1.0 / mm as f64;
        for (m, &w) in weights.iter().enumerate() {
            let w = w * scale;
            let (lo, hi) = match direction {
                Direction::None => (-w, w),
                Direction::Over => (f64::NEG_INFINITY, w),
                Direction::Under => (-w, f64::INFINITY),
            };
            lp.set_bounds(m, lo, hi);
        }

        match solve_lp(&lp)? {
            LpOutcome::Optimal(sol) => {
                let eta = nalgebra::DVector::from_vec(sol.duals);
                let theta = &basis * eta;
                Ok((theta.iter().copied().collect(), degenerate))
            }
            LpOutcome::Unbounded => Err(RegressError::InfeasibleConservative),
            LpOutcome::Infeasible => Err(RegressError::Lp(LpError::NumericalFailure(0))),
        }
    }
}

fn linear_fit(
    samples: &SampleSet,
    quantity: QuantityOfInterest,
    direction: Direction,
) -> Result<Fit, RegressError> {
    let n = samples.dim();
    let prob = Problem::new(samples, quantity, n + 1)?;
    let ones = vec![1.0; samples.len()];
    let (theta, degenerate) = prob.solve(&ones, direction, false, 1.0)?;
    let model = prob.model(&theta, false, direction, 1.0, degenerate);
    let (mean_abs_err, max_abs_err) = abs_errors(&model, &samples.xs, prob.betas);
    Ok(Fit {
        model,
        report: FitReport {
            mean_abs_err,
            max_abs_err,
            iterations: 1,
            w_delta_history: Vec::new(),
            converged: true,
        },
    })
}

/// Least-absolute-deviation affine fit (LA).
pub fn fit_la(samples: &SampleSet, quantity: QuantityOfInterest) -> Result<Fit, RegressError> {
    linear_fit(samples, quantity, Direction::None)
}

/// Conservative affine fit (CLA): the L1 fit constrained to stay on one
/// side of every training value.
pub fn fit_cla(
    samples: &SampleSet,
    quantity: QuantityOfInterest,
    direction: Direction,
) -> Result<Fit, RegressError> {
    linear_fit(samples, quantity, direction)
}

/// Rational fit (RA for `Direction::None`, CRA otherwise) by iterative
/// reweighting: each pass solves the linearized problem with weights
/// `w_m`, then sets `w_m ← 1/(1 + b1ᵀz_m)`. The iterate with the lowest
/// true mean error is returned; `report.converged` tells whether the
/// weights settled within `max_iter` passes.
pub fn fit_rational(
    samples: &SampleSet,
    quantity: QuantityOfInterest,
    direction: Direction,
    opts: &RationalOptions,
) -> Result<Fit, RegressError> {
    assert!(opts.epsilon > 0.0, "epsilon must be positive");
    assert!(opts.max_iter >= 1);
    let n = samples.dim();
    let prob = Problem::new(samples, quantity, 2 * n + 1)?;
    let mut w = match &opts.w0 {
        Some(w0) => {
            if w0.len() != samples.len() || w0.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(RegressError::InvalidWeights);
            }
            w0.clone()
        }
        None => vec![1.0; samples.len()],
    };

    let mut best: Option<(ApproximationModel, f64, f64)> = None;
    let mut history = Vec::new();
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let (theta, degenerate) = prob.solve(&w, direction, true, opts.epsilon)?;
        let model = prob.model(&theta, true, direction, opts.epsilon, degenerate);
        let (mean, max) = abs_errors(&model, &samples.xs, prob.betas);
        if best.as_ref().map_or(true, |(_, b, _)| mean < *b) {
            best = Some((model.clone(), mean, max));
        }
        let w_new: Vec<f64> = samples
            .xs
            .iter()
            .map(|x| 1.0 / model.denominator(x))
            .collect();
        let delta: f64 = w_new.iter().zip(&w).map(|(a, b)| (a - b).abs()).sum();
        history.push(delta);
        w = w_new;
        if delta <= opts.tol {
            converged = true;
            break;
        }
    }
    let (model, mean_abs_err, max_abs_err) = best.expect("at least one pass");
    Ok(Fit {
        model,
        report: FitReport {
            mean_abs_err,
            max_abs_err,
            iterations: history.len(),
            w_delta_history: history,
            converged,
        },
    })
}
