//! `[1/1]` multivariate Padé approximants and Taylor baselines built from a
//! point value, gradient and second-order matrix.
//!
//! Matching a second-order expansion `f0 + gᵀz + ½zᵀΛz` with
//! `(a0 + a1ᵀz)/(1 + b1ᵀz)` gives `a0 = f0`, `a1 = g + f0·b1` and the
//! condition `b1gᵀ + gb1ᵀ + Λ = 0`, which only has a solution when `Λ`
//! has rank two or less. [`pade11`] instead minimizes the Frobenius norm of
//! the left-hand side; setting its gradient to zero gives
//!
//! ```text
//! s  = −gᵀΛg / (2‖g‖²)
//! b1 = −(Λg + s·g) / ‖g‖²
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pfcore::QuantityOfInterest;
use crate::regress::{ApproximationModel, Constraint, Direction, Kind, Sense};

/// Gradients with a smaller Euclidean norm leave `b1` undetermined.
pub const GRADIENT_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PadeError {
    #[error("denominator {denominator} below floor {floor}")]
    DenominatorFloor { denominator: f64, floor: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn centered(x: &[f64], x0: &[f64]) -> Result<Vec<f64>, PadeError> {
    if x.len() != x0.len() {
        return Err(PadeError::DimensionMismatch {
            expected: x0.len(),
            got: x.len(),
        });
    }
    Ok(x.iter().zip(x0).map(|(a, b)| a - b).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PadeModel {
    pub x0: Vec<f64>,
    pub a0: f64,
    pub a1: Vec<f64>,
    pub b1: Vec<f64>,
    pub epsilon: f64,
    /// Set when the gradient vanished and `b1` fell back to zero.
    pub vanishing_gradient: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaylorModel {
    pub order: u8,
    pub x0: Vec<f64>,
    pub f0: f64,
    pub grad: Vec<f64>,
    /// Row-major `n×n`, second order only.
    pub hessian: Option<Vec<Vec<f64>>>,
}

/// Closed-form Frobenius-optimal `[1/1]` approximant around `x0`.
pub fn pade11(
    x0: &[f64],
    f0: f64,
    grad: &[f64],
    lambda: &DMatrix<f64>,
) -> Result<PadeModel, PadeError> {
    let n = grad.len();
    if x0.len() != n {
        return Err(PadeError::DimensionMismatch {
            expected: n,
            got: x0.len(),
        });
    }
    if lambda.shape() != (n, n) {
        return Err(PadeError::DimensionMismatch {
            expected: n,
            got: lambda.nrows(),
        });
    }
    let g = DVector::from_column_slice(grad);
    let gg = g.norm_squared();
    let (b1, vanishing) = if gg.sqrt() <= GRADIENT_FLOOR {
        (vec![0.0; n], true)
    } else {
        let lg = lambda * &g;
        let s = -g.dot(&lg) / (2.0 * gg);
        let b = -(lg + &g * s) / gg;
        (b.iter().copied().collect(), false)
    };
    let a1 = grad.iter().zip(&b1).map(|(gi, bi)| gi + f0 * bi).collect();
    Ok(PadeModel {
        x0: x0.to_vec(),
        a0: f0,
        a1,
        b1,
        epsilon: 0.1,
        vanishing_gradient: vanishing,
    })
}

/// `‖b1gᵀ + gb1ᵀ + Λ‖_F`, the quantity [`pade11`] minimizes over `b1`.
pub fn frobenius_residual(b1: &[f64], grad: &[f64], lambda: &DMatrix<f64>) -> f64 {
    let n = grad.len();
    let b = DVector::from_column_slice(b1);
    let g = DVector::from_column_slice(grad);
    let m = &b * g.transpose() + &g * b.transpose() + lambda;
    debug_assert_eq!(m.nrows(), n);
    m.norm()
}

impl PadeModel {
    pub fn denominator(&self, x: &[f64]) -> Result<f64, PadeError> {
        Ok(1.0 + dot(&self.b1, &centered(x, &self.x0)?))
    }

    /// As an [`ApproximationModel`] of `quantity` with no direction.
    pub fn to_approximation(&self, quantity: QuantityOfInterest) -> ApproximationModel {
        ApproximationModel {
            kind: Kind::Pade,
            quantity,
            direction: Direction::None,
            a0: self.a0,
            a1: self.a1.clone(),
            b1: self.b1.clone(),
            x0: self.x0.clone(),
            epsilon: self.epsilon,
            range: None,
            degenerate: self.vanishing_gradient,
        }
    }
}

impl TaylorModel {
    pub fn first(x0: &[f64], f0: f64, grad: &[f64]) -> Self {
        Self {
            order: 1,
            x0: x0.to_vec(),
            f0,
            grad: grad.to_vec(),
            hessian: None,
        }
    }

    pub fn second(x0: &[f64], f0: f64, grad: &[f64], lambda: &DMatrix<f64>) -> Self {
        let rows = (0..lambda.nrows())
            .map(|i| lambda.row(i).iter().copied().collect())
            .collect();
        Self {
            order: 2,
            x0: x0.to_vec(),
            f0,
            grad: grad.to_vec(),
            hessian: Some(rows),
        }
    }
}

/// Point evaluation shared by every approximation template.
pub trait Surrogate {
    /// Value at `x`. Rational templates refuse points where the
    /// denominator falls below their floor, reporting the raw denominator.
    fn evaluate(&self, x: &[f64]) -> Result<f64, PadeError>;
}

impl Surrogate for PadeModel {
    fn evaluate(&self, x: &[f64]) -> Result<f64, PadeError> {
        let z = centered(x, &self.x0)?;
        let den = 1.0 + dot(&self.b1, &z);
        if den < self.epsilon {
            return Err(PadeError::DenominatorFloor {
                denominator: den,
                floor: self.epsilon,
            });
        }
        Ok((self.a0 + dot(&self.a1, &z)) / den)
    }
}

impl Surrogate for TaylorModel {
    fn evaluate(&self, x: &[f64]) -> Result<f64, PadeError> {
        let z = centered(x, &self.x0)?;
        let mut v = self.f0 + dot(&self.grad, &z);
        if let Some(h) = &self.hessian {
            let quad: f64 = h.iter().zip(&z).map(|(row, zi)| zi * dot(row, &z)).sum();
            v += 0.5 * quad;
        }
        Ok(v)
    }
}

impl Surrogate for ApproximationModel {
    fn evaluate(&self, x: &[f64]) -> Result<f64, PadeError> {
        if x.len() != self.x0.len() {
            return Err(PadeError::DimensionMismatch {
                expected: self.x0.len(),
                got: x.len(),
            });
        }
        let den = self.denominator(x);
        if self.is_rational() && den < self.epsilon {
            return Err(PadeError::DenominatorFloor {
                denominator: den,
                floor: self.epsilon,
            });
        }
        Ok(self.numerator(x) / den)
    }
}

/// Linear row `coeffᵀx (sense) rhs` equivalent to `f̂(x) (sense) bound`
/// wherever the denominator is positive.
///
/// `(a0 + a1ᵀz)/(1 + b1ᵀz) ≤ U` is `(a1 − U·b1)ᵀz ≤ U − a0`, written in
/// terms of `x` by moving `(a1 − U·b1)ᵀx0` to the right-hand side.
pub fn to_linear_constraint(model: &ApproximationModel, bound: f64, sense: Sense) -> Constraint {
    let coeffs: Vec<f64> = model
        .a1
        .iter()
        .zip(&model.b1)
        .map(|(a, b)| a - bound * b)
        .collect();
    let rhs = bound - model.a0 + dot(&coeffs, &model.x0);
    Constraint { coeffs, sense, rhs }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn exp_pade() -> PadeModel {
        pade11(&[0.0], 1.0, &[1.0], &DMatrix::from_element(1, 1, 1.0)).unwrap()
    }

    #[test]
    fn univariate_exponential() {
        let m = exp_pade();
        assert_eq!(m.b1, vec![-0.5]);
        assert_eq!(m.a1, vec![0.5]);
        for x in [-0.7, -0.2, 0.0, 0.4, 1.0, 1.5] {
            let expect = (1.0 + x / 2.0) / (1.0 - x / 2.0);
            assert!((m.evaluate(&[x]).unwrap() - expect).abs() < 1e-12);
        }
        assert_eq!(m.evaluate(&[1.0]).unwrap(), 3.0);
    }

    #[test]
    fn univariate_reduction_exact() {
        for (g, l) in [(0.3, -2.0), (-1.7, 0.4), (5.0, 5.0)] {
            let m = pade11(&[0.0], 2.0, &[g], &DMatrix::from_element(1, 1, l)).unwrap();
            let expect = -l / (2.0 * g);
            assert!((m.b1[0] - expect).abs() <= 4.0 * f64::EPSILON * expect.abs());
        }
    }

    #[test]
    fn zero_curvature_is_first_order_taylor() {
        let g = [0.2, -0.4, 1.0];
        let m = pade11(&[1.0, 1.0, 1.0], 0.9, &g, &DMatrix::zeros(3, 3)).unwrap();
        assert!(m.b1.iter().all(|&b| b == 0.0));
        let t = TaylorModel::first(&[1.0, 1.0, 1.0], 0.9, &g);
        let x = [1.1, 0.8, 1.3];
        assert!((m.evaluate(&x).unwrap() - t.evaluate(&x).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn vanishing_gradient_falls_back() {
        let m = pade11(&[0.0, 0.0], 1.0, &[0.0, 0.0], &DMatrix::identity(2, 2)).unwrap();
        assert!(m.vanishing_gradient);
        assert_eq!(m.b1, vec![0.0, 0.0]);
    }

    #[test]
    fn closed_form_beats_perturbations() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let g: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
            let lam = &a + a.transpose();
            let m = pade11(&[0.0; 4], 1.0, &g, &lam).unwrap();
            let best = frobenius_residual(&m.b1, &g, &lam);
            for _ in 0..50 {
                let b: Vec<f64> =
                    m.b1.iter()
                        .map(|v| v + rng.gen_range(-1e-3..1e-3))
                        .collect();
                assert!(frobenius_residual(&b, &g, &lam) >= best - 1e-12);
            }
        }
    }

    #[test]
    fn a1_identity_and_interpolation() {
        let lam = DMatrix::from_row_slice(2, 2, &[-0.3, 0.1, 0.1, -0.2]);
        let g = [0.5, -0.25];
        let x0 = [0.4, -0.6];
        let m = pade11(&x0, 0.97, &g, &lam).unwrap();
        for i in 0..2 {
            assert!((m.a1[i] - (g[i] + 0.97 * m.b1[i])).abs() < 1e-12);
        }
        assert_eq!(m.evaluate(&x0).unwrap(), 0.97);
        let t2 = TaylorModel::second(&x0, 0.97, &g, &lam);
        assert_eq!(t2.evaluate(&x0).unwrap(), 0.97);
        // central-difference gradient of the approximant
        let h = 1e-6;
        for i in 0..2 {
            let mut xp = x0;
            let mut xm = x0;
            xp[i] += h;
            xm[i] -= h;
            let fd = (m.evaluate(&xp).unwrap() - m.evaluate(&xm).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1.0));
        }
    }

    #[test]
    fn taylor2_two_bus_value() {
        let t = TaylorModel::second(&[0.0], 1.0, &[0.1], &DMatrix::from_element(1, 1, -0.02));
        assert!((t.evaluate(&[0.05]).unwrap() - 1.004975).abs() < 1e-12);
    }

    #[test]
    fn denominator_floor_reported() {
        let m = exp_pade();
        match m.evaluate(&[1.95]) {
            Err(PadeError::DenominatorFloor { denominator, .. }) => {
                assert!((denominator - 0.025).abs() < 1e-12)
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn linear_constraint_forms() {
        let q = QuantityOfInterest::BusVoltage(1);
        let lin = ApproximationModel {
            kind: Kind::Linear,
            quantity: q,
            direction: Direction::None,
            a0: 1.0,
            a1: vec![2.0, -1.0],
            b1: vec![0.0, 0.0],
            x0: vec![0.5, 0.5],
            epsilon: 1.0,
            range: None,
            degenerate: false,
        };
        let row = to_linear_constraint(&lin, 1.5, Sense::Le);
        assert_eq!(row.coeffs, lin.a1);
        assert_eq!(row.rhs, 1.5 - 1.0 + 0.5);
        assert_eq!(row.sense, Sense::Le);

        let exp = exp_pade().to_approximation(q);
        let row = to_linear_constraint(&exp, 3.0, Sense::Le);
        assert!((row.coeffs[0] * 1.0 - row.rhs).abs() < 1e-12);
    }

    #[test]
    fn linear_constraint_sign_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = QuantityOfInterest::BusVoltage(1);
        let model = ApproximationModel {
            kind: Kind::Rational,
            quantity: q,
            direction: Direction::None,
            a0: 0.98,
            a1: vec![0.1, -0.3, 0.05],
            b1: vec![0.4, 0.2, -0.5],
            x0: vec![0.1, 0.2, 0.3],
            epsilon: 0.1,
            range: None,
            degenerate: false,
        };
        let u = 1.0;
        let row = to_linear_constraint(&model, u, Sense::Le);
        let mut checked = 0;
        while checked < 1000 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            if model.denominator(&x) <= 1e-6 {
                continue;
            }
            let lhs = dot(&row.coeffs, &x) - row.rhs;
            let diff = model.predict(&x) - u;
            if diff.abs() > 1e-12 {
                assert_eq!(lhs.signum(), diff.signum());
            }
            checked += 1;
        }
    }
}
