//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector, Dyn, LU};
use thiserror::Error;

/// Pivot magnitude below which a factorization is reported singular.
pub const PIVOT_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
#[error("singular matrix: pivot {pivot:e} at column {column}")]
pub struct SingularMatrix {
    pub column: usize,
    pub pivot: f64,
}

/// LU factorization with partial pivoting that refuses near-zero pivots.
#[derive(Debug, Clone)]
pub struct Factorization {
    lu: LU<f64, Dyn, Dyn>,
}

impl Factorization {
    pub fn new(m: DMatrix<f64>) -> Result<Self, SingularMatrix> {
        assert!(m.is_square(), "factorization needs a square matrix");
        let lu = m.lu();
        let u = lu.u();
        for i in 0..u.nrows() {
            let p = u[(i, i)];
            if !(p.abs() >= PIVOT_TOL) {
                return Err(SingularMatrix {
                    column: i,
                    pivot: p,
                });
            }
        }
        Ok(Self { lu })
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.lu.solve(rhs).expect("pivots checked at factorization")
    }

    pub fn solve_matrix(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.lu.solve(rhs).expect("pivots checked at factorization")
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.lu
            .try_inverse()
            .expect("pivots checked at factorization")
    }
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

/// `max|a - b| / max|b|`, with the denominator floored so that comparisons
/// against an all-zero reference degrade to an absolute check.
pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    max_abs(&(a - b)) / max_abs(b).max(1e-9)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singular_is_reported() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(Factorization::new(m).is_err());
        let ok = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 3.0, 4.0]);
        let f = Factorization::new(ok).unwrap();
        let x = f.solve(&DVector::from_vec(vec![2.0, 7.0]));
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
    }
}
