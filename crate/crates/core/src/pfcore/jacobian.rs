use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::BusIndexing;
use crate::netmodel::AdmittanceMatrix;

/// Derivatives of the complex bus injections `S = diag(V)·conj(Y·V)` with
/// respect to voltage angles and magnitudes, full `N×N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexJacobianBlocks {
    pub ds_dtheta: DMatrix<Complex64>,
    pub ds_dv: DMatrix<Complex64>,
}

pub(crate) fn phasors(vm: &[f64], va: &[f64]) -> DVector<Complex64> {
    DVector::from_iterator(
        vm.len(),
        vm.iter()
            .zip(va)
            .map(|(&m, &a)| Complex64::from_polar(m, a)),
    )
}

/// `∂S/∂θ = j·diag(V)·conj(diag(I) − Y·diag(V))` and
/// `∂S/∂|V| = diag(e^{jθ})·conj(diag(I)) + diag(V)·conj(Y·diag(e^{jθ}))`,
/// with `I = Y·V`.
pub fn complex_power_gradients(
    vm: &[f64],
    va: &[f64],
    ybus: &AdmittanceMatrix,
) -> ComplexJacobianBlocks {
    let n = vm.len();
    assert_eq!(ybus.n(), n, "admittance matrix and voltage length differ");
    let y = &ybus.y;
    let v = phasors(vm, va);
    let e = DVector::from_iterator(n, va.iter().map(|&a| Complex64::from_polar(1.0, a)));
    let i = y * &v;
    let j = Complex64::new(0.0, 1.0);

    let mut ds_dtheta = DMatrix::zeros(n, n);
    let mut ds_dv = DMatrix::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            let yrc = y[(r, c)];
            // −Y·diag(V) and Y·diag(e) entries
            let mut t = -(yrc * v[c]).conj();
            let mut m = v[r] * (yrc * e[c]).conj();
            if r == c {
                t += i[r].conj();
                m += e[r] * i[r].conj();
            }
            ds_dtheta[(r, c)] = j * v[r] * t;
            ds_dv[(r, c)] = m;
        }
    }
    ComplexJacobianBlocks { ds_dtheta, ds_dv }
}

/// Real reduced Jacobian `[[Re ∂S/∂θ, Re ∂S/∂V], [Im ∂S/∂θ, Im ∂S/∂V]]`
/// restricted to rows `[P at PV∪PQ; Q at PQ]` and columns
/// `[θ at PV∪PQ; V at PQ]`.
pub fn real_jacobian(blocks: &ComplexJacobianBlocks, index: &BusIndexing) -> DMatrix<f64> {
    reduce(&blocks.ds_dtheta, &blocks.ds_dv, index)
}

/// Reduction shared by the Jacobian and its state derivatives.
pub(crate) fn reduce(
    d_theta: &DMatrix<Complex64>,
    d_v: &DMatrix<Complex64>,
    index: &BusIndexing,
) -> DMatrix<f64> {
    let npvpq = index.pvpq.len();
    let dim = index.dim();
    DMatrix::from_fn(dim, dim, |r, c| {
        let (rb, rq) = if r < npvpq {
            (index.pvpq[r], false)
        } else {
            (index.pq[r - npvpq], true)
        };
        let z = if c < npvpq {
            d_theta[(rb, index.pvpq[c])]
        } else {
            d_v[(rb, index.pq[c - npvpq])]
        };
        if rq {
            z.im
        } else {
            z.re
        }
    })
}
