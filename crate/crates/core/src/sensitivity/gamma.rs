use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::netmodel::AdmittanceMatrix;
use crate::pfcore::jacobian_reduce;
use crate::pfcore::BusIndexing;

/// Derivatives of `(∂S/∂θ, ∂S/∂|V|)` with respect to the angle (`wrt_v =
/// false`) or magnitude (`wrt_v = true`) of bus `b`, full `N×N`.
///
/// Only row `b`, column `b` and the diagonal can be non-zero, so each block
/// is filled entry by entry from the selector vectors `V_b·e_b` and
/// `e^{jθ_b}·e_b`.
pub fn complex_block_derivatives(
    vm: &[f64],
    va: &[f64],
    ybus: &AdmittanceMatrix,
    b: usize,
    wrt_v: bool,
) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
    let n = vm.len();
    let y = &ybus.y;
    let j = Complex64::new(0.0, 1.0);
    let v: Vec<Complex64> = vm
        .iter()
        .zip(va)
        .map(|(&m, &a)| Complex64::from_polar(m, a))
        .collect();
    let e: Vec<Complex64> = va.iter().map(|&a| Complex64::from_polar(1.0, a)).collect();
    let i_b = (0..n).fold(Complex64::new(0.0, 0.0), |acc, c| acc + y[(b, c)] * v[c]);

    let mut d_theta = DMatrix::<Complex64>::zeros(n, n);
    let mut d_v = DMatrix::<Complex64>::zeros(n, n);

    if !wrt_v {
        let vb = v[b];
        let eb = e[b];
        for c in 0..n {
            // row b contributions
            let mut t = vb * (y[(b, c)] * v[c]).conj();
            if c == b {
                t -= vb * i_b.conj();
            }
            d_theta[(b, c)] += t;
            d_v[(b, c)] += j * vb * (y[(b, c)] * e[c]).conj();
        }
        for r in 0..n {
            let yrb_vb = (y[(r, b)] * vb).conj();
            d_theta[(r, r)] += v[r] * yrb_vb;
            d_theta[(r, b)] -= v[r] * yrb_vb;
            d_v[(r, r)] -= j * e[r] * yrb_vb;
            d_v[(r, b)] -= j * v[r] * (y[(r, b)] * eb).conj();
        }
        d_v[(b, b)] += j * eb * i_b.conj();
    } else {
        let eb = e[b];
        for c in 0..n {
            let mut t = -eb * (y[(b, c)] * v[c]).conj();
            if c == b {
                t += eb * i_b.conj();
            }
            d_theta[(b, c)] += j * t;
            d_v[(b, c)] += eb * (y[(b, c)] * e[c]).conj();
        }
        for r in 0..n {
            let yrb_eb = (y[(r, b)] * eb).conj();
            d_theta[(r, r)] += j * v[r] * yrb_eb;
            d_theta[(r, b)] -= j * v[r] * yrb_eb;
            d_v[(r, r)] += e[r] * yrb_eb;
        }
    }
    (d_theta, d_v)
}

/// Derivative of the reduced real Jacobian with respect to reduced state
/// coordinate `coord`.
pub fn jacobian_state_derivative(
    vm: &[f64],
    va: &[f64],
    ybus: &AdmittanceMatrix,
    index: &BusIndexing,
    coord: usize,
) -> DMatrix<f64> {
    let (bus, wrt_v) = index.coordinate(coord);
    let (dt, dv) = complex_block_derivatives(vm, va, ybus, bus, wrt_v);
    jacobian_reduce(&dt, &dv, index)
}
