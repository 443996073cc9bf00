use nalgebra::DVector;
use num_complex::Complex64;

use super::jacobian::phasors;
use super::{
    branch_currents, complex_power_gradients, real_jacobian, InjectionVector, PfError,
    PowerFlowModel, PowerFlowSolution, StateVector,
};
use crate::linalg::Factorization;
use crate::netmodel::AdmittanceMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 20,
        }
    }
}

/// Complex injections `S_i = V_i·conj(Σ_k Y_ik V_k)` for every bus.
pub fn power_injections(vm: &[f64], va: &[f64], ybus: &AdmittanceMatrix) -> Vec<Complex64> {
    let v = phasors(vm, va);
    let i = &ybus.y * &v;
    v.iter().zip(i.iter()).map(|(v, i)| v * i.conj()).collect()
}

/// Specified minus computed injections, ordered `[ΔP at PV∪PQ; ΔQ at PQ]`.
pub fn mismatch(
    model: &PowerFlowModel,
    x_spec: &InjectionVector,
    y: &StateVector,
) -> Result<DVector<f64>, PfError> {
    let dim = model.dim();
    if x_spec.len() != dim || x_spec.p.len() != model.index.pvpq.len() {
        return Err(PfError::DimensionMismatch {
            expected: dim,
            got: x_spec.len(),
        });
    }
    if y.theta.len() + y.v.len() != dim || y.theta.len() != model.index.pvpq.len() {
        return Err(PfError::DimensionMismatch {
            expected: dim,
            got: y.theta.len() + y.v.len(),
        });
    }
    let (vm, va) = model.full_voltage(y);
    let s = power_injections(&vm, &va, &model.ybus);
    Ok(residual(model, x_spec, &s))
}

fn residual(model: &PowerFlowModel, x_spec: &InjectionVector, s: &[Complex64]) -> DVector<f64> {
    let idx = &model.index;
    DVector::from_iterator(
        idx.dim(),
        idx.pvpq
            .iter()
            .zip(&x_spec.p)
            .map(|(&i, p)| p - s[i].re)
            .chain(idx.pq.iter().zip(&x_spec.q).map(|(&i, q)| q - s[i].im)),
    )
}

/// Newton–Raphson on the reduced system. Stops as soon as the mismatch
/// infinity norm is at or below `opts.tol`; iterations counts Jacobian
/// solves.
pub fn solve_newton(
    model: &PowerFlowModel,
    x_spec: &InjectionVector,
    y0: &StateVector,
    opts: &NewtonOptions,
) -> Result<PowerFlowSolution, PfError> {
    assert!(opts.tol > 0.0, "tolerance must be positive");
    let mut f = mismatch(model, x_spec, y0)?;
    let (mut vm, mut va) = model.full_voltage(y0);
    let idx = &model.index;
    let npvpq = idx.pvpq.len();

    let mut iterations = 0;
    let mut norm = f.amax();
    let mut converged = norm <= opts.tol;
    while !converged && iterations < opts.max_iter && norm.is_finite() {
        let blocks = complex_power_gradients(&vm, &va, &model.ybus);
        let jac = real_jacobian(&blocks, idx);
        let lu = Factorization::new(jac).map_err(PfError::SingularJacobian)?;
        let dy = lu.solve(&f);
        for (k, &i) in idx.pvpq.iter().enumerate() {
            va[i] += dy[k];
        }
        for (k, &i) in idx.pq.iter().enumerate() {
            vm[i] += dy[npvpq + k];
        }
        iterations += 1;
        let s = power_injections(&vm, &va, &model.ybus);
        f = residual(model, x_spec, &s);
        norm = f.amax();
        converged = norm <= opts.tol && vm.iter().all(|&v| v > 0.0);
    }
    if !norm.is_finite() {
        norm = f64::INFINITY;
    }

    let s_inj = power_injections(&vm, &va, &model.ybus);
    let branch_i = branch_currents(&model.case, &vm, &va);
    Ok(PowerFlowSolution {
        v: vm,
        theta: va,
        s_inj,
        branch_i,
        converged,
        iterations,
        residual_inf: norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn two_bus() -> PowerFlowModel {
        PowerFlowModel::new(&fixtures::two_bus()).unwrap()
    }

    fn inj(p2: f64, q2: f64) -> InjectionVector {
        InjectionVector {
            p: vec![p2],
            q: vec![q2],
        }
    }

    #[test]
    fn flat_no_load_residual_is_zero() {
        let m = two_bus();
        let r = mismatch(&m, &inj(0.0, 0.0), &m.flat_start()).unwrap();
        assert!(r.amax() < 1e-15);
    }

    #[test]
    fn flat_state_injects_nothing() {
        let m = two_bus();
        let r = mismatch(&m, &inj(-0.2, 0.0), &m.flat_start()).unwrap();
        assert!((r[0] + 0.2).abs() < 1e-15);
        assert!(r[1].abs() < 1e-15);
    }

    #[test]
    fn closed_form_state_has_small_residual() {
        let m = two_bus();
        let y = StateVector {
            theta: vec![-0.02001],
            v: vec![0.99980],
        };
        let r = mismatch(&m, &inj(-0.2, 0.0), &y).unwrap();
        assert!(r.amax() <= 1e-4, "{}", r.amax());
    }

    #[test]
    fn dimension_mismatch_reported() {
        let m = two_bus();
        let bad = InjectionVector {
            p: vec![0.0, 1.0],
            q: vec![0.0],
        };
        assert!(matches!(
            mismatch(&m, &bad, &m.flat_start()),
            Err(PfError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_load_converges_immediately() {
        let m = two_bus();
        let sol = m.solve(&inj(0.0, 0.0)).unwrap();
        assert!(sol.converged);
        assert!(sol.iterations <= 1);
        assert!((sol.v[1] - 1.0).abs() < 1e-12 && sol.theta[1].abs() < 1e-12);
    }

    #[test]
    fn two_bus_closed_form() {
        let m = two_bus();
        let opts = NewtonOptions {
            tol: 1e-10,
            max_iter: 20,
        };
        let sol = solve_newton(&m, &inj(-0.2, 0.0), &m.flat_start(), &opts).unwrap();
        assert!(sol.converged);
        // sin(2θ) = -0.04 and V = cos θ
        let theta = 0.5 * (-0.04f64).asin();
        assert!((sol.theta[1] - theta).abs() < 1e-10);
        assert!((sol.v[1] - theta.cos()).abs() < 1e-10);
    }

    #[test]
    fn pathological_load_does_not_converge() {
        let m = two_bus();
        let sol = m.solve(&inj(-10.0, -10.0));
        match sol {
            Ok(s) => assert!(!s.converged),
            Err(e) => assert!(matches!(e, PfError::SingularJacobian(_))),
        }
    }
}
