//! First- and second-order sensitivities of the power flow solution with
//! respect to the reduced injections.
//!
//! With `x = g(y)` the reduced power flow equations and `J = ∂g/∂y`, the
//! first-order sensitivities are `∇ₓy = J⁻¹`. Differentiating
//! `J·∇ₓy = I` once more gives, for every injection coordinate `xᵢ`,
//!
//! ```text
//! ∂/∂xᵢ ∇ₓy = −J⁻¹ (Σₘ Γₘ ∂yₘ/∂xᵢ) J⁻¹,      Γₘ = ∂J/∂yₘ
//! ```
//!
//! Row `k` of that matrix, collected over all `i`, is the Hessian `Λ` of
//! state `yₖ` with respect to `x`. [`second_order`] assembles it for a PQ
//! bus voltage magnitude; [`dominant_subspace`] summarizes its spectrum.

mod gamma;
mod spectral;

pub use gamma::{complex_block_derivatives, jacobian_state_derivative};
pub use spectral::{
    dominant_subspace, span_stability, stacked_rank, Curvature, SpanStability, SpectralSummary,
    CURVATURE_TOL, RANK_FRACTION,
};

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::linalg::{Factorization, SingularMatrix};
use crate::pfcore::{
    complex_power_gradients, real_jacobian, PfError, PowerFlowModel, PowerFlowSolution,
    QuantityOfInterest,
};

/// Largest tolerated `max|Λ − Λᵀ|`, scaled by `max(1, max|Λ|)`, before
/// symmetrization.
pub const ASYMMETRY_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensitivityError {
    #[error("singular Jacobian ({0})")]
    SingularJacobian(SingularMatrix),
    #[error("second-order target must be a PQ bus voltage magnitude, got `{0}`")]
    UnsupportedTarget(String),
    #[error("second-order matrix asymmetry {0:e} exceeds tolerance")]
    Asymmetric(f64),
    #[error("empty matrix")]
    EmptyMatrix,
    #[error("operating point did not converge")]
    NotConverged,
    #[error(transparent)]
    PowerFlow(#[from] PfError),
}

/// Jacobian, its inverse and the per-state Jacobian derivatives at one
/// operating point.
#[derive(Debug, Clone)]
pub struct SensitivityBundle {
    pub jacobian: DMatrix<f64>,
    /// `∇ₓy = J⁻¹`; row `k` is the gradient of reduced state `k`.
    pub first_order: DMatrix<f64>,
    /// `Γₘ = ∂J/∂yₘ`, one per reduced state coordinate.
    pub gammas: Vec<DMatrix<f64>>,
}

impl SensitivityBundle {
    /// Builds the bundle at a converged operating point.
    pub fn new(model: &PowerFlowModel, sol: &PowerFlowSolution) -> Result<Self, SensitivityError> {
        if !sol.converged {
            return Err(SensitivityError::NotConverged);
        }
        Self::at_state(model, &sol.v, &sol.theta)
    }

    /// Builds the bundle at an arbitrary full voltage profile.
    pub fn at_state(
        model: &PowerFlowModel,
        vm: &[f64],
        va: &[f64],
    ) -> Result<Self, SensitivityError> {
        let jacobian = real_jacobian(&complex_power_gradients(vm, va, &model.ybus), &model.index);
        let lu =
            Factorization::new(jacobian.clone()).map_err(SensitivityError::SingularJacobian)?;
        let first_order = lu.inverse();
        let gammas = (0..model.dim())
            .map(|k| jacobian_state_derivative(vm, va, &model.ybus, &model.index, k))
            .collect();
        Ok(Self {
            jacobian,
            first_order,
            gammas,
        })
    }

    pub fn dim(&self) -> usize {
        self.jacobian.nrows()
    }
}

/// Hessian of one voltage magnitude with respect to the reduced injections.
#[derive(Debug, Clone, Serialize)]
pub struct SecondOrderSensitivity {
    pub target: QuantityOfInterest,
    /// Symmetrized `Λ`, `n×n` in pu per pu².
    #[serde(serialize_with = "crate::sensitivity::ser_matrix")]
    pub lambda: DMatrix<f64>,
    /// `max|Λ − Λᵀ|` of the raw assembly.
    pub asymmetry: f64,
}

pub(crate) fn ser_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for r in 0..m.nrows() {
        let row: Vec<f64> = m.row(r).iter().copied().collect();
        seq.serialize_element(&row)?;
    }
    seq.end()
}

/// Reduced state index of a PQ-bus voltage magnitude target.
pub fn target_coordinate(
    model: &PowerFlowModel,
    target: QuantityOfInterest,
) -> Result<usize, SensitivityError> {
    let unsupported = || SensitivityError::UnsupportedTarget(target.to_string());
    match target {
        QuantityOfInterest::BusVoltage(id) => {
            let pos = model.case.bus_position(id).ok_or_else(unsupported)?;
            model.index.vm_index(pos).ok_or_else(unsupported)
        }
        _ => Err(unsupported()),
    }
}

/// Raw (unsymmetrized) second-order matrix of reduced state `k`:
/// `Λ[i, l] = −Σₘ [J⁻¹]ₘᵢ ([J⁻¹]ₖ Γₘ J⁻¹)ₗ`.
pub fn second_order_raw(bundle: &SensitivityBundle, k: usize) -> DMatrix<f64> {
    let n = bundle.dim();
    let jinv = &bundle.first_order;
    let row_k = jinv.row(k);
    // row m of `weighted` is [J⁻¹]ₖ Γₘ J⁻¹
    let mut weighted = DMatrix::zeros(n, n);
    for (m, gamma) in bundle.gammas.iter().enumerate() {
        let u = row_k * gamma;
        weighted.set_row(m, &(u * jinv));
    }
    -(jinv.transpose() * weighted)
}

/// Second-order sensitivity matrix of a PQ-bus voltage magnitude.
///
/// The raw assembly is checked for symmetry (mixed partials commute) and
/// then replaced by `(Λ + Λᵀ)/2`.
pub fn second_order(
    model: &PowerFlowModel,
    bundle: &SensitivityBundle,
    target: QuantityOfInterest,
) -> Result<SecondOrderSensitivity, SensitivityError> {
    let k = target_coordinate(model, target)?;
    let raw = second_order_raw(bundle, k);
    let asymmetry = (&raw - raw.transpose()).amax();
    if asymmetry > ASYMMETRY_TOL * raw.amax().max(1.0) {
        return Err(SensitivityError::Asymmetric(asymmetry));
    }
    let lambda = (&raw + raw.transpose()) * 0.5;
    Ok(SecondOrderSensitivity {
        target,
        lambda,
        asymmetry,
    })
}

/// Solves the nominal operating point and returns the target's value,
/// gradient and second-order matrix.
pub fn nominal_expansion(
    model: &PowerFlowModel,
    target: QuantityOfInterest,
) -> Result<(f64, Vec<f64>, SecondOrderSensitivity), SensitivityError> {
    let sol = model.solve(&model.nominal_injections())?;
    if !sol.converged {
        return Err(SensitivityError::NotConverged);
    }
    let bundle = SensitivityBundle::new(model, &sol)?;
    let k = target_coordinate(model, target)?;
    let f0 = target.extract(&model.case, &sol)?;
    let grad = bundle.first_order.row(k).iter().copied().collect();
    let so = second_order(model, &bundle, target)?;
    Ok((f0, grad, so))
}
