//! AC power flow: mismatch evaluation, Newton–Raphson solution and the
//! complex-form Jacobian.
//!
//! The solver works in the *reduced* coordinates used throughout the crate:
//!
//! * injections `x = [P at PV∪PQ; Q at PQ]`,
//! * state `y = [θ at PV∪PQ; V at PQ]`.
//!
//! The reference bus is held at its set-point magnitude and zero angle, PV
//! magnitudes at their generator set points. The ordering of PV∪PQ and PQ
//! buses follows the order of buses in the case. [`BusIndexing`] maps between
//! reduced coordinates and bus positions.

mod jacobian;
mod newton;
mod quantity;

pub(crate) use jacobian::reduce as jacobian_reduce;
pub use jacobian::{complex_power_gradients, real_jacobian, ComplexJacobianBlocks};
pub use newton::{mismatch, power_injections, solve_newton, NewtonOptions};
pub use quantity::QuantityOfInterest;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::linalg::SingularMatrix;
use crate::netmodel::{build_ybus, AdmittanceMatrix, BusKind, CaseError, NetworkCase};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PfError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("singular Jacobian ({0})")]
    SingularJacobian(SingularMatrix),
    #[error("unknown quantity of interest `{0}`")]
    UnknownQuantity(String),
    #[error(transparent)]
    Case(#[from] CaseError),
}

/// Positions of the buses carrying reduced coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BusIndexing {
    pub reference: usize,
    /// PV and PQ buses, in case order: angle unknowns and P injections.
    pub pvpq: Vec<usize>,
    /// PQ buses, in case order: magnitude unknowns and Q injections.
    pub pq: Vec<usize>,
}

impl BusIndexing {
    pub fn new(case: &NetworkCase) -> Self {
        let mut pvpq = Vec::new();
        let mut pq = Vec::new();
        for (i, b) in case.buses.iter().enumerate() {
            match b.kind {
                BusKind::Ref => {}
                BusKind::Pv => pvpq.push(i),
                BusKind::Pq => {
                    pvpq.push(i);
                    pq.push(i);
                }
            }
        }
        Self {
            reference: case.ref_position(),
            pvpq,
            pq,
        }
    }

    /// Length of both the reduced state and the reduced injection vector.
    pub fn dim(&self) -> usize {
        self.pvpq.len() + self.pq.len()
    }

    /// Reduced index of the magnitude unknown of the bus at `pos`, if it is
    /// a PQ bus.
    pub fn vm_index(&self, pos: usize) -> Option<usize> {
        self.pq
            .iter()
            .position(|&p| p == pos)
            .map(|k| self.pvpq.len() + k)
    }

    pub fn theta_index(&self, pos: usize) -> Option<usize> {
        self.pvpq.iter().position(|&p| p == pos)
    }

    /// Bus position and kind (`true` for magnitude / reactive) of reduced
    /// coordinate `k`.
    pub fn coordinate(&self, k: usize) -> (usize, bool) {
        if k < self.pvpq.len() {
            (self.pvpq[k], false)
        } else {
            (self.pq[k - self.pvpq.len()], true)
        }
    }

    /// Human-readable label of reduced injection coordinate `k`, e.g. `P3`.
    pub fn injection_label(&self, case: &NetworkCase, k: usize) -> String {
        let (pos, is_q) = self.coordinate(k);
        format!("{}{}", if is_q { 'Q' } else { 'P' }, case.buses[pos].id)
    }
}

/// Reduced injection vector `x = [P; Q]`, generation positive.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InjectionVector {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl InjectionVector {
    pub fn from_slice(index: &BusIndexing, x: &[f64]) -> Result<Self, PfError> {
        if x.len() != index.dim() {
            return Err(PfError::DimensionMismatch {
                expected: index.dim(),
                got: x.len(),
            });
        }
        let (p, q) = x.split_at(index.pvpq.len());
        Ok(Self {
            p: p.to_vec(),
            q: q.to_vec(),
        })
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.p.iter().chain(&self.q).copied().collect()
    }

    pub fn len(&self) -> usize {
        self.p.len() + self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Reduced state vector `y = [θ; V]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateVector {
    pub theta: Vec<f64>,
    pub v: Vec<f64>,
}

impl StateVector {
    pub fn from_slice(index: &BusIndexing, y: &[f64]) -> Result<Self, PfError> {
        if y.len() != index.dim() {
            return Err(PfError::DimensionMismatch {
                expected: index.dim(),
                got: y.len(),
            });
        }
        let (t, v) = y.split_at(index.pvpq.len());
        Ok(Self {
            theta: t.to_vec(),
            v: v.to_vec(),
        })
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.theta.len() + self.v.len(),
            self.theta.iter().chain(&self.v).copied(),
        )
    }
}

/// A case prepared for repeated power flow solves: admittance matrix,
/// reduced indexing and the fixed voltage magnitudes of PV/REF buses.
///
/// Immutable after construction; share it across threads by reference.
#[derive(Debug, Clone)]
pub struct PowerFlowModel {
    pub case: NetworkCase,
    pub ybus: AdmittanceMatrix,
    pub index: BusIndexing,
    /// Magnitude each bus is held at when it is not a PQ bus.
    pub v_fixed: Vec<f64>,
}

impl PowerFlowModel {
    pub fn new(case: &NetworkCase) -> Result<Self, PfError> {
        case.validate()?;
        let ybus = build_ybus(case)?;
        let index = BusIndexing::new(case);
        let v_fixed = (0..case.n_bus())
            .map(|i| match case.buses[i].kind {
                BusKind::Pq => 1.0,
                _ => case.voltage_setpoint(i),
            })
            .collect();
        Ok(Self {
            case: case.clone(),
            ybus,
            index,
            v_fixed,
        })
    }

    pub fn dim(&self) -> usize {
        self.index.dim()
    }

    /// Scheduled injections of the case in reduced form.
    pub fn nominal_injections(&self) -> InjectionVector {
        let p = self.case.scheduled_p();
        let q = self.case.scheduled_q();
        InjectionVector {
            p: self.index.pvpq.iter().map(|&i| p[i]).collect(),
            q: self.index.pq.iter().map(|&i| q[i]).collect(),
        }
    }

    /// `θ = 0` everywhere, `V = 1` at PQ buses.
    pub fn flat_start(&self) -> StateVector {
        StateVector {
            theta: vec![0.0; self.index.pvpq.len()],
            v: vec![1.0; self.index.pq.len()],
        }
    }

    /// Expands a reduced state to full-length magnitude and angle vectors.
    pub fn full_voltage(&self, y: &StateVector) -> (Vec<f64>, Vec<f64>) {
        let mut vm = self.v_fixed.clone();
        let mut va = vec![0.0; vm.len()];
        for (k, &i) in self.index.pvpq.iter().enumerate() {
            va[i] = y.theta[k];
        }
        for (k, &i) in self.index.pq.iter().enumerate() {
            vm[i] = y.v[k];
        }
        (vm, va)
    }

    pub fn reduced_state(&self, vm: &[f64], va: &[f64]) -> StateVector {
        StateVector {
            theta: self.index.pvpq.iter().map(|&i| va[i]).collect(),
            v: self.index.pq.iter().map(|&i| vm[i]).collect(),
        }
    }

    /// Solves from a flat start with default options.
    pub fn solve(&self, x: &InjectionVector) -> Result<PowerFlowSolution, PfError> {
        solve_newton(self, x, &self.flat_start(), &NewtonOptions::default())
    }
}

/// Outcome of a Newton solve. Non-convergence is reported through
/// `converged`, not as an error.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    pub s_inj: Vec<Complex64>,
    /// From-end current magnitude of every branch, zero when out of service.
    pub branch_i: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub residual_inf: f64,
}

#[derive(Serialize)]
struct BusRow {
    id: u32,
    kind: BusKind,
    v: f64,
    theta: f64,
    p: f64,
    q: f64,
}

#[derive(Serialize)]
struct BranchRow {
    index: usize,
    from_bus: u32,
    to_bus: u32,
    i_from: f64,
}

#[derive(Serialize)]
struct SolutionDoc {
    converged: bool,
    iterations: usize,
    residual_inf: f64,
    buses: Vec<BusRow>,
    branches: Vec<BranchRow>,
}

impl PowerFlowSolution {
    /// JSON document with a bus table and a branch table.
    pub fn to_json(&self, case: &NetworkCase) -> String {
        let doc = SolutionDoc {
            converged: self.converged,
            iterations: self.iterations,
            residual_inf: self.residual_inf,
            buses: case
                .buses
                .iter()
                .enumerate()
                .map(|(i, b)| BusRow {
                    id: b.id,
                    kind: b.kind,
                    v: self.v[i],
                    theta: self.theta[i],
                    p: self.s_inj[i].re,
                    q: self.s_inj[i].im,
                })
                .collect(),
            branches: case
                .branches
                .iter()
                .enumerate()
                .map(|(k, br)| BranchRow {
                    index: k,
                    from_bus: br.from_bus,
                    to_bus: br.to_bus,
                    i_from: self.branch_i[k],
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("solution serializes")
    }
}

/// From-end current magnitudes of the π branch model at a given voltage
/// profile.
pub fn branch_currents(case: &NetworkCase, vm: &[f64], va: &[f64]) -> Vec<f64> {
    case.branches
        .iter()
        .map(|br| {
            if !br.in_service {
                return 0.0;
            }
            let f = case.bus_position(br.from_bus).expect("validated");
            let t = case.bus_position(br.to_bus).expect("validated");
            let ys = Complex64::new(br.r, br.x).inv();
            let tap = Complex64::from_polar(br.tap, br.shift);
            let yff = (ys + Complex64::new(0.0, br.b_chg / 2.0)) / (tap * tap.conj());
            let yft = -ys / tap.conj();
            let vf = Complex64::from_polar(vm[f], va[f]);
            let vt = Complex64::from_polar(vm[t], va[t]);
            (yff * vf + yft * vt).norm()
        })
        .collect()
}
