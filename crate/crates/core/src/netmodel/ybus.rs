use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{CaseError, NetworkCase};

/// Complex nodal admittance matrix `Y = G + jB`, indexed by bus position.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    pub y: DMatrix<Complex64>,
}

impl AdmittanceMatrix {
    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn g(&self) -> DMatrix<f64> {
        self.y.map(|c| c.re)
    }

    pub fn b(&self) -> DMatrix<f64> {
        self.y.map(|c| c.im)
    }

    /// Largest entry of `|Y - Yᵀ|`.
    pub fn asymmetry(&self) -> f64 {
        let t = self.y.transpose();
        (&self.y - t).iter().map(|c| c.norm()).fold(0.0, f64::max)
    }
}

/// Assembles the bus admittance matrix with the standard π branch model.
///
/// Series admittance `1/(r + jx)`, half the charging susceptance at each end,
/// complex tap `tap·e^{j·shift}` on the from side. Bus shunts go on the
/// diagonal. Out-of-service branches are skipped.
pub fn build_ybus(case: &NetworkCase) -> Result<AdmittanceMatrix, CaseError> {
    let n = case.n_bus();
    let mut y = DMatrix::<Complex64>::zeros(n, n);
    for (k, br) in case.branches.iter().enumerate() {
        if !br.in_service {
            continue;
        }
        if br.r == 0.0 && br.x == 0.0 {
            return Err(CaseError::ZeroImpedanceBranch(k));
        }
        let f = case
            .bus_position(br.from_bus)
            .ok_or(CaseError::DanglingReference {
                section: "branch",
                row: k,
                bus: br.from_bus,
            })?;
        let t = case
            .bus_position(br.to_bus)
            .ok_or(CaseError::DanglingReference {
                section: "branch",
                row: k,
                bus: br.to_bus,
            })?;
        let ys = Complex64::new(br.r, br.x).inv();
        let half_b = Complex64::new(0.0, br.b_chg / 2.0);
        let tap = Complex64::from_polar(br.tap, br.shift);
        let ytt = ys + half_b;
        y[(f, f)] += ytt / (tap * tap.conj());
        y[(t, t)] += ytt;
        y[(f, t)] -= ys / tap.conj();
        y[(t, f)] -= ys / tap;
    }
    for (i, bus) in case.buses.iter().enumerate() {
        y[(i, i)] += Complex64::new(bus.gs, bus.bs);
    }
    Ok(AdmittanceMatrix { y })
}
