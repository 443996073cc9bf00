use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{PfError, PowerFlowSolution};
use crate::netmodel::{BusKind, NetworkCase};

/// A scalar read off a power flow solution.
///
/// Text form (used on the command line and in output files): `v:<bus>`,
/// `i:<branch index>`, `q:<bus>`, `pslack`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum QuantityOfInterest {
    BusVoltage(u32),
    BranchCurrent(usize),
    /// Reactive output of the generation at a PV or REF bus.
    GenReactive(u32),
    /// Active output of the generation at the reference bus.
    SlackActive,
}

impl fmt::Display for QuantityOfInterest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::BusVoltage(b) => write!(f, "v:{b}"),
            Self::BranchCurrent(l) => write!(f, "i:{l}"),
            Self::GenReactive(b) => write!(f, "q:{b}"),
            Self::SlackActive => f.write_str("pslack"),
        }
    }
}

impl FromStr for QuantityOfInterest {
    type Err = PfError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || PfError::UnknownQuantity(s.to_string());
        if s == "pslack" {
            return Ok(Self::SlackActive);
        }
        let (tag, num) = s.split_once(':').ok_or_else(unknown)?;
        match tag {
            "v" => num.parse().map(Self::BusVoltage).map_err(|_| unknown()),
            "i" => num.parse().map(Self::BranchCurrent).map_err(|_| unknown()),
            "q" => num.parse().map(Self::GenReactive).map_err(|_| unknown()),
            _ => Err(unknown()),
        }
    }
}

impl From<QuantityOfInterest> for String {
    fn from(q: QuantityOfInterest) -> Self {
        q.to_string()
    }
}

impl TryFrom<String> for QuantityOfInterest {
    type Error = PfError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl QuantityOfInterest {
    /// Checks that the quantity names something that exists in `case`.
    pub fn check(&self, case: &NetworkCase) -> Result<(), PfError> {
        let unknown = || PfError::UnknownQuantity(self.to_string());
        match *self {
            Self::BusVoltage(b) => case.bus_position(b).map(|_| ()).ok_or_else(unknown),
            Self::BranchCurrent(l) => (l < case.branches.len()).then_some(()).ok_or_else(unknown),
            Self::GenReactive(b) => match case.bus_position(b) {
                Some(pos) if case.buses[pos].kind != BusKind::Pq => Ok(()),
                _ => Err(unknown()),
            },
            Self::SlackActive => Ok(()),
        }
    }

    /// Value of the quantity at `sol`, in per unit.
    pub fn extract(&self, case: &NetworkCase, sol: &PowerFlowSolution) -> Result<f64, PfError> {
        self.check(case)?;
        Ok(match *self {
            Self::BusVoltage(b) => sol.v[case.bus_position(b).expect("checked")],
            Self::BranchCurrent(l) => sol.branch_i[l],
            Self::GenReactive(b) => {
                let pos = case.bus_position(b).expect("checked");
                sol.s_inj[pos].im + case.buses[pos].q_load
            }
            Self::SlackActive => {
                let pos = case.ref_position();
                sol.s_inj[pos].re + case.buses[pos].p_load
            }
        })
    }
}
