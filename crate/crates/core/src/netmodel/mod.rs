//! Static network model: buses, branches, generators and the bus admittance
//! matrix.
//!
//! All quantities are stored in per unit on [`NetworkCase::base_mva`], angles
//! in radians. Cases are usually read from MATPOWER text with
//! [`parse_matpower`] and can be written back with [`to_matpower`] or
//! serialized to a canonical JSON document with [`NetworkCase::to_json`].

mod parse;
mod ybus;

pub use parse::{parse_matpower, to_matpower};
pub use ybus::{build_ybus, AdmittanceMatrix};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CaseError {
    #[error("missing `{0}` section")]
    MissingSection(&'static str),
    #[error("malformed row {row} in `{section}`: {reason}")]
    MalformedRow {
        section: &'static str,
        row: usize,
        reason: String,
    },
    #[error("row {row} in `{section}` references unknown bus {bus}")]
    DanglingReference {
        section: &'static str,
        row: usize,
        bus: u32,
    },
    #[error("expected exactly one reference bus, found {0}")]
    NoReference(usize),
    #[error("duplicate bus id {0}")]
    DuplicateBus(u32),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("branch {0} has zero impedance")]
    ZeroImpedanceBranch(usize),
    #[error("json: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BusKind {
    Pq,
    Pv,
    Ref,
}

impl BusKind {
    pub fn from_code(code: i64) -> Option<Self> {
        match code {
            1 => Some(BusKind::Pq),
            2 => Some(BusKind::Pv),
            3 => Some(BusKind::Ref),
            _ => None,
        }
    }

    pub fn code(self) -> i64 {
        match self {
            BusKind::Pq => 1,
            BusKind::Pv => 2,
            BusKind::Ref => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusRecord {
    pub id: u32,
    pub kind: BusKind,
    pub p_load: f64,
    pub q_load: f64,
    pub gs: f64,
    pub bs: f64,
    pub v_init: f64,
    pub theta_init: f64,
    pub v_min: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchRecord {
    pub from_bus: u32,
    pub to_bus: u32,
    pub r: f64,
    pub x: f64,
    pub b_chg: f64,
    /// Off-nominal turns ratio, 1.0 for lines.
    pub tap: f64,
    pub shift: f64,
    pub in_service: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenRecord {
    pub bus: u32,
    pub p_set: f64,
    pub v_set: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    /// Polynomial cost in ascending order `[c0, c1, c2]`, per-unit power,
    /// currency per hour.
    pub cost: Vec<f64>,
}

impl GenRecord {
    pub fn cost_at(&self, p: f64) -> f64 {
        self.cost.iter().rev().fold(0.0, |acc, c| acc * p + c)
    }

    pub fn marginal_cost_at(&self, p: f64) -> f64 {
        self.cost
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, c)| k as f64 * c * p.powi(k as i32 - 1))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCase {
    pub base_mva: f64,
    pub buses: Vec<BusRecord>,
    pub branches: Vec<BranchRecord>,
    pub gens: Vec<GenRecord>,
}

impl NetworkCase {
    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    /// Position of bus `id` in [`NetworkCase::buses`].
    pub fn bus_position(&self, id: u32) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn ref_position(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::Ref)
            .expect("validated case has a reference bus")
    }

    /// Generators attached to the bus at `pos`.
    pub fn gens_at(&self, pos: usize) -> impl Iterator<Item = &GenRecord> {
        let id = self.buses[pos].id;
        self.gens.iter().filter(move |g| g.bus == id)
    }

    /// Voltage magnitude a PV or REF bus is held at: the first attached
    /// generator's set point, or the bus's initial magnitude.
    pub fn voltage_setpoint(&self, pos: usize) -> f64 {
        self.gens_at(pos)
            .next()
            .map(|g| g.v_set)
            .unwrap_or(self.buses[pos].v_init)
    }

    /// Net scheduled active injection (generation minus load) per bus.
    pub fn scheduled_p(&self) -> Vec<f64> {
        (0..self.n_bus())
            .map(|i| self.gens_at(i).map(|g| g.p_set).sum::<f64>() - self.buses[i].p_load)
            .collect()
    }

    /// Scheduled reactive injection per bus; generator reactive output only
    /// enters through the power flow solution.
    pub fn scheduled_q(&self) -> Vec<f64> {
        self.buses.iter().map(|b| -b.q_load).collect()
    }

    /// True when every bus is reachable from the reference bus over
    /// in-service branches.
    pub fn is_connected(&self) -> bool {
        let n = self.n_bus();
        if n == 0 {
            return false;
        }
        let mut adj = vec![Vec::new(); n];
        for br in self.branches.iter().filter(|b| b.in_service) {
            if let (Some(f), Some(t)) =
                (self.bus_position(br.from_bus), self.bus_position(br.to_bus))
            {
                adj[f].push(t);
                adj[t].push(f);
            }
        }
        let mut seen = vec![false; n];
        let mut stack = vec![self.ref_position()];
        seen[stack[0]] = true;
        while let Some(i) = stack.pop() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Checks the record-level invariants. Called by the parser and by
    /// [`NetworkCase::from_json`].
    pub fn validate(&self) -> Result<(), CaseError> {
        let mut ids: Vec<u32> = self.buses.iter().map(|b| b.id).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(CaseError::DuplicateBus(w[0]));
        }
        let refs = self.buses.iter().filter(|b| b.kind == BusKind::Ref).count();
        if refs != 1 {
            return Err(CaseError::NoReference(refs));
        }
        for (row, br) in self.branches.iter().enumerate() {
            for bus in [br.from_bus, br.to_bus] {
                if self.bus_position(bus).is_none() {
                    return Err(CaseError::DanglingReference {
                        section: "branch",
                        row,
                        bus,
                    });
                }
            }
            if br.from_bus == br.to_bus {
                return Err(CaseError::InvalidRecord(format!(
                    "branch {row} connects bus {} to itself",
                    br.from_bus
                )));
            }
        }
        for (row, g) in self.gens.iter().enumerate() {
            let Some(pos) = self.bus_position(g.bus) else {
                return Err(CaseError::DanglingReference {
                    section: "gen",
                    row,
                    bus: g.bus,
                });
            };
            if self.buses[pos].kind == BusKind::Pq {
                return Err(CaseError::InvalidRecord(format!(
                    "generator {row} sits on PQ bus {}",
                    g.bus
                )));
            }
            if g.p_min > g.p_max || g.q_min > g.q_max {
                return Err(CaseError::InvalidRecord(format!(
                    "generator {row} has inverted limits"
                )));
            }
            if g.cost.len() > 3 {
                return Err(CaseError::InvalidRecord(format!(
                    "generator {row} cost has degree above 2"
                )));
            }
        }
        Ok(())
    }

    /// Canonical JSON: fixed key order, shortest round-trip float formatting.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("case serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CaseError> {
        let case: NetworkCase =
            serde_json::from_str(text).map_err(|e| CaseError::Json(e.to_string()))?;
        case.validate()?;
        Ok(case)
    }
}
