//! Simplified optimal power flow with interchangeable constraint models.
//!
//! Decision variables are the active outputs of the non-reference
//! generators and the voltage magnitudes of PV buses; the reference bus
//! stays at its set point and loads stay at nominal. Every enforced limit
//! (load-bus voltages, generator reactive outputs, reference active output)
//! is expressed through a fitted model of the decision variables, or
//! through the lossless `B·θ` balance for the DC variant. Quadratic costs
//! become piecewise-linear lower envelopes so each variant is a single LP.
//! Solutions are judged by re-solving the AC power flow at their set
//! points.

mod build;

pub use build::{build_opf, solve_opf, OpfProblem, OpfSolution, OpfStatus, RowTag};

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::BusKind;
use crate::pfcore::{PfError, PowerFlowModel, PowerFlowSolution, QuantityOfInterest};
use crate::regress::{
    fit_cla, fit_la, fit_rational, ApproximationModel, Direction, LpError, RationalOptions,
    RegressError,
};
use crate::sampling::{draw_box, SampleSet};

/// Violations at or below this are treated as satisfied.
pub const LIMIT_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpfError {
    #[error("no model for `{0}`")]
    MissingModel(QuantityOfInterest),
    #[error("the reference bus must host exactly one generator, found {0}")]
    ReferenceGenerators(usize),
    #[error("no training sample converged")]
    NoSamples,
    #[error("unknown variant `{0}`")]
    UnknownVariant(String),
    #[error(transparent)]
    PowerFlow(#[from] PfError),
    #[error(transparent)]
    Regress(#[from] RegressError),
    #[error(transparent)]
    Lp(#[from] LpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Dc,
    La,
    Cla,
    Ra,
    Cra,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Self::Dc, Self::La, Self::Cla, Self::Ra, Self::Cra];

    fn conservative(self) -> bool {
        matches!(self, Self::Cla | Self::Cra)
    }

    fn rational(self) -> bool {
        matches!(self, Self::Ra | Self::Cra)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Dc => "dc",
            Self::La => "la",
            Self::Cla => "cla",
            Self::Ra => "ra",
            Self::Cra => "cra",
        })
    }
}

impl FromStr for Variant {
    type Err = OpfError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.to_string() == s.to_ascii_lowercase())
            .ok_or_else(|| OpfError::UnknownVariant(s.to_string()))
    }
}

/// Layout of the decision vector `u = [P of non-reference gens; V of PV
/// buses]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionSpace {
    /// Generator indices whose output is a decision variable.
    pub gen_vars: Vec<usize>,
    /// Bus positions whose voltage magnitude is a decision variable.
    pub pv_buses: Vec<usize>,
    /// Index of the generator at the reference bus.
    pub ref_gen: usize,
}

impl DecisionSpace {
    pub fn new(model: &PowerFlowModel) -> Result<Self, OpfError> {
        let case = &model.case;
        let ref_id = case.buses[case.ref_position()].id;
        let at_ref: Vec<usize> = (0..case.gens.len())
            .filter(|&g| case.gens[g].bus == ref_id)
            .collect();
        if at_ref.len() != 1 {
            return Err(OpfError::ReferenceGenerators(at_ref.len()));
        }
        let gen_vars = (0..case.gens.len())
            .filter(|&g| case.gens[g].bus != ref_id)
            .collect();
        let pv_buses = (0..case.n_bus())
            .filter(|&i| case.buses[i].kind == BusKind::Pv)
            .collect();
        Ok(Self {
            gen_vars,
            pv_buses,
            ref_gen: at_ref[0],
        })
    }

    pub fn dim(&self) -> usize {
        self.gen_vars.len() + self.pv_buses.len()
    }

    pub fn bounds(&self, model: &PowerFlowModel) -> (Vec<f64>, Vec<f64>) {
        let case = &model.case;
        let gens = self
            .gen_vars
            .iter()
            .map(|&g| (case.gens[g].p_min, case.gens[g].p_max));
        let volts = self
            .pv_buses
            .iter()
            .map(|&i| (case.buses[i].v_min, case.buses[i].v_max));
        gens.chain(volts).unzip()
    }

    /// Scheduled outputs and voltage set points, clamped into the bounds.
    pub fn nominal(&self, model: &PowerFlowModel) -> Vec<f64> {
        let case = &model.case;
        let (lo, hi) = self.bounds(model);
        self.gen_vars
            .iter()
            .map(|&g| case.gens[g].p_set)
            .chain(self.pv_buses.iter().map(|&i| case.voltage_setpoint(i)))
            .zip(lo.iter().zip(&hi))
            .map(|(v, (l, h))| v.clamp(*l, *h))
            .collect()
    }

    pub fn labels(&self, model: &PowerFlowModel) -> Vec<String> {
        let case = &model.case;
        self.gen_vars
            .iter()
            .map(|&g| format!("P{}", case.gens[g].bus))
            .chain(
                self.pv_buses
                    .iter()
                    .map(|&i| format!("V{}", case.buses[i].id)),
            )
            .collect()
    }

    /// Quantities every non-DC variant needs a model for: load-bus
    /// voltages, generator-bus reactive outputs and reference active
    /// output.
    pub fn quantities(&self, model: &PowerFlowModel) -> Vec<QuantityOfInterest> {
        let case = &model.case;
        let volts = case
            .buses
            .iter()
            .filter(|b| b.kind == BusKind::Pq)
            .map(|b| QuantityOfInterest::BusVoltage(b.id));
        let reactive = case
            .buses
            .iter()
            .filter(|b| b.kind != BusKind::Pq)
            .map(|b| QuantityOfInterest::GenReactive(b.id));
        volts
            .chain(reactive)
            .chain([QuantityOfInterest::SlackActive])
            .collect()
    }

    /// `(lower, upper)` limit of a quantity.
    pub fn limits(&self, model: &PowerFlowModel, q: QuantityOfInterest) -> (f64, f64) {
        let case = &model.case;
        match q {
            QuantityOfInterest::BusVoltage(id) => {
                let b = &case.buses[case.bus_position(id).expect("checked")];
                (b.v_min, b.v_max)
            }
            QuantityOfInterest::GenReactive(id) => {
                let pos = case.bus_position(id).expect("checked");
                case.gens_at(pos)
                    .fold((0.0, 0.0), |(l, h), g| (l + g.q_min, h + g.q_max))
            }
            QuantityOfInterest::SlackActive => {
                let g = &case.gens[self.ref_gen];
                (g.p_min, g.p_max)
            }
            QuantityOfInterest::BranchCurrent(_) => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    /// AC power flow with the set points `u`.
    pub fn solve_at(
        &self,
        model: &PowerFlowModel,
        u: &[f64],
    ) -> Result<PowerFlowSolution, PfError> {
        assert_eq!(u.len(), self.dim(), "set point dimension");
        let case = &model.case;
        let mut m = model.clone();
        for (k, &pos) in self.pv_buses.iter().enumerate() {
            m.v_fixed[pos] = u[self.gen_vars.len() + k];
        }
        let mut p_gen = vec![0.0; case.n_bus()];
        for (k, &g) in self.gen_vars.iter().enumerate() {
            let pos = case.bus_position(case.gens[g].bus).expect("validated");
            p_gen[pos] += u[k];
        }
        let mut inj = model.nominal_injections();
        for (k, &pos) in model.index.pvpq.iter().enumerate() {
            inj.p[k] = p_gen[pos] - case.buses[pos].p_load;
        }
        m.solve(&inj)
    }

    /// Solves the AC power flow at every row of `us` and records
    /// `quantities`; rows that fail are dropped.
    pub fn evaluate(
        &self,
        model: &PowerFlowModel,
        us: &[Vec<f64>],
        quantities: &[QuantityOfInterest],
        seed: u64,
    ) -> Result<SampleSet, OpfError> {
        let rows: Vec<Option<Vec<f64>>> = us
            .par_iter()
            .map(|u| {
                let sol = self.solve_at(model, u).ok()?;
                if !sol.converged {
                    return None;
                }
                quantities
                    .iter()
                    .map(|q| q.extract(&model.case, &sol).ok())
                    .collect()
            })
            .collect();
        let mut set = SampleSet {
            center: self.nominal(model),
            xs: Vec::new(),
            quantities: quantities.to_vec(),
            betas: vec![Vec::new(); quantities.len()],
            skipped: 0,
            seed,
        };
        for (u, row) in us.iter().zip(rows) {
            match row {
                Some(vals) => {
                    set.xs.push(u.clone());
                    for (c, v) in set.betas.iter_mut().zip(vals) {
                        c.push(v);
                    }
                }
                None => set.skipped += 1,
            }
        }
        if set.is_empty() {
            return Err(OpfError::NoSamples);
        }
        Ok(set)
    }

    /// `m` uniform draws over the decision box, solved.
    pub fn training_set(
        &self,
        model: &PowerFlowModel,
        m: usize,
        seed: u64,
    ) -> Result<SampleSet, OpfError> {
        let (lo, hi) = self.bounds(model);
        let us = draw_box(&lo, &hi, m, seed);
        self.evaluate(model, &us, &self.quantities(model), seed)
    }
}

/// Models backing the limit rows of one variant. `upper` models bound
/// quantities from above, `lower` from below; the affine `slack_cost`
/// model prices the reference generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxSet {
    pub upper: Vec<ApproximationModel>,
    pub lower: Vec<ApproximationModel>,
    pub slack_cost: ApproximationModel,
}

impl ApproxSet {
    pub fn upper_for(&self, q: QuantityOfInterest) -> Result<&ApproximationModel, OpfError> {
        self.upper
            .iter()
            .find(|m| m.quantity == q)
            .ok_or(OpfError::MissingModel(q))
    }

    pub fn lower_for(&self, q: QuantityOfInterest) -> Result<&ApproximationModel, OpfError> {
        self.lower
            .iter()
            .find(|m| m.quantity == q)
            .ok_or(OpfError::MissingModel(q))
    }
}

/// Fits the models a variant needs on `samples`. Returns `None` for the DC
/// variant.
pub fn train_approx_set(
    samples: &SampleSet,
    variant: Variant,
    opts: &RationalOptions,
) -> Result<Option<ApproxSet>, OpfError> {
    if variant == Variant::Dc {
        return Ok(None);
    }
    let fit = |q: QuantityOfInterest, d: Direction| -> Result<ApproximationModel, RegressError> {
        let f = match (variant.rational(), d) {
            (false, Direction::None) => fit_la(samples, q)?,
            (false, d) => fit_cla(samples, q, d)?,
            (true, d) => fit_rational(samples, q, d, opts)?,
        };
        Ok(f.model)
    };
    let fits: Vec<(ApproximationModel, ApproximationModel)> = samples
        .quantities
        .par_iter()
        .map(|&q| {
            if variant.conservative() {
                Ok((fit(q, Direction::Over)?, fit(q, Direction::Under)?))
            } else {
                let m = fit(q, Direction::None)?;
                Ok((m.clone(), m))
            }
        })
        .collect::<Result<_, RegressError>>()?;
    let (upper, lower) = fits.into_iter().unzip();
    let slack_cost = fit_la(samples, QuantityOfInterest::SlackActive)?.model;
    Ok(Some(ApproxSet {
        upper,
        lower,
        slack_cost,
    }))
}

/// Outcome of re-solving the AC power flow at a set of set points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AcEvaluation {
    pub converged: bool,
    pub ac_cost: Option<f64>,
    pub p_slack: Option<f64>,
    /// Largest voltage-limit excess over all buses, pu.
    pub max_v_violation: Option<f64>,
    /// Reactive-limit excess per generator bus, pu.
    pub q_violations: Option<Vec<f64>>,
    /// Reference generator active-limit excess, pu.
    pub p_slack_violation: Option<f64>,
}

impl AcEvaluation {
    pub fn feasible(&self, tol: f64) -> bool {
        self.converged
            && self.max_v_violation.is_some_and(|v| v <= tol)
            && self.p_slack_violation.is_some_and(|v| v <= tol)
            && self
                .q_violations
                .as_ref()
                .is_some_and(|q| q.iter().all(|&v| v <= tol))
    }
}

fn excess(v: f64, lo: f64, hi: f64) -> f64 {
    (lo - v).max(v - hi).max(0.0)
}

/// Solves the AC power flow at `u`; the reference generator absorbs the
/// mismatch and all generators are priced at their actual outputs.
pub fn ac_evaluate(model: &PowerFlowModel, space: &DecisionSpace, u: &[f64]) -> AcEvaluation {
    let case = &model.case;
    let sol = match space.solve_at(model, u) {
        Ok(s) if s.converged => s,
        _ => {
            return AcEvaluation {
                converged: false,
                ac_cost: None,
                p_slack: None,
                max_v_violation: None,
                q_violations: None,
                p_slack_violation: None,
            }
        }
    };
    let p_slack = QuantityOfInterest::SlackActive
        .extract(case, &sol)
        .expect("slack always exists");
    let mut cost = case.gens[space.ref_gen].cost_at(p_slack);
    for (k, &g) in space.gen_vars.iter().enumerate() {
        cost += case.gens[g].cost_at(u[k]);
    }
    let max_v = case
        .buses
        .iter()
        .zip(&sol.v)
        .map(|(b, &v)| excess(v, b.v_min, b.v_max))
        .fold(0.0, f64::max);
    let q_viol = case
        .buses
        .iter()
        .filter(|b| b.kind != BusKind::Pq)
        .map(|b| {
            let q = QuantityOfInterest::GenReactive(b.id);
            let (lo, hi) = space.limits(model, q);
            excess(q.extract(case, &sol).expect("generator bus"), lo, hi)
        })
        .collect();
    let rg = &case.gens[space.ref_gen];
    AcEvaluation {
        converged: true,
        ac_cost: Some(cost),
        p_slack: Some(p_slack),
        max_v_violation: Some(max_v),
        q_violations: Some(q_viol),
        p_slack_violation: Some(excess(p_slack, rg.p_min, rg.p_max)),
    }
}

/// Cheapest AC-feasible point of a regular grid over the decision box.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridOptimum {
    pub setpoints: Vec<f64>,
    pub ac_cost: f64,
    pub evaluated: usize,
    pub feasible: usize,
}

/// Exhaustive search with spacing `step` in every coordinate. The number of
/// power flows is the product of the per-axis point counts, so this is
/// only meant for systems with a handful of decision variables.
pub fn grid_search(
    model: &PowerFlowModel,
    space: &DecisionSpace,
    step: f64,
) -> Option<GridOptimum> {
    assert!(step > 0.0);
    let (lo, hi) = space.bounds(model);
    let axes: Vec<Vec<f64>> = lo
        .iter()
        .zip(&hi)
        .map(|(&l, &h)| {
            let n = ((h - l) / step).round() as usize;
            (0..=n).map(|i| (l + i as f64 * step).min(h)).collect()
        })
        .collect();
    let total: usize = axes.iter().map(Vec::len).product();
    let best = (0..total)
        .into_par_iter()
        .filter_map(|mut idx| {
            let u: Vec<f64> = axes
                .iter()
                .map(|a| {
                    let v = a[idx % a.len()];
                    idx /= a.len();
                    v
                })
                .collect();
            let ev = ac_evaluate(model, space, &u);
            ev.feasible(LIMIT_TOL)
                .then(|| (ev.ac_cost.expect("converged"), u))
        })
        .collect::<Vec<_>>();
    let feasible = best.len();
    best.into_iter()
        .min_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then_with(|| a.1.partial_cmp(&b.1).expect("finite"))
        })
        .map(|(ac_cost, setpoints)| GridOptimum {
            setpoints,
            ac_cost,
            evaluated: total,
            feasible,
        })
}

/// One row of the variant comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantResult {
    pub variant: Variant,
    pub status: OpfStatus,
    pub setpoints: Vec<f64>,
    pub model_cost: Option<f64>,
    pub ac: Option<AcEvaluation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpfOptions {
    pub samples: usize,
    pub seed: u64,
    /// Piecewise-linear cost segments per generator.
    pub segments: usize,
    pub rational: RationalOptions,
}

impl Default for OpfOptions {
    fn default() -> Self {
        Self {
            samples: 400,
            seed: 1,
            segments: 8,
            rational: RationalOptions::default(),
        }
    }
}

/// Trains, solves and AC-evaluates each requested variant on one shared
/// training set.
pub fn compare_variants(
    model: &PowerFlowModel,
    variants: &[Variant],
    opts: &OpfOptions,
) -> Result<Vec<VariantResult>, OpfError> {
    let space = DecisionSpace::new(model)?;
    let samples = if variants.iter().any(|&v| v != Variant::Dc) {
        Some(space.training_set(model, opts.samples, opts.seed)?)
    } else {
        None
    };
    variants
        .par_iter()
        .map(|&variant| {
            let set = match &samples {
                Some(s) => train_approx_set(s, variant, &opts.rational)?,
                None => None,
            };
            let problem = build_opf(model, &space, variant, set.as_ref(), opts.segments)?;
            let sol = solve_opf(&problem)?;
            let ac = (sol.status == OpfStatus::Optimal)
                .then(|| ac_evaluate(model, &space, &sol.setpoints));
            Ok(VariantResult {
                variant,
                status: sol.status,
                setpoints: sol.setpoints,
                model_cost: sol.model_cost,
                ac,
            })
        })
        .collect()
}

/// Row of the cost comparison table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub variant: Variant,
    pub ac_cost: Option<f64>,
    /// Percent above the reference cost.
    pub pct_vs_best: Option<f64>,
    pub max_v_violation: Option<f64>,
}

/// Costs relative to the grid optimum when given, otherwise to the
/// cheapest converged variant.
pub fn comparison_table(
    results: &[VariantResult],
    grid: Option<&GridOptimum>,
) -> Vec<ComparisonRow> {
    let cost = |r: &VariantResult| r.ac.as_ref().and_then(|a| a.ac_cost);
    let best = grid
        .map(|g| g.ac_cost)
        .or_else(|| results.iter().filter_map(cost).min_by(f64::total_cmp));
    results
        .iter()
        .map(|r| ComparisonRow {
            variant: r.variant,
            ac_cost: cost(r),
            pct_vs_best: cost(r).zip(best).map(|(c, b)| 100.0 * (c - b) / b),
            max_v_violation: r.ac.as_ref().and_then(|a| a.max_v_violation),
        })
        .collect()
}

pub fn write_comparison_csv<W: std::io::Write>(
    rows: &[ComparisonRow],
    out: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["variant", "ac_cost", "pct_vs_best", "max_v_violation"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.variant.to_string(),
            opt(r.ac_cost),
            opt(r.pct_vs_best),
            opt(r.max_v_violation),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn three_bus() -> (PowerFlowModel, DecisionSpace) {
        let model = PowerFlowModel::new(&fixtures::three_bus()).unwrap();
        let space = DecisionSpace::new(&model).unwrap();
        (model, space)
    }

    #[test]
    fn decision_layout() {
        let (model, space) = three_bus();
        assert_eq!(space.dim(), 2);
        assert_eq!(space.labels(&model), vec!["P2", "V2"]);
        let (lo, hi) = space.bounds(&model);
        assert_eq!(lo, vec![0.1, 0.9]);
        assert_eq!(hi, vec![1.2, 1.1]);
        let qs: Vec<String> = space
            .quantities(&model)
            .iter()
            .map(|q| q.to_string())
            .collect();
        assert_eq!(qs, vec!["v:3", "q:1", "q:2", "pslack"]);
    }

    #[test]
    fn set_points_reach_the_solver() {
        let (model, space) = three_bus();
        let sol = space.solve_at(&model, &[0.8, 1.03]).unwrap();
        assert!(sol.converged);
        assert!((sol.v[1] - 1.03).abs() < 1e-12);
        assert!((sol.s_inj[1].re - 0.8).abs() < 1e-8);
    }

    #[test]
    fn ac_cost_prices_actual_outputs() {
        let (model, space) = three_bus();
        let u = [0.8, 1.03];
        let ev = ac_evaluate(&model, &space, &u);
        let case = &model.case;
        let expect = case.gens[0].cost_at(ev.p_slack.unwrap()) + case.gens[1].cost_at(0.8);
        assert!((ev.ac_cost.unwrap() - expect).abs() < 1e-9);
        // losses make the slack cover more than the net load
        assert!(ev.p_slack.unwrap() > 1.5 - 0.8);
    }

    #[test]
    fn interior_point_has_no_violations() {
        let (model, space) = three_bus();
        let ev = ac_evaluate(&model, &space, &[0.8, 1.03]);
        assert!(ev.feasible(LIMIT_TOL), "{ev:?}");
    }

    #[test]
    fn table_is_relative_to_the_reference() {
        let (model, space) = three_bus();
        let u = vec![0.8, 1.03];
        let ac = ac_evaluate(&model, &space, &u);
        let c = ac.ac_cost.unwrap();
        let rows = vec![VariantResult {
            variant: Variant::La,
            status: OpfStatus::Optimal,
            setpoints: u,
            model_cost: None,
            ac: Some(ac),
        }];
        assert_eq!(comparison_table(&rows, None)[0].pct_vs_best, Some(0.0));
        let g = GridOptimum {
            setpoints: vec![],
            ac_cost: c / 1.1,
            evaluated: 1,
            feasible: 1,
        };
        let pct = comparison_table(&rows, Some(&g))[0].pct_vs_best.unwrap();
        assert!((pct - 10.0).abs() < 1e-9);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert!("ac".parse::<Variant>().is_err());
    }
}
