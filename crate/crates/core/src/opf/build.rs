//! Assembly of the per-variant linear program.
//!
//! Column layout: `[u | p_ref | t_g for every generator | θ (DC only)]`.
//! `t_g` is the epigraph variable of generator `g`'s cost, held above
//! tangent lines of the quadratic at evenly spaced breakpoints.

use serde::{Deserialize, Serialize};

use super::{ApproxSet, DecisionSpace, OpfError, Variant};
use crate::netmodel::NetworkCase;
use crate::pade::to_linear_constraint;
use crate::pfcore::{PowerFlowModel, QuantityOfInterest};
use crate::regress::{solve_lp, Constraint, LinearProgram, LpOutcome, Sense};

/// What a row of the assembled program represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowTag {
    /// Model of the quantity held at or below its maximum.
    Upper(QuantityOfInterest),
    /// Model of the quantity held at or above its minimum.
    Lower(QuantityOfInterest),
    /// `p_ref` tied to the affine slack model.
    SlackDefinition,
    /// Lossless nodal balance at a bus position.
    Balance(usize),
    /// Cost tangent `k` of generator `g`.
    CostTangent { gen: usize, k: usize },
    /// A decision bound whose limits cross, kept as an explicit row.
    CrossedBound(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpfProblem {
    pub variant: Variant,
    pub lp: LinearProgram,
    pub tags: Vec<RowTag>,
    pub n_u: usize,
    pub n_gen: usize,
}

impl OpfProblem {
    pub fn p_ref_column(&self) -> usize {
        self.n_u
    }

    pub fn cost_column(&self, g: usize) -> usize {
        self.n_u + 1 + g
    }

    /// Rows bounding voltage magnitudes at load buses.
    pub fn voltage_rows(&self) -> Vec<usize> {
        self.tags
            .iter()
            .enumerate()
            .filter(|(_, t)| {
                matches!(
                    t,
                    RowTag::Upper(QuantityOfInterest::BusVoltage(_))
                        | RowTag::Lower(QuantityOfInterest::BusVoltage(_))
                )
            })
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpfStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpfSolution {
    pub variant: Variant,
    pub status: OpfStatus,
    /// Decision vector; empty unless optimal.
    pub setpoints: Vec<f64>,
    /// Reference output the model predicts.
    pub p_ref: Option<f64>,
    /// Piecewise-linear cost at the optimum.
    pub model_cost: Option<f64>,
}

struct Builder {
    lp: LinearProgram,
    tags: Vec<RowTag>,
}

impl Builder {
    fn row(&mut self, coeffs: Vec<f64>, sense: Sense, rhs: f64, tag: RowTag) {
        self.lp.add(coeffs, sense, rhs);
        self.tags.push(tag);
    }

    /// Embeds a constraint over `u` into the full column space.
    fn embed(&mut self, c: Constraint, tag: RowTag) {
        let mut coeffs = vec![0.0; self.lp.n_vars()];
        coeffs[..c.coeffs.len()].copy_from_slice(&c.coeffs);
        self.row(coeffs, c.sense, c.rhs, tag);
    }

    fn bound(&mut self, j: usize, lo: f64, hi: f64) {
        if lo <= hi {
            self.lp.set_bounds(j, lo, hi);
        } else {
            self.lp.set_bounds(j, f64::NEG_INFINITY, f64::INFINITY);
            let mut e = vec![0.0; self.lp.n_vars()];
            e[j] = 1.0;
            self.row(e.clone(), Sense::Ge, lo, RowTag::CrossedBound(j));
            self.row(e, Sense::Le, hi, RowTag::CrossedBound(j));
        }
    }
}

/// Branch susceptances `1/(x·tap)` assembled into the lossless nodal
/// matrix.
fn dc_matrix(case: &NetworkCase) -> Vec<Vec<f64>> {
    let n = case.n_bus();
    let mut b = vec![vec![0.0; n]; n];
    for br in case.branches.iter().filter(|br| br.in_service) {
        let tap = if br.tap == 0.0 { 1.0 } else { br.tap };
        let s = 1.0 / (br.x * tap);
        let f = case.bus_position(br.from_bus).expect("validated");
        let t = case.bus_position(br.to_bus).expect("validated");
        b[f][f] += s;
        b[t][t] += s;
        b[f][t] -= s;
        b[t][f] -= s;
    }
    b
}

/// Assembles the program for `variant`. Every variant except DC needs the
/// trained `set`; `segments` is the number of cost segments per
/// generator.
pub fn build_opf(
    model: &PowerFlowModel,
    space: &DecisionSpace,
    variant: Variant,
    set: Option<&ApproxSet>,
    segments: usize,
) -> Result<OpfProblem, OpfError> {
    let case = &model.case;
    let n_u = space.dim();
    let n_gen = case.gens.len();
    let ref_pos = case.ref_position();
    let thetas: Vec<usize> = (0..case.n_bus()).filter(|&i| i != ref_pos).collect();
    let n_theta = if variant == Variant::Dc {
        thetas.len()
    } else {
        0
    };
    let n = n_u + 1 + n_gen + n_theta;

    let mut objective = vec![0.0; n];
    objective[n_u + 1..n_u + 1 + n_gen].fill(1.0);
    let mut lp = LinearProgram::new(objective);
    for j in n_u..n {
        lp.set_bounds(j, f64::NEG_INFINITY, f64::INFINITY);
    }
    let mut b = Builder {
        lp,
        tags: Vec::new(),
    };

    let (mut lo, mut hi) = space.bounds(model);
    if variant == Variant::Dc {
        // voltages stay at their schedules
        for (k, &pos) in space.pv_buses.iter().enumerate() {
            let j = space.gen_vars.len() + k;
            if lo[j] <= hi[j] {
                let v = case.voltage_setpoint(pos).clamp(lo[j], hi[j]);
                lo[j] = v;
                hi[j] = v;
            }
        }
    }
    for j in 0..n_u {
        b.bound(j, lo[j], hi[j]);
    }

    match (variant, set) {
        (Variant::Dc, _) => {
            let rg = &case.gens[space.ref_gen];
            b.bound(n_u, rg.p_min, rg.p_max);
            let bmat = dc_matrix(case);
            for i in 0..case.n_bus() {
                let mut coeffs = vec![0.0; n];
                for (k, &pos) in thetas.iter().enumerate() {
                    coeffs[n_u + 1 + n_gen + k] = bmat[i][pos];
                }
                for (k, &g) in space.gen_vars.iter().enumerate() {
                    if case.bus_position(case.gens[g].bus) == Some(i) {
                        coeffs[k] -= 1.0;
                    }
                }
                if i == ref_pos {
                    coeffs[n_u] -= 1.0;
                }
                b.row(coeffs, Sense::Eq, -case.buses[i].p_load, RowTag::Balance(i));
            }
        }
        (_, None) => return Err(OpfError::MissingModel(QuantityOfInterest::SlackActive)),
        (_, Some(set)) => {
            let sm = &set.slack_cost;
            let mut coeffs = vec![0.0; n];
            for (c, a) in coeffs.iter_mut().zip(&sm.a1) {
                *c = -a;
            }
            coeffs[n_u] = 1.0;
            let rhs = sm.a0 - sm.a1.iter().zip(&sm.x0).map(|(a, x)| a * x).sum::<f64>();
            b.row(coeffs, Sense::Eq, rhs, RowTag::SlackDefinition);
            for q in space.quantities(model) {
                let (qlo, qhi) = space.limits(model, q);
                if qhi.is_finite() {
                    b.embed(
                        to_linear_constraint(set.upper_for(q)?, qhi, Sense::Le),
                        RowTag::Upper(q),
                    );
                }
                if qlo.is_finite() {
                    b.embed(
                        to_linear_constraint(set.lower_for(q)?, qlo, Sense::Ge),
                        RowTag::Lower(q),
                    );
                }
            }
        }
    }

    // cost tangents: t_g ≥ c(P_k) + c'(P_k)(P − P_k)
    let segments = segments.max(1);
    for (g, gen) in case.gens.iter().enumerate() {
        let p_col = if g == space.ref_gen {
            n_u
        } else {
            space
                .gen_vars
                .iter()
                .position(|&v| v == g)
                .expect("every generator has a column")
        };
        let (a, z) = (gen.p_min.min(gen.p_max), gen.p_max.max(gen.p_min));
        for k in 0..=segments {
            let p = a + (z - a) * k as f64 / segments as f64;
            let slope = gen.marginal_cost_at(p);
            let mut coeffs = vec![0.0; n];
            coeffs[n_u + 1 + g] = 1.0;
            coeffs[p_col] = -slope;
            b.row(
                coeffs,
                Sense::Ge,
                gen.cost_at(p) - slope * p,
                RowTag::CostTangent { gen: g, k },
            );
        }
    }

    Ok(OpfProblem {
        variant,
        lp: b.lp,
        tags: b.tags,
        n_u,
        n_gen,
    })
}

pub fn solve_opf(problem: &OpfProblem) -> Result<OpfSolution, OpfError> {
    let (status, setpoints, p_ref, model_cost) = match solve_lp(&problem.lp)? {
        LpOutcome::Optimal(s) => (
            OpfStatus::Optimal,
            s.x[..problem.n_u].to_vec(),
            Some(s.x[problem.n_u]),
            Some(s.value),
        ),
        LpOutcome::Infeasible => (OpfStatus::Infeasible, Vec::new(), None, None),
        LpOutcome::Unbounded => (OpfStatus::Unbounded, Vec::new(), None, None),
    };
    Ok(OpfSolution {
        variant: problem.variant,
        status,
        setpoints,
        p_ref,
        model_cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::opf::{ac_evaluate, train_approx_set};
    use crate::regress::{ApproximationModel, Direction, Kind, RationalOptions};

    fn three_bus() -> (PowerFlowModel, DecisionSpace) {
        let model = PowerFlowModel::new(&fixtures::three_bus()).unwrap();
        let space = DecisionSpace::new(&model).unwrap();
        (model, space)
    }

    fn affine(q: QuantityOfInterest, a0: f64, a1: Vec<f64>) -> ApproximationModel {
        let d = a1.len();
        ApproximationModel {
            kind: Kind::Linear,
            quantity: q,
            direction: Direction::None,
            a0,
            a1,
            b1: vec![0.0; d],
            x0: vec![0.0; d],
            epsilon: 1.0,
            range: None,
            degenerate: false,
        }
    }

    /// Lossless models with flat voltages: every limit but the slack's
    /// is slack.
    fn lossless_set(model: &PowerFlowModel, space: &DecisionSpace) -> ApproxSet {
        let load: f64 = model.case.buses.iter().map(|b| b.p_load).sum();
        let models: Vec<ApproximationModel> = space
            .quantities(model)
            .into_iter()
            .map(|q| match q {
                QuantityOfInterest::SlackActive => affine(q, load, vec![-1.0, 0.0]),
                QuantityOfInterest::BusVoltage(_) => affine(q, 1.0, vec![0.0, 0.0]),
                _ => affine(q, 0.0, vec![0.0, 0.0]),
            })
            .collect();
        ApxBuilder(models).build()
    }

    struct ApxBuilder(Vec<ApproximationModel>);

    impl ApxBuilder {
        fn build(self) -> ApproxSet {
            let slack = self
                .0
                .iter()
                .find(|m| m.quantity == QuantityOfInterest::SlackActive)
                .unwrap()
                .clone();
            ApproxSet {
                upper: self.0.clone(),
                lower: self.0,
                slack_cost: slack,
            }
        }
    }

    #[test]
    fn dc_follows_merit_order() {
        let (model, space) = three_bus();
        let p = build_opf(&model, &space, Variant::Dc, None, 8).unwrap();
        let s = solve_opf(&p).unwrap();
        assert_eq!(s.status, OpfStatus::Optimal);
        // the bus-2 unit is cheaper everywhere in its range, so it runs flat out
        assert!((s.setpoints[0] - 1.2).abs() < 1e-9, "{:?}", s.setpoints);
        assert!((s.p_ref.unwrap() - 0.3).abs() < 1e-9);
        assert_eq!(s.setpoints[1], 1.0);
    }

    #[test]
    fn lossless_la_matches_dc() {
        let (model, space) = three_bus();
        let set = lossless_set(&model, &space);
        let dc = solve_opf(&build_opf(&model, &space, Variant::Dc, None, 8).unwrap()).unwrap();
        let la =
            solve_opf(&build_opf(&model, &space, Variant::La, Some(&set), 8).unwrap()).unwrap();
        assert!((dc.model_cost.unwrap() - la.model_cost.unwrap()).abs() < 1e-8);
        assert!((dc.setpoints[0] - la.setpoints[0]).abs() < 1e-8);
    }

    #[test]
    fn limit_rows_come_from_the_models() {
        let (model, space) = three_bus();
        let samples = space.training_set(&model, 60, 5).unwrap();
        let set = train_approx_set(&samples, Variant::Cla, &RationalOptions::default())
            .unwrap()
            .unwrap();
        let p = build_opf(&model, &space, Variant::Cla, Some(&set), 4).unwrap();
        let rows = p.voltage_rows();
        assert_eq!(rows.len(), 2);
        let v3 = QuantityOfInterest::BusVoltage(3);
        let up = to_linear_constraint(set.upper_for(v3).unwrap(), 1.05, Sense::Le);
        let down = to_linear_constraint(set.lower_for(v3).unwrap(), 0.95, Sense::Ge);
        for (row, expect) in rows.iter().zip([up, down]) {
            let c = &p.lp.constraints[*row];
            assert_eq!(&c.coeffs[..2], &expect.coeffs[..]);
            assert!(c.coeffs[2..].iter().all(|&v| v == 0.0));
            assert_eq!(c.rhs, expect.rhs);
            assert_eq!(c.sense, expect.sense);
        }
    }

    #[test]
    fn crossed_limits_are_infeasible() {
        let (mut model, space) = three_bus();
        let set = lossless_set(&model, &space);
        model.case.buses[2].v_min = 1.06;
        let s = solve_opf(&build_opf(&model, &space, Variant::La, Some(&set), 8).unwrap()).unwrap();
        assert_eq!(s.status, OpfStatus::Infeasible);
        assert!(s.setpoints.is_empty());

        let (mut model, space) = three_bus();
        model.case.buses[1].v_max = 0.8;
        for variant in [Variant::Dc, Variant::La] {
            let s = solve_opf(&build_opf(&model, &space, variant, Some(&set), 8).unwrap()).unwrap();
            assert_eq!(s.status, OpfStatus::Infeasible, "{variant}");
        }
    }

    #[test]
    fn tightening_never_lowers_cost() {
        let (model, space) = three_bus();
        let base = solve_opf(&build_opf(&model, &space, Variant::Dc, None, 8).unwrap()).unwrap();
        let mut tight = model.clone();
        tight.case.gens[1].p_max = 0.9;
        let t = solve_opf(&build_opf(&tight, &space, Variant::Dc, None, 8).unwrap()).unwrap();
        assert!(t.model_cost.unwrap() >= base.model_cost.unwrap() - 1e-9);
    }

    #[test]
    fn more_segments_never_lower_cost() {
        let (model, space) = three_bus();
        let coarse = solve_opf(&build_opf(&model, &space, Variant::Dc, None, 1).unwrap()).unwrap();
        let fine = solve_opf(&build_opf(&model, &space, Variant::Dc, None, 8).unwrap()).unwrap();
        assert!(fine.model_cost.unwrap() >= coarse.model_cost.unwrap() - 1e-9);
        // tangent envelope never exceeds the true cost
        let true_cost = model.case.gens[0].cost_at(fine.p_ref.unwrap())
            + model.case.gens[1].cost_at(fine.setpoints[0]);
        assert!(fine.model_cost.unwrap() <= true_cost + 1e-9);
    }

    #[test]
    fn dc_dispatch_sags_the_load_bus() {
        let (model, space) = three_bus();
        let s = solve_opf(&build_opf(&model, &space, Variant::Dc, None, 8).unwrap()).unwrap();
        let ev = ac_evaluate(&model, &space, &s.setpoints);
        assert!(ev.converged);
        assert!(ev.max_v_violation.unwrap() > 0.0);
    }
}
