//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use adaptive_pf::fixtures;
use adaptive_pf::pfcore::{
    mismatch, solve_newton, InjectionVector, NewtonOptions, PowerFlowModel, QuantityOfInterest,
    StateVector,
};
use adaptive_pf::regress::{fit_cla, fit_rational, Direction, RationalOptions, RegressError};
use adaptive_pf::regress::{LinearProgram, Sense};
use adaptive_pf::sampling::{
    derive_seed, draw_uniform, evaluate_samples, iterative_refinement, violating_rows,
    OperatingRange, Sampler,
};
use adaptive_pf::sensitivity::{second_order, second_order_raw, SensitivityBundle};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `max|a − b| / max|b|`.
pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let diff = (a - b).amax();
    diff / b.amax().max(1e-12)
}

/// Minimum of a box-bounded LP by enumerating every basic solution.
/// `None` when no vertex is feasible.
pub fn vertex_enumeration(lp: &LinearProgram) -> Option<f64> {
    let n = lp.n_vars();
    // every constraint as aᵀx ≤ b
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for c in &lp.constraints {
        match c.sense {
            Sense::Le => rows.push((c.coeffs.clone(), c.rhs)),
            Sense::Ge => rows.push((c.coeffs.iter().map(|v| -v).collect(), -c.rhs)),
            Sense::Eq => {
                rows.push((c.coeffs.clone(), c.rhs));
                rows.push((c.coeffs.iter().map(|v| -v).collect(), -c.rhs));
            }
        }
    }
    for j in 0..n {
        assert!(
            lp.lower[j].is_finite() && lp.upper[j].is_finite(),
            "oracle needs a bounded box"
        );
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        rows.push((e.clone(), lp.upper[j]));
        rows.push((e.iter().map(|v| -v).collect(), -lp.lower[j]));
    }
    let m = rows.len();
    let feasible = |x: &DVector<f64>| {
        rows.iter().all(|(a, b)| {
            let lhs: f64 = a.iter().zip(x.iter()).map(|(p, q)| p * q).sum();
            lhs <= b + 1e-9 * (1.0 + b.abs())
        })
    };
    let mut best: Option<f64> = None;
    let mut pick: Vec<usize> = (0..n).collect();
    loop {
        let a = DMatrix::from_fn(n, n, |r, c| rows[pick[r]].0[c]);
        let b = DVector::from_fn(n, |r, _| rows[pick[r]].1);
        if let Some(x) = a.clone().lu().solve(&b) {
            if (a * &x - &b).amax() < 1e-9 && feasible(&x) {
                let v: f64 = lp.objective.iter().zip(x.iter()).map(|(c, x)| c * x).sum();
                best = Some(best.map_or(v, |b: f64| b.min(v)));
            }
        }
        // next n-combination of 0..m
        let mut i = n;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if pick[i] < m - n + i {
                pick[i] += 1;
                for k in i + 1..n {
                    pick[k] = pick[k - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Random bounded LP. With `feasible`, the rows are built around an
/// interior point so at least one solution exists.
pub fn random_lp(rng: &mut ChaCha8Rng, feasible: bool) -> LinearProgram {
    let n = rng.gen_range(1..=6);
    let rows = rng.gen_range(0..=6);
    let objective: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let mut lp = LinearProgram::new(objective);
    let mut point = Vec::with_capacity(n);
    for j in 0..n {
        let lo = rng.gen_range(-4.0..1.0);
        let hi = lo + rng.gen_range(0.5..5.0);
        lp.set_bounds(j, lo, hi);
        point.push(rng.gen_range(lo..hi));
    }
    for _ in 0..rows {
        let a: Vec<f64> = (0..n)
            .map(|_| {
                if rng.gen_bool(0.2) {
                    0.0
                } else {
                    rng.gen_range(-3.0..3.0)
                }
            })
            .collect();
        let at: f64 = a.iter().zip(&point).map(|(a, x)| a * x).sum();
        let sense = match rng.gen_range(0..5) {
            0 => Sense::Eq,
            1 | 2 => Sense::Le,
            _ => Sense::Ge,
        };
        let slack = if feasible {
            rng.gen_range(0.0..2.0)
        } else {
            rng.gen_range(-3.0..2.0)
        };
        let rhs = match sense {
            Sense::Eq => at,
            Sense::Le => at + slack,
            Sense::Ge => at - slack,
        };
        lp.add(a, sense, rhs);
    }
    lp
}

/// Computed reduced injections `g(y)`.
pub fn injections(model: &PowerFlowModel, y: &[f64]) -> DVector<f64> {
    let zero = InjectionVector::from_slice(&model.index, &vec![0.0; model.dim()]).unwrap();
    let state = StateVector::from_slice(&model.index, y).unwrap();
    -mismatch(model, &zero, &state).unwrap()
}

/// Central difference of `g` with respect to the state.
pub fn fd_jacobian(model: &PowerFlowModel, y: &[f64], h: f64) -> DMatrix<f64> {
    let n = y.len();
    let mut j = DMatrix::zeros(n, n);
    for c in 0..n {
        let mut yp = y.to_vec();
        let mut ym = y.to_vec();
        yp[c] += h;
        ym[c] -= h;
        j.set_column(
            c,
            &((injections(model, &yp) - injections(model, &ym)) / (2.0 * h)),
        );
    }
    j
}

/// Tightly converged reduced state at injections `x`.
pub fn solve_tight(model: &PowerFlowModel, x: &[f64], start: &StateVector) -> StateVector {
    let inj = InjectionVector::from_slice(&model.index, x).unwrap();
    let sol = solve_newton(
        model,
        &inj,
        start,
        &NewtonOptions {
            tol: 1e-13,
            max_iter: 30,
        },
    )
    .unwrap();
    assert!(sol.converged, "re-solve failed");
    model.reduced_state(&sol.v, &sol.theta)
}

/// Central difference of the first-order sensitivity row of state `k`
/// with respect to the injections, by re-solving the power flow.
pub fn fd_second_order(model: &PowerFlowModel, x: &[f64], k: usize, h: f64) -> DMatrix<f64> {
    let n = x.len();
    let base = solve_tight(model, x, &model.flat_start());
    let row_at = |xx: &[f64]| -> DVector<f64> {
        let y = solve_tight(model, xx, &base);
        let yv: Vec<f64> = y.theta.iter().chain(&y.v).copied().collect();
        let j = fd_free_jacobian(model, &yv);
        let inv = j.try_inverse().expect("regular Jacobian");
        inv.row(k).transpose()
    };
    let mut out = DMatrix::zeros(n, n);
    for l in 0..n {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[l] += h;
        xm[l] -= h;
        out.set_column(l, &((row_at(&xp) - row_at(&xm)) / (2.0 * h)));
    }
    out
}

/// Jacobian from a fine central difference, independent of the analytic
/// assembly.
pub fn fd_free_jacobian(model: &PowerFlowModel, y: &[f64]) -> DMatrix<f64> {
    // fourth-order stencil so the nested difference stays accurate
    let n = y.len();
    let h = 1e-4;
    let mut j = DMatrix::zeros(n, n);
    for c in 0..n {
        let at = |d: f64| {
            let mut yy = y.to_vec();
            yy[c] += d;
            injections(model, &yy)
        };
        let col = (at(-2.0 * h) - at(2.0 * h) + (at(h) - at(-h)) * 8.0) / (12.0 * h);
        j.set_column(c, &col);
    }
    j
}

/// Uniform injections in `[lo, hi]`·nominal.
pub fn random_injections(
    model: &PowerFlowModel,
    rng: &mut ChaCha8Rng,
    lo: f64,
    hi: f64,
) -> Vec<f64> {
    model
        .nominal_injections()
        .to_vec()
        .iter()
        .map(|v| v * rng.gen_range(lo..=hi))
        .collect()
}

/// Worst relative errors `(J, Γ, Λ, asymmetry)` over `points` random
/// operating points of `model`.
pub fn worst_errors(model: &PowerFlowModel, points: usize, seed: u64) -> (f64, f64, f64, f64) {
    let mut r = rng(seed);
    let (mut ej, mut eg, mut el, mut asym) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut done = 0;
    while done < points {
        let x = random_injections(model, &mut r, 0.7, 1.3);
        let y = solve_tight(model, &x, &model.flat_start());
        let (vm, va) = model.full_voltage(&y);
        let bundle = SensitivityBundle::at_state(model, &vm, &va).unwrap();
        let yv: Vec<f64> = y.theta.iter().chain(&y.v).copied().collect();

        ej = ej.max(rel_err(&bundle.jacobian, &fd_jacobian(model, &yv, 1e-6)));

        let h = 1e-6;
        for (m, gamma) in bundle.gammas.iter().enumerate() {
            let mut yp = yv.clone();
            let mut ym = yv.clone();
            yp[m] += h;
            ym[m] -= h;
            let jp = SensitivityBundle::at_state(
                model,
                &model.full_voltage_of(&yp).0,
                &model.full_voltage_of(&yp).1,
            )
            .unwrap()
            .jacobian;
            let jm = SensitivityBundle::at_state(
                model,
                &model.full_voltage_of(&ym).0,
                &model.full_voltage_of(&ym).1,
            )
            .unwrap()
            .jacobian;
            let fd: DMatrix<f64> = (jp - jm) / (2.0 * h);
            eg = eg.max(rel_err(gamma, &fd));
        }

        for &pos in &model.index.pq {
            let q = QuantityOfInterest::BusVoltage(model.case.buses[pos].id);
            let k = model.index.vm_index(pos).unwrap();
            let raw = second_order_raw(&bundle, k);
            asym = asym.max((&raw - raw.transpose()).amax());
            let so = second_order(model, &bundle, q).unwrap();
            let fd = fd_second_order(model, &x, k, 1e-5);
            el = el.max(rel_err(&so.lambda, &fd));
        }
        done += 1;
    }
    (ej, eg, el, asym)
}

trait FullVoltage {
    fn full_voltage_of(&self, y: &[f64]) -> (Vec<f64>, Vec<f64>);
}

impl FullVoltage for PowerFlowModel {
    fn full_voltage_of(&self, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let s = StateVector::from_slice(&self.index, y).unwrap();
        self.full_voltage(&s)
    }
}

pub const REFINE_TARGET: QuantityOfInterest = QuantityOfInterest::BusVoltage(5);

/// Violation-rate histories of the refinement loop on the feeder, one per
/// seed, starting from 500 uniform samples.
pub fn histories(
    rational: bool,
    direction: Direction,
    seeds: &[u64],
    rounds: usize,
) -> Vec<Vec<f64>> {
    let model = PowerFlowModel::new(&fixtures::feeder6()).unwrap();
    let x0 = model.nominal_injections().to_vec();
    let range = OperatingRange::uniform(x0.len(), 0.7, 1.3);
    let sampler = Sampler::uniform(x0.clone(), range.clone());
    seeds
        .iter()
        .map(|&seed| {
            let xs = draw_uniform(&x0, &range, 500, derive_seed(seed, 1));
            let train = evaluate_samples(&model, &xs, &[REFINE_TARGET], seed).unwrap();
            let fit = |s: &adaptive_pf::sampling::SampleSet| -> Result<_, RegressError> {
                let f = if rational {
                    fit_rational(s, REFINE_TARGET, direction, &RationalOptions::default())?
                } else {
                    fit_cla(s, REFINE_TARGET, direction)?
                };
                assert!(
                    violating_rows(&f.model, s).is_empty(),
                    "training violation after refit"
                );
                Ok(f.model)
            };
            iterative_refinement(&model, fit, &sampler, train, rounds, 500, seed)
                .unwrap()
                .history
        })
        .collect()
}

/// Prints one acceptance line and returns the verdict.
pub fn verdict(id: u32, name: &str, pass: bool, detail: &str) -> bool {
    println!(
        "{} criterion {id:>2} {name}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}
