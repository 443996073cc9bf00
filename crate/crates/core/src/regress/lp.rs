//! Dense bounded-variable revised simplex.
//!
//! Every row gets a slack (`≤`: `s ≥ 0`, `≥`: `s ≤ 0`, `=`: `s = 0`) so the
//! working form is `A x + s = b` with bounds on all columns. Phase one
//! drives a set of artificials to zero; phase two optimizes the real
//! objective with the artificials fixed at zero. Pricing is Dantzig's rule
//! until a run of degenerate pivots, then Bland's rule until the objective
//! moves again.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Factorization;

const FEAS_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-11;
const REFACTOR_EVERY: usize = 64;
const DEGENERATE_RUN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub sense: Sense,
    pub rhs: f64,
}

/// `min cᵀx` subject to row constraints and per-variable bounds, which
/// may be infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("malformed program: {0}")]
    Malformed(String),
    #[error("simplex failed after {0} iterations")]
    NumericalFailure(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub value: f64,
    /// Row multipliers: sensitivity of the optimal value to each `rhs`.
    pub duals: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal(LpSolution),
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn optimal(self) -> Option<LpSolution> {
        match self {
            Self::Optimal(s) => Some(s),
            _ => None,
        }
    }
}

impl LinearProgram {
    /// Program over `objective.len()` variables bounded below by zero.
    pub fn new(objective: Vec<f64>) -> Self {
        let n = objective.len();
        Self {
            objective,
            constraints: Vec::new(),
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add(&mut self, coeffs: Vec<f64>, sense: Sense, rhs: f64) {
        self.constraints.push(Constraint { coeffs, sense, rhs });
    }

    pub fn set_bounds(&mut self, j: usize, lower: f64, upper: f64) {
        self.lower[j] = lower;
        self.upper[j] = upper;
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.n_vars();
        let bad = |s: String| Err(LpError::Malformed(s));
        if self.lower.len() != n || self.upper.len() != n {
            return bad("bound vectors differ from objective length".into());
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return bad("non-finite objective coefficient".into());
        }
        for (j, (&l, &u)) in self.lower.iter().zip(&self.upper).enumerate() {
            if l.is_nan() || u.is_nan() || l > u || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return bad(format!("variable {j} has bounds [{l}, {u}]"));
            }
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if c.coeffs.len() != n {
                return bad(format!(
                    "row {i} has {} coefficients, expected {n}",
                    c.coeffs.len()
                ));
            }
            if c.coeffs.iter().any(|a| !a.is_finite()) || !c.rhs.is_finite() {
                return bad(format!("row {i} has a non-finite entry"));
            }
        }
        Ok(())
    }

    /// Largest violation of rows and bounds at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for c in &self.constraints {
            let lhs: f64 = c.coeffs.iter().zip(x).map(|(a, v)| a * v).sum();
            let v = match c.sense {
                Sense::Le => lhs - c.rhs,
                Sense::Ge => c.rhs - lhs,
                Sense::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(v);
        }
        for ((&v, &l), &u) in x.iter().zip(&self.lower).zip(&self.upper) {
            worst = worst.max(l - v).max(v - u);
        }
        worst
    }
}

struct Tableau {
    m: usize,
    a: DMatrix<f64>,
    b: DVector<f64>,
    lo: Vec<f64>,
    up: Vec<f64>,
    x: Vec<f64>,
    basis: Vec<usize>,
    /// Basis position of each column, if basic.
    pos: Vec<Option<usize>>,
    binv: DMatrix<f64>,
    iterations: usize,
    max_iter: usize,
}

enum Step {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn refactor(&mut self) -> Result<(), LpError> {
        let m = self.m;
        let mut bm = DMatrix::zeros(m, m);
        for (k, &j) in self.basis.iter().enumerate() {
            bm.set_column(k, &self.a.column(j));
        }
        let lu = Factorization::new(bm).map_err(|_| LpError::NumericalFailure(self.iterations))?;
        self.binv = lu.inverse();
        let mut r = self.b.clone();
        for (j, &v) in self.x.iter().enumerate() {
            if self.pos[j].is_none() && v != 0.0 {
                r.axpy(-v, &self.a.column(j), 1.0);
            }
        }
        let xb = &self.binv * r;
        for (k, &j) in self.basis.iter().enumerate() {
            self.x[j] = xb[k];
        }
        Ok(())
    }

    fn duals(&self, cost: &[f64]) -> DVector<f64> {
        let cb = DVector::from_iterator(self.m, self.basis.iter().map(|&j| cost[j]));
        self.binv.tr_mul(&cb)
    }

    fn run(&mut self, cost: &[f64]) -> Result<Step, LpError> {
        let ncol = self.a.ncols();
        let mut degenerate = 0usize;
        let mut bland = false;
        loop {
            self.iterations += 1;
            if self.iterations > self.max_iter {
                return Err(LpError::NumericalFailure(self.iterations));
            }
            if self.iterations % REFACTOR_EVERY == 0 {
                self.refactor()?;
            }
            let y = self.duals(cost);

            // pricing
            let mut enter: Option<(usize, f64, f64)> = None; // (column, direction, |d|)
            for j in 0..ncol {
                if self.pos[j].is_some() || self.lo[j] == self.up[j] {
                    continue;
                }
                let d = cost[j] - self.a.column(j).dot(&y);
                let dir = if d < -OPT_TOL && self.x[j] < self.up[j] {
                    1.0
                } else if d > OPT_TOL && self.x[j] > self.lo[j] {
                    -1.0
                } else {
                    continue;
                };
                if bland {
                    enter = Some((j, dir, d.abs()));
                    break;
                }
                if enter.map_or(true, |(_, _, best)| d.abs() > best) {
                    enter = Some((j, dir, d.abs()));
                }
            }
            let Some((j, dir, _)) = enter else {
                return Ok(Step::Optimal);
            };

            // ratio test
            let alpha = &self.binv * self.a.column(j);
            let mut t_max = self.up[j] - self.lo[j];
            let mut leave: Option<(usize, f64)> = None; // (basis position, bound)
            let mut leave_key = (f64::INFINITY, usize::MAX);
            for k in 0..self.m {
                let delta = -dir * alpha[k];
                let bj = self.basis[k];
                let (t, bound) = if delta < -PIVOT_TOL && self.lo[bj].is_finite() {
                    ((self.x[bj] - self.lo[bj]) / -delta, self.lo[bj])
                } else if delta > PIVOT_TOL && self.up[bj].is_finite() {
                    ((self.up[bj] - self.x[bj]) / delta, self.up[bj])
                } else {
                    continue;
                };
                let t = t.max(0.0);
                let better = if t < t_max - 1e-12 {
                    true
                } else if t <= t_max + 1e-12 {
                    // ties: Bland picks the lowest column, otherwise the
                    // largest pivot; a tied bound flip is kept
                    match leave {
                        None => false,
                        Some(_) if bland => bj < leave_key.1,
                        Some(_) => delta.abs() > leave_key.0,
                    }
                } else {
                    false
                };
                if better {
                    t_max = t;
                    leave = Some((k, bound));
                    leave_key = (delta.abs(), bj);
                }
            }
            if !t_max.is_finite() {
                return Ok(Step::Unbounded);
            }

            if t_max <= 1e-12 {
                degenerate += 1;
                if degenerate >= DEGENERATE_RUN {
                    bland = true;
                }
            } else {
                degenerate = 0;
                bland = false;
            }

            self.x[j] += dir * t_max;
            for k in 0..self.m {
                let bj = self.basis[k];
                self.x[bj] -= dir * alpha[k] * t_max;
            }
            match leave {
                None => {
                    // bound flip
                    self.x[j] = if dir > 0.0 { self.up[j] } else { self.lo[j] };
                }
                Some((k, bound)) => {
                    let out = self.basis[k];
                    self.x[out] = bound;
                    self.pos[out] = None;
                    self.basis[k] = j;
                    self.pos[j] = Some(k);
                    let piv = alpha[k];
                    let row = self.binv.row(k) / piv;
                    for i in 0..self.m {
                        if i != k && alpha[i] != 0.0 {
                            let f = alpha[i];
                            for c in 0..self.m {
                                self.binv[(i, c)] -= f * row[c];
                            }
                        }
                    }
                    self.binv.set_row(k, &row);
                }
            }
        }
    }
}

/// Solves `lp` to optimality or classifies it as infeasible or unbounded.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpOutcome, LpError> {
    lp.validate()?;
    let n = lp.n_vars();
    let m = lp.constraints.len();
    let ncol = n + 2 * m;

    let mut a = DMatrix::zeros(m, ncol);
    let mut b = DVector::zeros(m);
    let mut lo = lp.lower.clone();
    let mut up = lp.upper.clone();
    for (i, c) in lp.constraints.iter().enumerate() {
        for (j, &v) in c.coeffs.iter().enumerate() {
            a[(i, j)] = v;
        }
        a[(i, n + i)] = 1.0;
        b[i] = c.rhs;
        let (l, u) = match c.sense {
            Sense::Le => (0.0, f64::INFINITY),
            Sense::Ge => (f64::NEG_INFINITY, 0.0),
            Sense::Eq => (0.0, 0.0),
        };
        lo.push(l);
        up.push(u);
    }
    lo.extend(std::iter::repeat(0.0).take(m));
    up.extend(std::iter::repeat(0.0).take(m));

    // nonbasic structurals at a finite bound (free ones at zero)
    let mut x = vec![0.0; ncol];
    for j in 0..n {
        x[j] = if lo[j].is_finite() {
            lo[j]
        } else if up[j].is_finite() {
            up[j]
        } else {
            0.0
        };
    }
    let mut r = b.clone();
    for j in 0..n {
        if x[j] != 0.0 {
            r.axpy(-x[j], &a.column(j), 1.0);
        }
    }

    let mut basis = Vec::with_capacity(m);
    let mut pos = vec![None; ncol];
    let mut binv = DMatrix::zeros(m, m);
    let mut phase1 = vec![0.0; ncol];
    let mut needs_phase1 = false;
    for i in 0..m {
        let s = n + i;
        if r[i] >= lo[s] - FEAS_TOL && r[i] <= up[s] + FEAS_TOL {
            x[s] = r[i];
            basis.push(s);
            pos[s] = Some(i);
            binv[(i, i)] = 1.0;
        } else {
            let art = n + m + i;
            let sign = r[i].signum();
            a[(i, art)] = sign;
            up[art] = f64::INFINITY;
            x[art] = r[i].abs();
            basis.push(art);
            pos[art] = Some(i);
            binv[(i, i)] = sign;
            phase1[art] = 1.0;
            needs_phase1 = true;
        }
    }

    let mut t = Tableau {
        m,
        a,
        b,
        lo,
        up,
        x,
        basis,
        pos,
        binv,
        iterations: 0,
        max_iter: 20_000 + 50 * (ncol + m),
    };

    if needs_phase1 {
        match t.run(&phase1)? {
            Step::Optimal => {}
            Step::Unbounded => return Err(LpError::NumericalFailure(t.iterations)),
        }
        t.refactor()?;
        let infeas: f64 = (n + m..ncol).map(|j| t.x[j].abs()).sum();
        let scale = 1.0 + t.b.amax();
        if infeas > 1e-7 * scale {
            return Ok(LpOutcome::Infeasible);
        }
        for j in n + m..ncol {
            t.up[j] = 0.0;
            if t.pos[j].is_none() {
                t.x[j] = 0.0;
            }
        }
    }

    let mut cost = lp.objective.clone();
    cost.resize(ncol, 0.0);
    match t.run(&cost)? {
        Step::Unbounded => return Ok(LpOutcome::Unbounded),
        Step::Optimal => {}
    }
    t.refactor()?;
    let xs: Vec<f64> = t.x[..n].to_vec();
    let value = lp.objective.iter().zip(&xs).map(|(c, v)| c * v).sum();
    let duals = t.duals(&cost).iter().copied().collect();
    Ok(LpOutcome::Optimal(LpSolution {
        x: xs,
        value,
        duals,
        iterations: t.iterations,
    }))
}
