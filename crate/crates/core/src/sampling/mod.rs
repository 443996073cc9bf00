//! Injection sampling over an operating range, batch power flow evaluation
//! and the violation-driven refinement loop.
//!
//! Samples are plain injection vectors in the reduced ordering of
//! [`crate::pfcore::BusIndexing`]. Uniform draws fill the multiplicative box
//! around the nominal injections; subspace draws move along a set of
//! orthonormal directions (typically the dominant singular vectors of a
//! second-order matrix) and are clipped back into the box.

mod refine;
mod table;

pub use refine::{iterative_refinement, Refinement, Sampler};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pfcore::{InjectionVector, PfError, PowerFlowModel, QuantityOfInterest};
use crate::regress::{ApproximationModel, Direction};

/// Slack granted before a sample counts as violating a conservative model.
pub const VIOLATION_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("subspace basis has no columns")]
    EmptyBasis,
    #[error("no quantities requested")]
    NoQuantities,
    #[error("all {0} samples failed to converge")]
    AllSamplesFailed(usize),
    #[error("sample table: {0}")]
    Table(String),
    #[error("invalid operating range: {0}")]
    InvalidRange(String),
    #[error(transparent)]
    PowerFlow(#[from] PfError),
}

/// Per-injection multiplicative factors on the nominal injections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingRange {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl OperatingRange {
    /// Same factors for all `n` injections.
    pub fn uniform(n: usize, lower: f64, upper: f64) -> Self {
        Self {
            lower: vec![lower; n],
            upper: vec![upper; n],
        }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn validate(&self, n: usize) -> Result<(), SamplingError> {
        if self.lower.len() != n || self.upper.len() != n {
            return Err(SamplingError::InvalidRange(format!(
                "expected {n} factors, got {}/{}",
                self.lower.len(),
                self.upper.len()
            )));
        }
        for (i, (l, u)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !(l.is_finite() && u.is_finite() && l <= u) {
                return Err(SamplingError::InvalidRange(format!(
                    "factor {i}: lower {l} exceeds upper {u}"
                )));
            }
        }
        Ok(())
    }

    /// Absolute box `[min(l·x, u·x), max(l·x, u·x)]` around `nominal`.
    /// Negative injections (loads) flip the ordering of the two products.
    pub fn bounds(&self, nominal: &[f64]) -> (Vec<f64>, Vec<f64>) {
        assert_eq!(
            nominal.len(),
            self.len(),
            "range and nominal differ in length"
        );
        nominal
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&x, (&l, &u))| (f64::min(l * x, u * x), f64::max(l * x, u * x)))
            .unzip()
    }
}

/// How coefficients along the subspace directions are distributed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    /// Magnitudes pushed toward the edge of the range.
    Extreme,
    /// Magnitudes concentrated near the nominal point.
    Central,
    /// Magnitudes uniform over the range.
    Mixed,
}

impl Placement {
    /// Underestimates of a concave quantity fail at the edges of the range,
    /// overestimates in the middle.
    pub fn for_direction(direction: Direction) -> Self {
        match direction {
            Direction::Under => Self::Extreme,
            Direction::Over => Self::Central,
            Direction::None => Self::Mixed,
        }
    }

    fn magnitude(self, u: f64) -> f64 {
        match self {
            Self::Extreme => u.cbrt(),
            Self::Central => u * u * u,
            Self::Mixed => u,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceConfig {
    /// Fraction of each batch drawn along the dominant directions; the rest
    /// is uniform.
    pub subspace_fraction: f64,
    pub placement: Placement,
    /// Number of dominant singular vectors used.
    pub k: usize,
    /// Step length along each direction as a fraction of the distance to
    /// the edge of the box.
    pub step_scale: f64,
}

impl Default for ImportanceConfig {
    fn default() -> Self {
        Self {
            subspace_fraction: 0.5,
            placement: Placement::Extreme,
            k: 3,
            step_scale: 1.0,
        }
    }
}

impl ImportanceConfig {
    pub fn validate(&self) -> Result<(), SamplingError> {
        if !(0.0..=1.0).contains(&self.subspace_fraction) {
            return Err(SamplingError::InvalidRange(format!(
                "subspace fraction {} outside [0, 1]",
                self.subspace_fraction
            )));
        }
        if self.k == 0 {
            return Err(SamplingError::InvalidRange("k must be at least 1".into()));
        }
        if !(self.step_scale > 0.0) {
            return Err(SamplingError::InvalidRange(
                "step scale must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Solved samples: one injection row per retained draw and, for every
/// quantity, one value per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    /// Expansion point the models are centered on.
    pub center: Vec<f64>,
    pub xs: Vec<Vec<f64>>,
    pub quantities: Vec<QuantityOfInterest>,
    /// `betas[q][m]` is quantity `q` at row `m`.
    pub betas: Vec<Vec<f64>>,
    pub skipped: usize,
    pub seed: u64,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn quantity_index(&self, q: QuantityOfInterest) -> Option<usize> {
        self.quantities.iter().position(|&x| x == q)
    }

    pub fn betas_for(&self, q: QuantityOfInterest) -> Option<&[f64]> {
        self.quantity_index(q).map(|i| self.betas[i].as_slice())
    }

    /// Appends the rows of `other`, which must share center and quantities.
    pub fn extend_rows(&mut self, other: &SampleSet, rows: impl IntoIterator<Item = usize>) {
        assert_eq!(self.quantities, other.quantities, "quantity lists differ");
        for m in rows {
            self.xs.push(other.xs[m].clone());
            for (dst, src) in self.betas.iter_mut().zip(&other.betas) {
                dst.push(src[m]);
            }
        }
    }

    /// Subset of the rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> SampleSet {
        SampleSet {
            center: self.center.clone(),
            xs: rows.iter().map(|&m| self.xs[m].clone()).collect(),
            quantities: self.quantities.clone(),
            betas: self
                .betas
                .iter()
                .map(|b| rows.iter().map(|&m| b[m]).collect())
                .collect(),
            skipped: 0,
            seed: self.seed,
        }
    }
}

/// Independent stream for a named purpose derived from a base seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `m` rows with every component drawn independently and uniformly from
/// the range box.
pub fn draw_uniform(nominal: &[f64], range: &OperatingRange, m: usize, seed: u64) -> Vec<Vec<f64>> {
    let (lo, hi) = range.bounds(nominal);
    draw_box(&lo, &hi, m, seed)
}

/// `m` rows uniform in the absolute box `[lo, hi]`.
pub fn draw_box(lo: &[f64], hi: &[f64], m: usize, seed: u64) -> Vec<Vec<f64>> {
    assert!(m >= 1, "at least one sample required");
    assert_eq!(lo.len(), hi.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..m)
        .map(|_| {
            lo.iter()
                .zip(hi)
                .map(|(&l, &h)| if h > l { rng.gen_range(l..=h) } else { l })
                .collect()
        })
        .collect()
}

/// Subspace draws and how many components had to be clipped into the box.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceDraw {
    pub xs: Vec<Vec<f64>>,
    pub clipped: usize,
}

/// Longest step from `nominal` along `v` (either sign) that stays in the
/// box `nominal ± half`. Coordinates with a zero-width box are ignored.
fn reach(half: &[f64], v: impl Iterator<Item = f64>) -> f64 {
    let mut t = f64::INFINITY;
    for (h, vi) in half.iter().zip(v) {
        if *h > 0.0 && vi.abs() > 1e-12 {
            t = t.min(h / vi.abs());
        }
    }
    if t.is_finite() {
        t
    } else {
        0.0
    }
}

/// Draws `x = nominal + V·c` with the coefficient magnitudes shaped by
/// `placement` and random signs, then clips into the range box.
///
/// Coefficient `j` ranges over `step_scale` times the distance from
/// `nominal` to the edge of the box along column `j` of `vectors`.
pub fn draw_subspace(
    nominal: &[f64],
    vectors: &DMatrix<f64>,
    range: &OperatingRange,
    m: usize,
    placement: Placement,
    step_scale: f64,
    seed: u64,
) -> Result<SubspaceDraw, SamplingError> {
    assert!(m >= 1, "at least one sample required");
    if vectors.ncols() == 0 {
        return Err(SamplingError::EmptyBasis);
    }
    assert_eq!(
        vectors.nrows(),
        nominal.len(),
        "basis and nominal differ in length"
    );
    let (lo, hi) = range.bounds(nominal);
    let half: Vec<f64> = nominal
        .iter()
        .zip(lo.iter().zip(&hi))
        .map(|(x, (l, h))| f64::min(x - l, h - x).max(0.0))
        .collect();
    let reaches: Vec<f64> = vectors
        .column_iter()
        .map(|c| step_scale * reach(&half, c.iter().copied()))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clipped = 0;
    let xs = (0..m)
        .map(|_| {
            let mut x = nominal.to_vec();
            for (j, col) in vectors.column_iter().enumerate() {
                let u: f64 = rng.gen();
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let c = sign * reaches[j] * placement.magnitude(u);
                for (xi, vi) in x.iter_mut().zip(col.iter()) {
                    *xi += c * vi;
                }
            }
            for ((xi, &l), &h) in x.iter_mut().zip(&lo).zip(&hi) {
                if *xi < l || *xi > h {
                    clipped += 1;
                    *xi = xi.clamp(l, h);
                }
            }
            x
        })
        .collect();
    Ok(SubspaceDraw { xs, clipped })
}

/// Solves every row once and reads all quantities off the same solution.
/// Rows whose power flow fails are dropped and counted in `skipped`.
pub fn evaluate_samples(
    model: &PowerFlowModel,
    xs: &[Vec<f64>],
    quantities: &[QuantityOfInterest],
    seed: u64,
) -> Result<SampleSet, SamplingError> {
    if quantities.is_empty() {
        return Err(SamplingError::NoQuantities);
    }
    for q in quantities {
        q.check(&model.case)?;
    }
    let rows: Vec<Option<Vec<f64>>> = xs
        .par_iter()
        .map(|x| {
            let inj = InjectionVector::from_slice(&model.index, x).ok()?;
            let sol = model.solve(&inj).ok()?;
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
        center: model.nominal_injections().to_vec(),
        xs: Vec::new(),
        quantities: quantities.to_vec(),
        betas: vec![Vec::new(); quantities.len()],
        skipped: 0,
        seed,
    };
    for (x, row) in xs.iter().zip(rows) {
        match row {
            Some(values) => {
                set.xs.push(x.clone());
                for (col, v) in set.betas.iter_mut().zip(values) {
                    col.push(v);
                }
            }
            None => set.skipped += 1,
        }
    }
    if set.is_empty() {
        return Err(SamplingError::AllSamplesFailed(xs.len()));
    }
    Ok(set)
}

/// Rows of `fresh` on which a conservative model is on the wrong side of
/// the true value by more than [`VIOLATION_TOL`].
pub fn violating_rows(model: &ApproximationModel, fresh: &SampleSet) -> Vec<usize> {
    let Some(betas) = fresh.betas_for(model.quantity) else {
        panic!("sample set lacks quantity {}", model.quantity);
    };
    fresh
        .xs
        .iter()
        .zip(betas)
        .enumerate()
        .filter(|(_, (x, &beta))| {
            let pred = model.predict(x);
            match model.direction {
                Direction::Over => pred < beta - VIOLATION_TOL,
                Direction::Under => pred > beta + VIOLATION_TOL,
                Direction::None => false,
            }
        })
        .map(|(m, _)| m)
        .collect()
}

/// Fraction of `fresh` violating the model's conservativeness direction.
/// Models without a direction never violate.
pub fn violation_rate(model: &ApproximationModel, fresh: &SampleSet) -> f64 {
    if fresh.is_empty() {
        return 0.0;
    }
    violating_rows(model, fresh).len() as f64 / fresh.len() as f64
}
