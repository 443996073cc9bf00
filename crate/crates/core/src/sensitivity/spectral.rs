use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use super::{second_order, SensitivityBundle, SensitivityError};
use crate::pfcore::{InjectionVector, PowerFlowModel, QuantityOfInterest};
use crate::sampling::{draw_uniform, OperatingRange};

/// Eigenvalues within this distance of zero count as zero when tagging
/// curvature.
pub const CURVATURE_TOL: f64 = 1e-6;

/// Fraction of the leading singular value below which a singular value of
/// the stacked matrix is treated as negligible.
pub const RANK_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Curvature {
    Concave,
    Convex,
    Indefinite,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralSummary {
    /// Descending.
    pub singular_values: Vec<f64>,
    /// Orthonormal columns for every singular value at or above
    /// `threshold·σ₁`.
    #[serde(serialize_with = "ser_columns")]
    pub dominant_vectors: DMatrix<f64>,
    pub eigen_min: f64,
    pub eigen_max: f64,
    pub curvature: Curvature,
}

fn ser_columns<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    super::ser_matrix(&m.transpose(), s)
}

/// Singular value decomposition of a symmetric matrix with the vectors
/// sorted by decreasing singular value.
fn sorted_svd(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let values = order.iter().map(|&i| svd.singular_values[i]).collect();
    let vectors = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    (values, vectors)
}

/// SVD-based summary of a second-order matrix: singular values, the
/// dominant singular vectors (σ ≥ `threshold`·σ₁) and the sign structure of
/// the spectrum.
pub fn dominant_subspace(
    lambda: &DMatrix<f64>,
    threshold: f64,
) -> Result<SpectralSummary, SensitivityError> {
    if lambda.is_empty() {
        return Err(SensitivityError::EmptyMatrix);
    }
    assert!(
        threshold > 0.0 && threshold <= 1.0,
        "threshold must lie in (0, 1]"
    );
    let (singular_values, u) = sorted_svd(lambda);
    let cut = threshold * singular_values[0];
    let keep = if singular_values[0] == 0.0 {
        0
    } else {
        singular_values.iter().take_while(|&&s| s >= cut).count()
    };
    let dominant_vectors = u.columns(0, keep).into_owned();

    let eig = SymmetricEigen::new(lambda.clone());
    let eigen_min = eig.eigenvalues.min();
    let eigen_max = eig.eigenvalues.max();
    let curvature = if eigen_max <= CURVATURE_TOL {
        Curvature::Concave
    } else if eigen_min >= -CURVATURE_TOL {
        Curvature::Convex
    } else {
        Curvature::Indefinite
    };
    Ok(SpectralSummary {
        singular_values,
        dominant_vectors,
        eigen_min,
        eigen_max,
        curvature,
    })
}

/// Sorted singular values of the matrix formed by stacking `blocks`
/// side by side, and its approximate rank (σ ≥ 0.01·σ₁).
pub fn stacked_rank(blocks: &[DMatrix<f64>]) -> (Vec<f64>, usize) {
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    if blocks.is_empty() || cols == 0 {
        return (Vec::new(), 0);
    }
    let n = blocks[0].nrows();
    let mut stacked = DMatrix::zeros(n, cols);
    let mut at = 0;
    for b in blocks {
        stacked.columns_mut(at, b.ncols()).copy_from(b);
        at += b.ncols();
    }
    // the n×n Gram matrix has the same left singular structure
    let gram = &stacked * stacked.transpose();
    let eig = SymmetricEigen::new(gram);
    let mut sv: Vec<f64> = eig.eigenvalues.iter().map(|&e| e.max(0.0).sqrt()).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let rank = sv.iter().filter(|&&s| s >= RANK_FRACTION * sv[0]).count();
    (sv, rank)
}

#[derive(Debug, Clone, Serialize)]
pub struct SpanStability {
    pub singular_values: Vec<f64>,
    pub approx_rank: usize,
    /// Operating points dropped because the power flow failed.
    pub skipped: usize,
}

/// Samples `count` operating points uniformly in `range`, takes the `k`
/// leading singular vectors of the target's second-order matrix at each, and
/// reports the spectrum of the stacked `n × count·k` matrix.
pub fn span_stability(
    model: &PowerFlowModel,
    target: QuantityOfInterest,
    range: &OperatingRange,
    count: usize,
    k: usize,
    seed: u64,
) -> Result<SpanStability, SensitivityError> {
    assert!(count >= 1 && k >= 1);
    let nominal = model.nominal_injections().to_vec();
    let xs = draw_uniform(&nominal, range, count, seed);
    let blocks: Vec<Option<DMatrix<f64>>> = xs
        .par_iter()
        .map(|x| {
            let inj = InjectionVector::from_slice(&model.index, x).ok()?;
            let sol = model.solve(&inj).ok()?;
            let bundle = SensitivityBundle::new(model, &sol).ok()?;
            let so = second_order(model, &bundle, target).ok()?;
            let (_, u) = sorted_svd(&so.lambda);
            Some(u.columns(0, k.min(u.ncols())).into_owned())
        })
        .collect();
    let skipped = blocks.iter().filter(|b| b.is_none()).count();
    let blocks: Vec<DMatrix<f64>> = blocks.into_iter().flatten().collect();
    if blocks.is_empty() {
        return Err(SensitivityError::NotConverged);
    }
    let (singular_values, approx_rank) = stacked_rank(&blocks);
    Ok(SpanStability {
        singular_values,
        approx_rank,
        skipped,
    })
}
