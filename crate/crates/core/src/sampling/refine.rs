use nalgebra::DMatrix;

use super::{
    derive_seed, draw_subspace, draw_uniform, evaluate_samples, violating_rows, ImportanceConfig,
    OperatingRange, SampleSet, SamplingError,
};
use crate::pfcore::PowerFlowModel;
use crate::regress::ApproximationModel;

/// Batch generator: uniform over the range, optionally with a share of
/// each batch drawn along a fixed set of directions.
#[derive(Debug, Clone)]
pub struct Sampler {
    pub nominal: Vec<f64>,
    pub range: OperatingRange,
    pub importance: Option<(ImportanceConfig, DMatrix<f64>)>,
}

impl Sampler {
    pub fn uniform(nominal: Vec<f64>, range: OperatingRange) -> Self {
        Self {
            nominal,
            range,
            importance: None,
        }
    }

    /// Importance sampler over the first `config.k` columns of `vectors`.
    pub fn subspace(
        nominal: Vec<f64>,
        range: OperatingRange,
        config: ImportanceConfig,
        vectors: &DMatrix<f64>,
    ) -> Result<Self, SamplingError> {
        config.validate()?;
        let k = config.k.min(vectors.ncols());
        if k == 0 {
            return Err(SamplingError::EmptyBasis);
        }
        let basis = vectors.columns(0, k).into_owned();
        Ok(Self {
            nominal,
            range,
            importance: Some((config, basis)),
        })
    }

    /// `m` injection rows; the subspace share comes first.
    pub fn draw(&self, m: usize, seed: u64) -> Vec<Vec<f64>> {
        let Some((cfg, basis)) = &self.importance else {
            return draw_uniform(&self.nominal, &self.range, m, seed);
        };
        let n_sub = ((cfg.subspace_fraction * m as f64).round() as usize).min(m);
        let mut xs = Vec::with_capacity(m);
        if n_sub > 0 {
            let d = draw_subspace(
                &self.nominal,
                basis,
                &self.range,
                n_sub,
                cfg.placement,
                cfg.step_scale,
                derive_seed(seed, 1),
            )
            .expect("basis checked non-empty");
            xs.extend(d.xs);
        }
        if m > n_sub {
            xs.extend(draw_uniform(
                &self.nominal,
                &self.range,
                m - n_sub,
                derive_seed(seed, 2),
            ));
        }
        xs
    }
}

/// Outcome of the refinement loop.
#[derive(Debug, Clone)]
pub struct Refinement {
    pub model: ApproximationModel,
    /// Violation rate of the model in force at the start of each round,
    /// measured on that round's fresh batch.
    pub history: Vec<f64>,
    pub training: SampleSet,
}

/// Alternates between drawing a fresh batch, measuring the current model's
/// violation rate on it, adding the violating samples to the training set
/// and refitting.
pub fn iterative_refinement<F, E>(
    model: &PowerFlowModel,
    fit: F,
    sampler: &Sampler,
    initial: SampleSet,
    rounds: usize,
    batch: usize,
    seed: u64,
) -> Result<Refinement, E>
where
    F: Fn(&SampleSet) -> Result<ApproximationModel, E>,
    E: From<SamplingError>,
{
    assert!(rounds >= 1 && batch >= 1);
    let mut training = initial;
    let mut current = fit(&training)?;
    let mut history = Vec::with_capacity(rounds);
    for round in 0..rounds {
        let round_seed = derive_seed(seed, 100 + round as u64);
        let xs = sampler.draw(batch, round_seed);
        let fresh = evaluate_samples(model, &xs, &training.quantities, round_seed)?;
        let bad = violating_rows(&current, &fresh);
        history.push(bad.len() as f64 / fresh.len() as f64);
        if !bad.is_empty() {
            training.extend_rows(&fresh, bad);
            current = fit(&training)?;
        }
    }
    Ok(Refinement {
        model: current,
        history,
        training,
    })
}
