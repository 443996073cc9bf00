//! End-to-end run: nominal power flow, second-order analysis, sampling,
//! fitting and held-out evaluation, with every artifact written to one
//! directory.
//!
//! Files produced, in stage order:
//!
//! | file | content |
//! |------|---------|
//! | `sensitivity.json` | spectrum of each quantity's second-order matrix (only when needed) |
//! | `train_samples.csv`, `test_samples.csv` | sample tables |
//! | `models.json` | fitted and constructed models with fit reports |
//! | `errors.csv` | held-out error table |
//! | `manifest.json` | configuration, its hash, seeds and run metadata |
//! | `timings.json` | wall-clock seconds per stage |
//!
//! Everything except `timings.json` is a pure function of the
//! configuration.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fixtures;
use crate::netmodel::{parse_matpower, NetworkCase};
use crate::pade::{pade11, PadeModel};
use crate::pfcore::{PowerFlowModel, QuantityOfInterest};
use crate::regress::{
    fit_cla, fit_la, fit_rational, ApproximationModel, Direction, Fit, FitReport, RationalOptions,
    RegressError,
};
use crate::report::{error_table, write_csv, ErrorRow};
use crate::sampling::{
    derive_seed, evaluate_samples, ImportanceConfig, OperatingRange, SampleSet, Sampler,
};
use crate::sensitivity::{
    dominant_subspace, nominal_expansion, target_coordinate, SensitivityError, SpectralSummary,
    RANK_FRACTION,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("stage `{stage}` failed: {message}")]
    Stage {
        stage: &'static str,
        message: String,
    },
}

impl PipelineError {
    fn stage<E: fmt::Display>(stage: &'static str) -> impl Fn(E) -> Self {
        move |e| Self::Stage {
            stage,
            message: e.to_string(),
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// One model family to produce for every quantity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelSpec {
    La,
    ClaOver,
    ClaUnder,
    Ra,
    CraOver,
    CraUnder,
    Pade,
}

impl ModelSpec {
    pub const ALL: [ModelSpec; 7] = [
        Self::La,
        Self::ClaOver,
        Self::ClaUnder,
        Self::Ra,
        Self::CraOver,
        Self::CraUnder,
        Self::Pade,
    ];

    pub fn direction(self) -> Direction {
        match self {
            Self::ClaOver | Self::CraOver => Direction::Over,
            Self::ClaUnder | Self::CraUnder => Direction::Under,
            _ => Direction::None,
        }
    }

    fn rational(self) -> bool {
        matches!(self, Self::Ra | Self::CraOver | Self::CraUnder)
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::La => "la",
            Self::ClaOver => "cla-over",
            Self::ClaUnder => "cla-under",
            Self::Ra => "ra",
            Self::CraOver => "cra-over",
            Self::CraUnder => "cra-under",
            Self::Pade => "pade",
        })
    }
}

impl FromStr for ModelSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.to_string() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown model `{s}`"))
    }
}

/// Multiplicative range applied to every nominal injection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeSpec {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Path to a MATPOWER or JSON case, or the name of a bundled case.
    pub case: String,
    pub range: RangeSpec,
    /// Training samples drawn.
    pub samples: usize,
    /// Held-out samples drawn with an independent seed.
    pub test_samples: usize,
    pub seed: u64,
    /// Empty means every PQ-bus voltage magnitude.
    pub quantities: Vec<QuantityOfInterest>,
    pub models: Vec<ModelSpec>,
    /// Importance sampling along the shared dominant directions; uniform
    /// sampling when absent.
    pub importance: Option<ImportanceConfig>,
    pub epsilon: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Start rational reweighting from the Padé denominators when available.
    pub pade_weights: bool,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let rational = RationalOptions::default();
        Self {
            case: "feeder6".into(),
            range: RangeSpec {
                lower: 0.7,
                upper: 1.3,
            },
            samples: 500,
            test_samples: 500,
            seed: 0,
            quantities: Vec::new(),
            models: ModelSpec::ALL.to_vec(),
            importance: None,
            epsilon: rational.epsilon,
            tol: rational.tol,
            max_iter: rational.max_iter,
            pade_weights: true,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::Validation(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let compact = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(compact.as_bytes()))
    }

    pub fn rational_options(&self) -> RationalOptions {
        RationalOptions {
            epsilon: self.epsilon,
            tol: self.tol,
            max_iter: self.max_iter,
            w0: None,
        }
    }

    /// Checks everything that does not need the network.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Validation(m.into()));
        if self.samples == 0 {
            return bad("sample count must be positive");
        }
        if self.test_samples == 0 {
            return bad("test sample count must be positive");
        }
        let RangeSpec { lower, upper } = self.range;
        if !(lower.is_finite() && upper.is_finite()) {
            return bad("range factors must be finite");
        }
        if self.models.is_empty() {
            return bad("no models requested");
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad("epsilon must lie in (0, 1)");
        }
        if !(self.tol >= 0.0) {
            return bad("tolerance must be non-negative");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive");
        }
        if let Some(imp) = &self.importance {
            imp.validate()
                .map_err(|e| PipelineError::Validation(e.to_string()))?;
        }
        Ok(())
    }

    /// Checks the configuration against the network and returns the
    /// quantity list the run will use.
    pub fn resolve_quantities(
        &self,
        model: &PowerFlowModel,
    ) -> Result<Vec<QuantityOfInterest>, PipelineError> {
        let qs = if self.quantities.is_empty() {
            model
                .index
                .pq
                .iter()
                .map(|&pos| QuantityOfInterest::BusVoltage(model.case.buses[pos].id))
                .collect()
        } else {
            self.quantities.clone()
        };
        if qs.is_empty() {
            return Err(PipelineError::Validation("case has no PQ buses".into()));
        }
        for q in &qs {
            q.check(&model.case)
                .map_err(|e| PipelineError::Validation(e.to_string()))?;
        }
        let needs_curvature = self.models.contains(&ModelSpec::Pade) || self.importance.is_some();
        if needs_curvature {
            if let Some(q) = qs.iter().find(|&&q| target_coordinate(model, q).is_err()) {
                return Err(PipelineError::Validation(format!(
                    "Padé models and importance sampling need PQ-bus voltage quantities, got `{q}`"
                )));
            }
        }
        Ok(qs)
    }

    fn needs_curvature(&self) -> bool {
        self.models.contains(&ModelSpec::Pade)
            || self.importance.is_some()
            || self.pade_weights && self.has_rational()
    }

    fn has_rational(&self) -> bool {
        self.models.iter().any(|m| m.rational())
    }
}

/// Reads a case from a file, or falls back to a bundled case of that name.
pub fn load_case(spec: &str) -> Result<NetworkCase, PipelineError> {
    let path = Path::new(spec);
    if path.is_file() {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            NetworkCase::from_json(&text)
        } else {
            parse_matpower(&text)
        };
        return parsed.map_err(|e| PipelineError::Validation(format!("{spec}: {e}")));
    }
    fixtures::by_name(spec)
        .ok_or_else(|| PipelineError::Validation(format!("no case file or bundled case `{spec}`")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub base: u64,
    pub train: u64,
    pub test: u64,
}

impl Seeds {
    pub fn from_base(base: u64) -> Self {
        Self {
            base,
            train: derive_seed(base, 1),
            test: derive_seed(base, 2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerInfo {
    /// `uniform` or `importance`.
    pub mode: String,
    /// Orthonormal directions the importance share was drawn along.
    pub directions: Option<Vec<Vec<f64>>>,
    /// Clipped subspace draws.
    pub clipped: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleCounts {
    pub train_rows: usize,
    pub train_skipped: usize,
    pub test_rows: usize,
    pub test_skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: RunConfig,
    pub config_hash: String,
    pub seeds: Seeds,
    pub quantities: Vec<QuantityOfInterest>,
    pub nominal_iterations: usize,
    pub sampler: SamplerInfo,
    pub samples: SampleCounts,
    pub stages: Vec<String>,
    pub outputs: Vec<String>,
}

/// A model with the report of the fit that produced it; constructed models
/// carry no report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub spec: ModelSpec,
    #[serde(flatten)]
    pub model: ApproximationModel,
    pub report: Option<FitReport>,
}

#[derive(Debug, Clone, Serialize)]
struct Stamped<'a, T: Serialize> {
    config_hash: &'a str,
    seed: u64,
    #[serde(flatten)]
    body: T,
}

#[derive(Debug, Clone, Serialize)]
pub struct QuantitySpectrum {
    pub target: QuantityOfInterest,
    #[serde(flatten)]
    pub summary: SpectralSummary,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub manifest: Manifest,
    pub models: Vec<ModelRecord>,
    pub errors: Vec<ErrorRow>,
    pub train: SampleSet,
    pub test: SampleSet,
    /// `(stage, seconds)` in execution order.
    pub timings: Vec<(String, f64)>,
}

struct Curvature {
    pade: Vec<Option<PadeModel>>,
    lambdas: Vec<DMatrix<f64>>,
    spectra: Vec<QuantitySpectrum>,
}

/// The `k` leading left singular vectors of the side-by-side stack of the
/// (Frobenius-normalized) second-order matrices.
pub fn shared_directions(lambdas: &[DMatrix<f64>], k: usize) -> DMatrix<f64> {
    let n = lambdas[0].nrows();
    let mut stacked = DMatrix::zeros(n, n * lambdas.len());
    for (i, l) in lambdas.iter().enumerate() {
        let norm = l.norm();
        let scale = if norm > 0.0 { 1.0 / norm } else { 0.0 };
        stacked.columns_mut(i * n, n).copy_from(&(l * scale));
    }
    let svd = stacked.svd(true, false);
    let u = svd.u.expect("requested U");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let k = k.min(order.len());
    let mut out = DMatrix::from_fn(n, k, |r, c| u[(r, order[c])]);
    // fix the sign so the largest entry of each column is positive
    for mut col in out.column_iter_mut() {
        let imax = col.iamax();
        if col[imax] < 0.0 {
            col.neg_mut();
        }
    }
    out
}

struct Writer<'a> {
    dir: &'a Path,
    hash: String,
    seed: u64,
    outputs: Vec<String>,
}

impl Writer<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        let p = self.path(name);
        fs::write(&p, bytes).map_err(io_err(&p))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, body: T) -> Result<(), PipelineError> {
        let stamped = Stamped {
            config_hash: &self.hash,
            seed: self.seed,
            body,
        };
        let mut text = serde_json::to_string_pretty(&stamped).expect("serializes");
        text.push('\n');
        self.put(name, text.as_bytes())
    }

    fn preamble(&self) -> Vec<String> {
        vec![format!("config_hash={} seed={}", self.hash, self.seed)]
    }
}

#[derive(Serialize)]
struct Listed<'a, T: Serialize> {
    #[serde(rename = "entries")]
    items: &'a [T],
}

/// Runs every stage and writes the artifacts to `config.output_dir`.
/// Files of stages that completed are kept when a later stage fails.
pub fn run_pipeline(config: &RunConfig) -> Result<RunReport, PipelineError> {
    config.validate()?;
    let case = load_case(&config.case)?;
    let model = PowerFlowModel::new(&case).map_err(|e| PipelineError::Validation(e.to_string()))?;
    let quantities = config.resolve_quantities(&model)?;
    let n = model.dim();
    let range = OperatingRange::uniform(n, config.range.lower, config.range.upper);
    range
        .validate(n)
        .map_err(|e| PipelineError::Validation(e.to_string()))?;

    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let seeds = Seeds::from_base(config.seed);
    let mut out = Writer {
        dir,
        hash: config.hash(),
        seed: config.seed,
        outputs: Vec::new(),
    };
    let mut timings = Vec::new();
    let mut stages = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut Vec<(String, f64)>, stages: &mut Vec<String>| {
        timings.push((name.to_string(), clock.elapsed().as_secs_f64()));
        stages.push(name.to_string());
        clock = Instant::now();
    };

    // nominal operating point
    let nominal = model
        .solve(&model.nominal_injections())
        .map_err(PipelineError::stage("power_flow"))?;
    if !nominal.converged {
        return Err(PipelineError::Stage {
            stage: "power_flow",
            message: "nominal operating point did not converge".into(),
        });
    }
    let x0 = model.nominal_injections().to_vec();
    lap("power_flow", &mut timings, &mut stages);

    // second-order analysis
    let curvature = if config.needs_curvature() {
        let per_q: Vec<_> = quantities
            .par_iter()
            .map(|&q| {
                if target_coordinate(&model, q).is_err() {
                    return Ok(None);
                }
                let (f0, grad, so) = nominal_expansion(&model, q)?;
                let summary = dominant_subspace(&so.lambda, RANK_FRACTION)?;
                let pade = pade11(&x0, f0, &grad, &so.lambda).ok();
                Ok(Some((
                    pade,
                    so.lambda,
                    QuantitySpectrum { target: q, summary },
                )))
            })
            .collect::<Result<_, SensitivityError>>()
            .map_err(PipelineError::stage("sensitivity"))?;
        let mut c = Curvature {
            pade: Vec::new(),
            lambdas: Vec::new(),
            spectra: Vec::new(),
        };
        for entry in per_q {
            match entry {
                Some((p, l, s)) => {
                    c.pade.push(p);
                    c.lambdas.push(l);
                    c.spectra.push(s);
                }
                None => c.pade.push(None),
            }
        }
        out.json("sensitivity.json", Listed { items: &c.spectra })?;
        lap("sensitivity", &mut timings, &mut stages);
        Some(c)
    } else {
        None
    };

    // sampling
    let (sampler, info) = match (&config.importance, &curvature) {
        (Some(imp), Some(c)) => {
            let dirs = shared_directions(&c.lambdas, imp.k);
            let directions = dirs
                .column_iter()
                .map(|col| col.iter().copied().collect())
                .collect();
            let s = Sampler::subspace(x0.clone(), range.clone(), imp.clone(), &dirs)
                .map_err(PipelineError::stage("sampling"))?;
            (
                s,
                SamplerInfo {
                    mode: "importance".into(),
                    directions: Some(directions),
                    clipped: None,
                },
            )
        }
        _ => (
            Sampler::uniform(x0.clone(), range.clone()),
            SamplerInfo {
                mode: "uniform".into(),
                directions: None,
                clipped: None,
            },
        ),
    };
    let train_xs = sampler.draw(config.samples, seeds.train);
    let test_xs = Sampler::uniform(x0.clone(), range.clone()).draw(config.test_samples, seeds.test);
    let train = evaluate_samples(&model, &train_xs, &quantities, seeds.train)
        .map_err(PipelineError::stage("sampling"))?;
    let test = evaluate_samples(&model, &test_xs, &quantities, seeds.test)
        .map_err(PipelineError::stage("sampling"))?;
    let labels: Vec<String> = (0..n)
        .map(|k| model.index.injection_label(&model.case, k))
        .collect();
    for (name, set) in [("train_samples.csv", &train), ("test_samples.csv", &test)] {
        let mut buf = Vec::new();
        set.write_csv(&labels, &out.preamble(), &mut buf)
            .expect("in-memory write");
        out.put(name, &buf)?;
    }
    lap("sampling", &mut timings, &mut stages);

    // fits
    let no_pade = vec![None; quantities.len()];
    let pade = curvature.as_ref().map_or(&no_pade, |c| &c.pade);
    let models = fit_models(
        &train,
        &config.models,
        &config.rational_options(),
        config.pade_weights,
        pade,
    )
    .map_err(PipelineError::stage("fit"))?;
    out.json("models.json", Listed { items: &models })?;
    lap("fit", &mut timings, &mut stages);

    // held-out evaluation
    let plain: Vec<ApproximationModel> = models.iter().map(|r| r.model.clone()).collect();
    let errors = error_table(&plain, &test);
    let mut buf = Vec::new();
    for line in out.preamble() {
        buf.extend_from_slice(format!("# {line}\n").as_bytes());
    }
    write_csv(&errors, &mut buf).map_err(PipelineError::stage("evaluate"))?;
    out.put("errors.csv", &buf)?;
    lap("evaluate", &mut timings, &mut stages);

    out.outputs.push("manifest.json".into());
    let manifest = Manifest {
        config: config.clone(),
        config_hash: out.hash.clone(),
        seeds,
        quantities,
        nominal_iterations: nominal.iterations,
        sampler: SamplerInfo {
            clipped: sampler
                .importance
                .as_ref()
                .map(|_| clipped_count(&train_xs, &range, &x0)),
            ..info
        },
        samples: SampleCounts {
            train_rows: train.len(),
            train_skipped: train.skipped,
            test_rows: test.len(),
            test_skipped: test.skipped,
        },
        stages,
        outputs: out.outputs.clone(),
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("serializes");
    text.push('\n');
    let p = out.path("manifest.json");
    fs::write(&p, text).map_err(io_err(&p))?;

    let t: serde_json::Map<String, serde_json::Value> = timings
        .iter()
        .map(|(k, v)| (k.clone(), serde_json::json!(v)))
        .collect();
    let p = out.path("timings.json");
    fs::write(
        &p,
        serde_json::to_string_pretty(&t).expect("serializes") + "\n",
    )
    .map_err(io_err(&p))?;

    Ok(RunReport {
        manifest,
        models,
        errors,
        train,
        test,
        timings,
    })
}

/// Fits every `spec` to every quantity of `train`, in quantity-major
/// order. `pade[q]` is the Padé model of quantity `q`, if any; Padé specs
/// without one are skipped, and with `pade_weights` the rational fits start
/// from its denominators.
pub fn fit_models(
    train: &SampleSet,
    specs: &[ModelSpec],
    opts: &RationalOptions,
    pade_weights: bool,
    pade: &[Option<PadeModel>],
) -> Result<Vec<ModelRecord>, RegressError> {
    assert_eq!(
        pade.len(),
        train.quantities.len(),
        "one Padé slot per quantity"
    );
    let jobs: Vec<(usize, ModelSpec)> = (0..train.quantities.len())
        .flat_map(|qi| specs.iter().map(move |&m| (qi, m)))
        .collect();
    let records: Vec<Option<ModelRecord>> = jobs
        .par_iter()
        .map(|&(qi, spec)| {
            let q = train.quantities[qi];
            let fit = match spec {
                ModelSpec::Pade => {
                    return Ok(pade[qi].as_ref().map(|p| ModelRecord {
                        spec,
                        model: p.to_approximation(q),
                        report: None,
                    }))
                }
                ModelSpec::La => fit_la(train, q)?,
                ModelSpec::ClaOver | ModelSpec::ClaUnder => fit_cla(train, q, spec.direction())?,
                _ => {
                    let mut opts = opts.clone();
                    if pade_weights {
                        opts.w0 = pade[qi].as_ref().and_then(|p| pade_weights_for(p, train));
                    }
                    fit_rational(train, q, spec.direction(), &opts)?
                }
            };
            let Fit { model, report } = fit;
            Ok(Some(ModelRecord {
                spec,
                model,
                report: Some(report),
            }))
        })
        .collect::<Result<_, RegressError>>()?;
    Ok(records.into_iter().flatten().collect())
}

/// Padé models at the nominal point for the quantities that support a
/// second-order expansion; `None` for the rest.
pub fn pade_models(
    model: &PowerFlowModel,
    quantities: &[QuantityOfInterest],
) -> Result<Vec<Option<PadeModel>>, SensitivityError> {
    let x0 = model.nominal_injections().to_vec();
    quantities
        .par_iter()
        .map(|&q| {
            if target_coordinate(model, q).is_err() {
                return Ok(None);
            }
            let (f0, grad, so) = nominal_expansion(model, q)?;
            Ok(pade11(&x0, f0, &grad, &so.lambda).ok())
        })
        .collect()
}

/// Rows lying on the boundary of the range box in some coordinate.
fn clipped_count(xs: &[Vec<f64>], range: &OperatingRange, nominal: &[f64]) -> usize {
    let (lo, hi) = range.bounds(nominal);
    xs.iter()
        .filter(|x| {
            x.iter()
                .zip(lo.iter().zip(&hi))
                .any(|(v, (l, h))| l != h && (v == l || v == h))
        })
        .count()
}

/// `1/(1 + b1ᵀz)` from the Padé denominator, if positive on every row.
pub fn pade_weights_for(pade: &PadeModel, samples: &SampleSet) -> Option<Vec<f64>> {
    samples
        .xs
        .iter()
        .map(|x| {
            pade.denominator(x)
                .ok()
                .filter(|d| *d > 0.0)
                .map(|d| 1.0 / d)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(dir: &Path) -> RunConfig {
        RunConfig {
            samples: 60,
            test_samples: 40,
            seed: 11,
            output_dir: dir.to_path_buf(),
            ..Default::default()
        }
    }

    fn scratch(name: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("adaptive-pf-{name}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&d);
        d
    }

    #[test]
    fn zero_samples_fail_validation_before_any_output() {
        let dir = scratch("zero");
        let cfg = RunConfig {
            samples: 0,
            ..small(&dir)
        };
        assert!(matches!(
            run_pipeline(&cfg),
            Err(PipelineError::Validation(_))
        ));
        assert!(!dir.exists());
    }

    #[test]
    fn unknown_fields_and_models_are_rejected() {
        assert!(RunConfig::from_json(r#"{"sample_count": 3}"#).is_err());
        assert!(RunConfig::from_json(r#"{"models": ["cla"]}"#).is_err());
        let cfg = RunConfig::from_json(r#"{"models": ["cra-under"], "seed": 4}"#).unwrap();
        assert_eq!(cfg.models, vec![ModelSpec::CraUnder]);
        assert_eq!(cfg.samples, 500);
    }

    #[test]
    fn unsupported_curvature_target_is_a_validation_error() {
        let dir = scratch("slack");
        let cfg = RunConfig {
            quantities: vec![QuantityOfInterest::SlackActive],
            ..small(&dir)
        };
        assert!(matches!(
            run_pipeline(&cfg),
            Err(PipelineError::Validation(_))
        ));
        let cfg = RunConfig {
            models: vec![ModelSpec::La, ModelSpec::ClaOver],
            ..cfg
        };
        let rep = run_pipeline(&cfg).unwrap();
        assert_eq!(rep.models.len(), 2);
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let b = RunConfig {
            seed: 1,
            ..a.clone()
        };
        assert_eq!(a.hash(), RunConfig::default().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn writes_every_artifact() {
        let dir = scratch("full");
        let rep = run_pipeline(&small(&dir)).unwrap();
        for f in [
            "sensitivity.json",
            "train_samples.csv",
            "test_samples.csv",
            "models.json",
            "errors.csv",
            "manifest.json",
            "timings.json",
        ] {
            assert!(dir.join(f).is_file(), "{f}");
        }
        assert_eq!(
            rep.manifest.stages,
            ["power_flow", "sensitivity", "sampling", "fit", "evaluate"]
        );
        // five PQ voltages, seven model families
        assert_eq!(rep.models.len(), 35);
        assert_eq!(rep.errors.len(), 35);
        let errors = fs::read_to_string(dir.join("errors.csv")).unwrap();
        assert!(errors.starts_with(&format!("# config_hash={}", rep.manifest.config_hash)));
        let manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest, rep.manifest);
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn shared_directions_are_orthonormal() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 1.0, 0.0]));
        let b = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 0.0, 0.5]));
        let d = shared_directions(&[a, b], 2);
        let g = d.transpose() * &d;
        assert!((g - DMatrix::identity(2, 2)).amax() < 1e-12);
        assert!((d[(0, 0)].abs() - 1.0).abs() < 1e-12);
    }
}
