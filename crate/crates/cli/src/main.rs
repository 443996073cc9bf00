//! `adaptive-pf`: command-line access to the power flow, sensitivity,
//! sampling, fitting and OPF stages.
//!
//! Exit status: 0 on success, 2 for invalid input or configuration, 3 when
//! a numerical stage fails.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adaptive_pf::netmodel::{to_matpower, NetworkCase};
use adaptive_pf::opf::{
    self, compare_variants, comparison_table, grid_search, DecisionSpace, OpfOptions, Variant,
};
use adaptive_pf::pfcore::{PowerFlowModel, QuantityOfInterest};
use adaptive_pf::pipeline::{
    self, fit_models, load_case, pade_models, ModelRecord, ModelSpec, RangeSpec, RunConfig,
};
use adaptive_pf::regress::RationalOptions;
use adaptive_pf::report::{error_table, write_csv};
use adaptive_pf::sampling::{
    evaluate_samples, ImportanceConfig, OperatingRange, Placement, SampleSet, Sampler,
};
use adaptive_pf::sensitivity::{dominant_subspace, nominal_expansion, RANK_FRACTION};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug)]
enum Failure {
    Invalid(String),
    Numerical(String),
}

impl Failure {
    fn invalid(e: impl std::fmt::Display) -> Self {
        Self::Invalid(e.to_string())
    }

    fn numerical(e: impl std::fmt::Display) -> Self {
        Self::Numerical(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

#[derive(Parser)]
#[command(
    name = "adaptive-pf",
    version,
    about = "Sample-based power flow approximations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a case and print it as canonical JSON or MATPOWER text.
    Parse {
        case: String,
        #[arg(long, value_enum, default_value_t = CaseFormat::Json)]
        format: CaseFormat,
    },
    /// Solve the power flow at the scheduled injections.
    Pf { case: String },
    /// Spectrum of the second-order sensitivity of a voltage magnitude.
    Sens {
        case: String,
        #[arg(long)]
        target: QuantityOfInterest,
        /// Relative singular value cut for the dominant directions.
        #[arg(long, default_value_t = RANK_FRACTION)]
        threshold: f64,
    },
    /// Draw and solve injection samples.
    Sample(SampleArgs),
    /// Fit models to a sample table.
    Fit(FitArgs),
    /// Error table of fitted models on a sample table.
    Eval {
        case: String,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the OPF variants and re-evaluate their set points.
    Opf(OpfArgs),
    /// Run the whole pipeline.
    Run(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum CaseFormat {
    Json,
    Matpower,
}

#[derive(Clone, Copy, ValueEnum)]
enum TableFormat {
    Json,
    Csv,
}

#[derive(Args)]
struct RangeArgs {
    /// Lower multiplicative factor on the nominal injections.
    #[arg(long, default_value_t = 0.7, allow_negative_numbers = true)]
    lower: f64,
    #[arg(long, default_value_t = 1.3, allow_negative_numbers = true)]
    upper: f64,
}

#[derive(Args)]
struct ImportanceArgs {
    /// Draw part of every batch along the dominant directions.
    #[arg(long)]
    importance: bool,
    #[arg(long, value_parser = parse_placement)]
    placement: Option<Placement>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    subspace_fraction: Option<f64>,
    #[arg(long)]
    step_scale: Option<f64>,
}

impl ImportanceArgs {
    fn config(&self) -> Option<ImportanceConfig> {
        if !self.importance {
            return None;
        }
        let d = ImportanceConfig::default();
        Some(ImportanceConfig {
            subspace_fraction: self.subspace_fraction.unwrap_or(d.subspace_fraction),
            placement: self.placement.unwrap_or(d.placement),
            k: self.k.unwrap_or(d.k),
            step_scale: self.step_scale.unwrap_or(d.step_scale),
        })
    }
}

fn parse_placement(s: &str) -> Result<Placement, String> {
    match s.to_ascii_lowercase().as_str() {
        "extreme" => Ok(Placement::Extreme),
        "central" => Ok(Placement::Central),
        "mixed" => Ok(Placement::Mixed),
        _ => Err(format!("unknown placement `{s}`")),
    }
}

#[derive(Args)]
struct SampleArgs {
    case: String,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    samples: usize,
    /// Quantity to record, e.g. `v:3`; repeatable. Defaults to every PQ voltage.
    #[arg(long = "quantity")]
    quantities: Vec<QuantityOfInterest>,
    #[command(flatten)]
    range: RangeArgs,
    #[command(flatten)]
    importance: ImportanceArgs,
    /// Sample table; the manifest goes next to it with a `.json` extension.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    case: String,
    #[arg(long)]
    samples: PathBuf,
    /// Model family, e.g. `cra-under`; repeatable. Defaults to all.
    #[arg(long = "model")]
    models: Vec<ModelSpec>,
    #[arg(long, default_value_t = RationalOptions::default().epsilon)]
    epsilon: f64,
    #[arg(long, default_value_t = RationalOptions::default().tol)]
    tol: f64,
    #[arg(long, default_value_t = RationalOptions::default().max_iter)]
    max_iter: usize,
    /// Start rational reweighting from uniform weights.
    #[arg(long)]
    no_pade_weights: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OpfArgs {
    case: String,
    /// Variant to solve; repeatable. Defaults to all.
    #[arg(long = "variant")]
    variants: Vec<Variant>,
    #[arg(long, default_value_t = 400)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Cost segments per generator.
    #[arg(long, default_value_t = 8)]
    segments: usize,
    /// Spacing of the reference grid search; costs are compared to the
    /// cheapest variant when absent.
    #[arg(long)]
    grid_step: Option<f64>,
    #[arg(long, value_enum, default_value_t = TableFormat::Json)]
    format: TableFormat,
}

#[derive(Args)]
struct RunArgs {
    /// JSON configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    case: Option<String>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    test_samples: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    lower: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    upper: Option<f64>,
    #[arg(long = "quantity")]
    quantities: Vec<QuantityOfInterest>,
    #[arg(long = "model")]
    models: Vec<ModelSpec>,
    #[command(flatten)]
    importance: ImportanceArgs,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Outcome {
    match out {
        Some(p) => {
            fs::write(p, bytes).map_err(|e| Failure::Invalid(format!("{}: {e}", p.display())))
        }
        None => io::stdout().write_all(bytes).map_err(Failure::invalid),
    }
}

fn json_line<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("serializes");
    s.push('\n');
    s.into_bytes()
}

fn model_of(case: &str) -> Result<(NetworkCase, PowerFlowModel), Failure> {
    let c = load_case(case).map_err(Failure::invalid)?;
    let m = PowerFlowModel::new(&c).map_err(Failure::invalid)?;
    Ok((c, m))
}

fn default_quantities(
    model: &PowerFlowModel,
    given: &[QuantityOfInterest],
) -> Vec<QuantityOfInterest> {
    if !given.is_empty() {
        return given.to_vec();
    }
    model
        .index
        .pq
        .iter()
        .map(|&p| QuantityOfInterest::BusVoltage(model.case.buses[p].id))
        .collect()
}

fn labels(model: &PowerFlowModel) -> Vec<String> {
    (0..model.dim())
        .map(|k| model.index.injection_label(&model.case, k))
        .collect()
}

fn read_samples(model: &PowerFlowModel, path: &Path) -> Result<SampleSet, Failure> {
    let text = read(path)?;
    let center = model.nominal_injections().to_vec();
    let (set, _) = SampleSet::read_csv(text.as_bytes(), center, 0).map_err(Failure::invalid)?;
    Ok(set)
}

fn parse_cmd(case: &str, format: CaseFormat) -> Outcome {
    let c = load_case(case).map_err(Failure::invalid)?;
    c.validate().map_err(Failure::invalid)?;
    match format {
        CaseFormat::Json => emit(None, format!("{}\n", c.to_json()).as_bytes()),
        CaseFormat::Matpower => emit(None, to_matpower(&c).as_bytes()),
    }
}

fn pf_cmd(case: &str) -> Outcome {
    let (c, model) = model_of(case)?;
    let sol = model
        .solve(&model.nominal_injections())
        .map_err(Failure::numerical)?;
    if !sol.converged {
        return Err(Failure::Numerical(format!(
            "no convergence after {} iterations (residual {:e})",
            sol.iterations, sol.residual_inf
        )));
    }
    emit(None, format!("{}\n", sol.to_json(&c)).as_bytes())
}

fn sens_cmd(case: &str, target: QuantityOfInterest, threshold: f64) -> Outcome {
    #[derive(Serialize)]
    struct Out<T: Serialize> {
        target: QuantityOfInterest,
        #[serde(flatten)]
        summary: T,
    }
    let (_, model) = model_of(case)?;
    let (_, _, so) = nominal_expansion(&model, target).map_err(|e| match e {
        adaptive_pf::sensitivity::SensitivityError::UnsupportedTarget(_) => Failure::invalid(e),
        _ => Failure::numerical(e),
    })?;
    let summary = dominant_subspace(&so.lambda, threshold).map_err(Failure::numerical)?;
    emit(None, &json_line(&Out { target, summary }))
}

fn sample_cmd(a: &SampleArgs) -> Outcome {
    #[derive(Serialize)]
    struct Manifest<'a> {
        seed: u64,
        range: &'a OperatingRange,
        importance: Option<ImportanceConfig>,
        rows: usize,
        skipped: usize,
    }
    let (_, model) = model_of(&a.case)?;
    if a.samples == 0 {
        return Err(Failure::Invalid("sample count must be positive".into()));
    }
    let quantities = default_quantities(&model, &a.quantities);
    let x0 = model.nominal_injections().to_vec();
    let range = OperatingRange::uniform(x0.len(), a.range.lower, a.range.upper);
    range.validate(x0.len()).map_err(Failure::invalid)?;
    let importance = a.importance.config();
    let sampler = match &importance {
        None => Sampler::uniform(x0.clone(), range.clone()),
        Some(cfg) => {
            cfg.validate().map_err(Failure::invalid)?;
            let lambdas = quantities
                .iter()
                .map(|&q| nominal_expansion(&model, q).map(|(_, _, so)| so.lambda))
                .collect::<Result<Vec<_>, _>>()
                .map_err(Failure::invalid)?;
            let dirs = pipeline::shared_directions(&lambdas, cfg.k);
            Sampler::subspace(x0.clone(), range.clone(), cfg.clone(), &dirs)
                .map_err(Failure::invalid)?
        }
    };
    let xs = sampler.draw(a.samples, a.seed);
    let set = evaluate_samples(&model, &xs, &quantities, a.seed).map_err(|e| match e {
        adaptive_pf::sampling::SamplingError::AllSamplesFailed(_) => Failure::numerical(e),
        _ => Failure::invalid(e),
    })?;
    let mut buf = Vec::new();
    set.write_csv(&labels(&model), &[format!("seed={}", a.seed)], &mut buf)
        .map_err(Failure::invalid)?;
    emit(Some(&a.out), &buf)?;
    let manifest = Manifest {
        seed: a.seed,
        range: &range,
        importance,
        rows: set.len(),
        skipped: set.skipped,
    };
    emit(Some(&a.out.with_extension("json")), &json_line(&manifest))
}

fn fit_cmd(a: &FitArgs) -> Outcome {
    let (_, model) = model_of(&a.case)?;
    let train = read_samples(&model, &a.samples)?;
    let specs = if a.models.is_empty() {
        ModelSpec::ALL.to_vec()
    } else {
        a.models.clone()
    };
    let opts = RationalOptions {
        epsilon: a.epsilon,
        tol: a.tol,
        max_iter: a.max_iter,
        w0: None,
    };
    if !(opts.epsilon > 0.0) || opts.max_iter == 0 {
        return Err(Failure::Invalid(
            "epsilon and max_iter must be positive".into(),
        ));
    }
    let needs_pade = specs.contains(&ModelSpec::Pade) || !a.no_pade_weights;
    let pade = if needs_pade {
        pade_models(&model, &train.quantities).map_err(Failure::numerical)?
    } else {
        vec![None; train.quantities.len()]
    };
    let records =
        fit_models(&train, &specs, &opts, !a.no_pade_weights, &pade).map_err(Failure::numerical)?;
    emit(a.out.as_deref(), &json_line(&records))
}

fn eval_cmd(case: &str, models: &Path, samples: &Path, out: Option<&Path>) -> Outcome {
    let (_, model) = model_of(case)?;
    let test = read_samples(&model, samples)?;
    let records: Vec<ModelRecord> =
        serde_json::from_str(&read(models)?).map_err(Failure::invalid)?;
    let plain: Vec<_> = records.into_iter().map(|r| r.model).collect();
    for m in &plain {
        if test.betas_for(m.quantity).is_none() {
            return Err(Failure::Invalid(format!(
                "sample table has no column `{}`",
                m.quantity
            )));
        }
        if m.x0.len() != test.dim() {
            return Err(Failure::Invalid(
                "model and sample dimensions differ".into(),
            ));
        }
    }
    let rows = error_table(&plain, &test);
    let mut buf = Vec::new();
    write_csv(&rows, &mut buf).map_err(Failure::invalid)?;
    emit(out, &buf)
}

fn opf_cmd(a: &OpfArgs) -> Outcome {
    let (_, model) = model_of(&a.case)?;
    let variants = if a.variants.is_empty() {
        Variant::ALL.to_vec()
    } else {
        a.variants.clone()
    };
    let opts = OpfOptions {
        samples: a.samples,
        seed: a.seed,
        segments: a.segments,
        ..Default::default()
    };
    let results = compare_variants(&model, &variants, &opts).map_err(|e| match e {
        opf::OpfError::ReferenceGenerators(_) | opf::OpfError::UnknownVariant(_) => {
            Failure::invalid(e)
        }
        _ => Failure::numerical(e),
    })?;
    let grid = match a.grid_step {
        Some(step) if step > 0.0 => {
            let space = DecisionSpace::new(&model).map_err(Failure::invalid)?;
            Some(
                grid_search(&model, &space, step)
                    .ok_or_else(|| Failure::Numerical("no feasible grid point".into()))?,
            )
        }
        Some(_) => return Err(Failure::Invalid("grid step must be positive".into())),
        None => None,
    };
    let rows = comparison_table(&results, grid.as_ref());
    match a.format {
        TableFormat::Json => emit(None, &json_line(&rows)),
        TableFormat::Csv => {
            let mut buf = Vec::new();
            opf::write_comparison_csv(&rows, &mut buf).map_err(Failure::invalid)?;
            emit(None, &buf)
        }
    }
}

fn run_cmd(a: &RunArgs) -> Outcome {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::from_json(&read(p)?).map_err(Failure::invalid)?,
        None => RunConfig::default(),
    };
    cfg.seed = a.seed;
    if let Some(v) = &a.case {
        cfg.case = v.clone();
    }
    if let Some(v) = a.samples {
        cfg.samples = v;
    }
    if let Some(v) = a.test_samples {
        cfg.test_samples = v;
    }
    cfg.range = RangeSpec {
        lower: a.lower.unwrap_or(cfg.range.lower),
        upper: a.upper.unwrap_or(cfg.range.upper),
    };
    if !a.quantities.is_empty() {
        cfg.quantities = a.quantities.clone();
    }
    if !a.models.is_empty() {
        cfg.models = a.models.clone();
    }
    if let Some(imp) = a.importance.config() {
        cfg.importance = Some(imp);
    }
    if let Some(v) = a.epsilon {
        cfg.epsilon = v;
    }
    if let Some(v) = a.tol {
        cfg.tol = v;
    }
    if let Some(v) = a.max_iter {
        cfg.max_iter = v;
    }
    if let Some(v) = &a.output_dir {
        cfg.output_dir = v.clone();
    }
    let report = pipeline::run_pipeline(&cfg).map_err(|e| match e {
        pipeline::PipelineError::Stage { .. } => Failure::numerical(e),
        _ => Failure::invalid(e),
    })?;
    let summary = format!(
        "{} models, {} training rows, outputs in {}\n",
        report.models.len(),
        report.train.len(),
        cfg.output_dir.display()
    );
    emit(None, summary.as_bytes())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Parse { case, format } => parse_cmd(case, *format),
        Command::Pf { case } => pf_cmd(case),
        Command::Sens {
            case,
            target,
            threshold,
        } => sens_cmd(case, *target, *threshold),
        Command::Sample(a) => sample_cmd(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Eval {
            case,
            models,
            samples,
            out,
        } => eval_cmd(case, models, samples, out.as_deref()),
        Command::Opf(a) => opf_cmd(a),
        Command::Run(a) => run_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(3)
        }
    }
}
