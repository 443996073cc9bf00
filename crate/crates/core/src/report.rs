//! Held-out error tables.

use std::io;

use serde::Serialize;

use crate::pfcore::QuantityOfInterest;
use crate::regress::{abs_errors, ApproximationModel, Direction, Kind};
use crate::sampling::{violation_rate, SampleSet};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorRow {
    pub quantity: QuantityOfInterest,
    pub model: String,
    pub mean_abs_err: f64,
    pub max_abs_err: f64,
    /// Mean-error reduction in percent against the affine model of the same
    /// direction; empty for the affine models themselves.
    pub reduction_pct: Option<f64>,
    /// Share of test samples on the wrong side, conservative models only.
    pub violation_rate: Option<f64>,
}

/// Short name: `LA`, `CLA-over`, `RA`, `CRA-under`, `Pade`.
pub fn label(model: &ApproximationModel) -> String {
    let base = match (model.kind, model.direction) {
        (Kind::Pade, _) => return "Pade".into(),
        (Kind::Linear, Direction::None) => "LA",
        (Kind::Linear, _) => "CLA",
        (Kind::Rational, Direction::None) => "RA",
        (Kind::Rational, _) => "CRA",
    };
    match model.direction {
        Direction::None => base.into(),
        Direction::Over => format!("{base}-over"),
        Direction::Under => format!("{base}-under"),
    }
}

/// One row per model, in input order, evaluated on `test`.
pub fn error_table(models: &[ApproximationModel], test: &SampleSet) -> Vec<ErrorRow> {
    let errors: Vec<(f64, f64)> = models
        .iter()
        .map(|m| {
            let betas = test
                .betas_for(m.quantity)
                .unwrap_or_else(|| panic!("test set lacks {}", m.quantity));
            abs_errors(m, &test.xs, betas)
        })
        .collect();
    models
        .iter()
        .zip(&errors)
        .map(|(m, &(mean, max))| {
            let baseline = (m.kind != Kind::Linear)
                .then(|| {
                    models.iter().zip(&errors).find(|(b, _)| {
                        b.kind == Kind::Linear
                            && b.quantity == m.quantity
                            && b.direction == m.direction
                    })
                })
                .flatten()
                .map(|(_, &(bm, _))| bm);
            let reduction_pct = baseline.and_then(|b| (b > 0.0).then(|| 100.0 * (b - mean) / b));
            ErrorRow {
                quantity: m.quantity,
                model: label(m),
                mean_abs_err: mean,
                max_abs_err: max,
                reduction_pct,
                violation_rate: (m.direction != Direction::None).then(|| violation_rate(m, test)),
            }
        })
        .collect()
}

pub fn write_csv<W: io::Write>(rows: &[ErrorRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "quantity",
        "model",
        "mean_abs_err",
        "max_abs_err",
        "reduction_pct",
        "violation_rate",
    ])?;
    for r in rows {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([
            r.quantity.to_string(),
            r.model.clone(),
            r.mean_abs_err.to_string(),
            r.max_abs_err.to_string(),
            opt(r.reduction_pct),
            opt(r.violation_rate),
        ])?;
    }
    w.flush()?;
    Ok(())
}
