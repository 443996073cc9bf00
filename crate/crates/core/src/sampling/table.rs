//! Plain-text form of a [`SampleSet`]: one CSV row per sample, input
//! columns first, then one column per quantity. Lines starting with `#`
//! are comments.

use std::io;

use super::{SampleSet, SamplingError};
use crate::pfcore::QuantityOfInterest;

impl SampleSet {
    /// Writes the rows under `labels` for the input columns. `preamble`
    /// lines are emitted as `#` comments before the header.
    pub fn write_csv<W: io::Write>(
        &self,
        labels: &[String],
        preamble: &[String],
        mut out: W,
    ) -> io::Result<()> {
        assert_eq!(labels.len(), self.dim(), "one label per input column");
        for line in preamble {
            writeln!(out, "# {line}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        let header = labels
            .iter()
            .cloned()
            .chain(self.quantities.iter().map(|q| q.to_string()));
        w.write_record(header)?;
        for (m, x) in self.xs.iter().enumerate() {
            let row = x.iter().chain(self.betas.iter().map(|b| &b[m]));
            w.write_record(row.map(|v| v.to_string()))?;
        }
        w.flush()
    }

    /// Reads a table written by [`SampleSet::write_csv`]. Columns whose
    /// header parses as a quantity are outputs, all others inputs. Returns
    /// the set and the input labels.
    pub fn read_csv<R: io::Read>(
        input: R,
        center: Vec<f64>,
        seed: u64,
    ) -> Result<(SampleSet, Vec<String>), SamplingError> {
        let bad = |e: csv::Error| SamplingError::Table(e.to_string());
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(input);
        let header: Vec<String> = r
            .headers()
            .map_err(bad)?
            .iter()
            .map(str::to_string)
            .collect();
        let mut labels = Vec::new();
        let mut quantities = Vec::new();
        let mut is_output = Vec::new();
        for h in &header {
            match h.parse::<QuantityOfInterest>() {
                Ok(q) => {
                    quantities.push(q);
                    is_output.push(true);
                }
                Err(_) => {
                    labels.push(h.clone());
                    is_output.push(false);
                }
            }
        }
        if labels.len() != center.len() {
            return Err(SamplingError::Table(format!(
                "{} input columns, expected {}",
                labels.len(),
                center.len()
            )));
        }
        if quantities.is_empty() {
            return Err(SamplingError::NoQuantities);
        }
        let mut set = SampleSet {
            center,
            xs: Vec::new(),
            quantities,
            betas: Vec::new(),
            skipped: 0,
            seed,
        };
        set.betas = vec![Vec::new(); set.quantities.len()];
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(bad)?;
            let mut x = Vec::with_capacity(labels.len());
            let mut q = 0;
            for (field, &out) in rec.iter().zip(&is_output) {
                let v: f64 = field.parse().map_err(|_| {
                    SamplingError::Table(format!("row {}: `{field}` is not a number", line + 1))
                })?;
                if out {
                    set.betas[q].push(v);
                    q += 1;
                } else {
                    x.push(v);
                }
            }
            set.xs.push(x);
        }
        Ok((set, labels))
    }
}
