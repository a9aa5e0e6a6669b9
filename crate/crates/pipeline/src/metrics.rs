//! Relative L2 errors of displacements and their derivatives.

use std::time::Instant;

use mbdno_core::TrajectoryRecord;
use mbdno_operator::encode::{decode_output, encode_record, stack, unstack};
use mbdno_operator::losses::numerical_derivative;
use mbdno_operator::Checkpoint;
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::config::Selection;
use crate::error::{config, Result};

/// Per-channel ‖pred − truth‖₂ / ‖truth‖₂ in percent, accumulated over the
/// concatenation of every added record.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeL2 {
    diff2: Vec<f64>,
    ref2: Vec<f64>,
}

impl RelativeL2 {
    pub fn new(channels: usize) -> Self {
        Self {
            diff2: vec![0.0; channels],
            ref2: vec![0.0; channels],
        }
    }

    pub fn add(&mut self, pred: ArrayView2<f64>, truth: ArrayView2<f64>) -> Result<()> {
        if pred.dim() != truth.dim() || pred.nrows() != self.diff2.len() {
            return Err(config(format!(
                "prediction {:?} vs truth {:?} for {} channels",
                pred.dim(),
                truth.dim(),
                self.diff2.len()
            )));
        }
        for (c, (p, t)) in pred.rows().into_iter().zip(truth.rows()).enumerate() {
            for (a, b) in p.iter().zip(t) {
                self.diff2[c] += (a - b) * (a - b);
                self.ref2[c] += b * b;
            }
        }
        Ok(())
    }

    pub fn finish(&self) -> ErrorRow {
        let per_channel: Vec<f64> = self
            .diff2
            .iter()
            .zip(&self.ref2)
            .map(|(&d, &r)| match (d, r) {
                (d, r) if r > 0.0 => 100.0 * (d / r).sqrt(),
                (d, _) if d == 0.0 => 0.0,
                _ => f64::INFINITY,
            })
            .collect();
        let mean = per_channel.iter().sum::<f64>() / per_channel.len().max(1) as f64;
        ErrorRow { per_channel, mean }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    /// Percent.
    pub per_channel: Vec<f64>,
    /// Unweighted channel mean, percent.
    pub mean: f64,
}

/// Errors of displacements (x), first (v) and second (a) derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorTriple {
    pub x: ErrorRow,
    pub v: ErrorRow,
    pub a: ErrorRow,
}

impl ErrorTriple {
    pub fn means(&self) -> [f64; 3] {
        [self.x.mean, self.v.mean, self.a.mean]
    }

    /// Lower is better; `Last` ranks every epoch equally.
    pub fn score(&self, selection: Selection) -> f64 {
        match selection {
            Selection::Mean => self.means().iter().sum::<f64>() / 3.0,
            Selection::Solution => self.x.mean,
            Selection::Last => 0.0,
        }
    }
}

/// Scores physical displacement predictions against the records. Predicted
/// derivatives come from finite differences on the output grid; the truth is
/// the integrator's stored V and A.
pub fn error_triple(preds: &[Array2<f64>], records: &[&TrajectoryRecord]) -> Result<ErrorTriple> {
    if records.is_empty() {
        return Err(config("cannot score an empty split"));
    }
    if preds.len() != records.len() {
        return Err(config(format!("{} predictions for {} records", preds.len(), records.len())));
    }
    let ch = records[0].x.nrows();
    let (mut ex, mut ev, mut ea) = (RelativeL2::new(ch), RelativeL2::new(ch), RelativeL2::new(ch));
    for (p, r) in preds.iter().zip(records) {
        ex.add(p.view(), r.x.view())?;
        ev.add(numerical_derivative(p.view(), r.dt_out, 1)?.view(), r.v.view())?;
        ea.add(numerical_derivative(p.view(), r.dt_out, 2)?.view(), r.a.view())?;
    }
    Ok(ErrorTriple {
        x: ex.finish(),
        v: ev.finish(),
        a: ea.finish(),
    })
}

/// Physical displacement predictions, `batch` records per forward pass.
pub fn predict_records(ck: &Checkpoint, records: &[&TrajectoryRecord], batch: usize) -> Result<Vec<Array2<f64>>> {
    let mut out = Vec::with_capacity(records.len());
    for chunk in records.chunks(batch.max(1)) {
        let inputs = chunk
            .iter()
            .map(|r| encode_record(r, &ck.norm))
            .collect::<mbdno_operator::Result<Vec<_>>>()?;
        let y = ck.model.predict(&stack(&inputs)?)?;
        for m in unstack(&y)? {
            out.push(decode_output(&m, &ck.norm));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Timings {
    pub dataset_generation_s: Option<f64>,
    pub training_s: Option<f64>,
    /// Whole split, including encoding and decoding.
    pub inference_s: Option<f64>,
    pub inference_per_window_s: Option<f64>,
    pub reference_integration_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub pairs: usize,
    pub channels: Vec<String>,
    pub errors: ErrorTriple,
    pub timings: Timings,
}

/// Scores a checkpoint on `records` and returns the report with the
/// physical predictions.
pub fn evaluate(
    ck: &Checkpoint,
    split: &str,
    records: &[&TrajectoryRecord],
    channels: &[String],
    batch: usize,
) -> Result<(EvalReport, Vec<Array2<f64>>)> {
    if records.is_empty() {
        return Err(config(format!("split {split:?} is empty")));
    }
    let start = Instant::now();
    let preds = predict_records(ck, records, batch)?;
    let elapsed = start.elapsed().as_secs_f64();
    let errors = error_triple(&preds, records)?;
    let report = EvalReport {
        split: split.to_string(),
        pairs: records.len(),
        channels: channels.to_vec(),
        errors,
        timings: Timings {
            inference_s: Some(elapsed),
            inference_per_window_s: Some(elapsed / records.len() as f64),
            ..Default::default()
        },
    };
    Ok((report, preds))
}
