//! Mapping between physical records and network tensors.
//!
//! Input channels: the four wheel irregularities scaled by their training
//! standard deviation (no shift, so a flat track encodes as zero), the 13
//! z-scored parameters held constant in time, and a time ramp from 0 to 1.
//! Outputs are the 14 z-scored displacement channels.

use mbdno_core::dataset::{ChannelStats, NormStats};
use mbdno_core::{TrajectoryRecord, N_VARIED, VARIED_PARAMETER_NAMES};
use mbdno_tensor::Tensor;
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{shape, Result};

pub const IRREGULARITY_CHANNELS: usize = 4;
pub const INPUT_CHANNELS: usize = IRREGULARITY_CHANNELS + N_VARIED + 1;
pub const TIME_CHANNEL: usize = INPUT_CHANNELS - 1;

/// Channel manifest stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputLayout {
    pub channels: Vec<String>,
    pub irregularity: String,
    pub params: String,
    pub time: String,
}

impl Default for InputLayout {
    fn default() -> Self {
        let mut channels: Vec<String> = (1..=IRREGULARITY_CHANNELS).map(|j| format!("Irre{j}")).collect();
        channels.extend(VARIED_PARAMETER_NAMES.iter().map(|s| s.to_string()));
        channels.push("time".into());
        Self {
            channels,
            irregularity: "value / std".into(),
            params: "(value - mean) / std, broadcast".into(),
            time: "i / (T - 1)".into(),
        }
    }
}

fn irregularity_scale(s: &ChannelStats, j: usize) -> f64 {
    s.scale(j)
}

/// `[18 × T]` input of one pair from raw irregularity `[4 × T]` and the
/// varied parameter vector.
pub fn encode_raw(irregularity: ArrayView2<f64>, params: &[f64], norm: &NormStats) -> Result<Array2<f64>> {
    if irregularity.nrows() != IRREGULARITY_CHANNELS {
        return Err(shape(format!("{} irregularity channels, expected 4", irregularity.nrows())));
    }
    if params.len() != N_VARIED {
        return Err(shape(format!("{} parameters, expected {N_VARIED}", params.len())));
    }
    let t = irregularity.ncols();
    if t < 2 {
        return Err(shape("time grid needs at least 2 samples"));
    }
    let mut out = Array2::zeros((INPUT_CHANNELS, t));
    for j in 0..IRREGULARITY_CHANNELS {
        let s = irregularity_scale(&norm.irregularity, j);
        for i in 0..t {
            out[(j, i)] = irregularity[(j, i)] / s;
        }
    }
    for (p, &value) in params.iter().enumerate() {
        let z = norm.params.normalize(p, value);
        out.row_mut(IRREGULARITY_CHANNELS + p).fill(z);
    }
    for i in 0..t {
        out[(TIME_CHANNEL, i)] = i as f64 / (t - 1) as f64;
    }
    Ok(out)
}

pub fn encode_record(record: &TrajectoryRecord, norm: &NormStats) -> Result<Array2<f64>> {
    encode_raw(record.irregularity.view(), &record.params, norm)
}

/// Inverse of [`encode_raw`]: irregularity `[4 × T]` and parameters.
pub fn decode_input(input: ArrayView2<f64>, norm: &NormStats) -> Result<(Array2<f64>, Vec<f64>)> {
    if input.nrows() != INPUT_CHANNELS {
        return Err(shape(format!("{} input channels, expected {INPUT_CHANNELS}", input.nrows())));
    }
    let mut irre = Array2::zeros((IRREGULARITY_CHANNELS, input.ncols()));
    for j in 0..IRREGULARITY_CHANNELS {
        let s = irregularity_scale(&norm.irregularity, j);
        for i in 0..input.ncols() {
            irre[(j, i)] = input[(j, i)] * s;
        }
    }
    let params = (0..N_VARIED)
        .map(|p| norm.params.denormalize(p, input[(IRREGULARITY_CHANNELS + p, 0)]))
        .collect();
    Ok((irre, params))
}

/// Stacks per-pair `[C × T]` matrices into a `[B, C, T]` tensor.
pub fn stack(items: &[Array2<f64>]) -> Result<Tensor> {
    let Some(first) = items.first() else {
        return Err(shape("cannot stack an empty batch"));
    };
    let (c, t) = first.dim();
    let mut data = Vec::with_capacity(items.len() * c * t);
    for m in items {
        if m.dim() != (c, t) {
            return Err(shape(format!("batch entries {:?} and {:?} differ", (c, t), m.dim())));
        }
        data.extend(m.iter());
    }
    Ok(Tensor::new(vec![items.len(), c, t], data)?)
}

/// Splits a `[B, C, T]` tensor into per-pair matrices.
pub fn unstack(t: &Tensor) -> Result<Vec<Array2<f64>>> {
    let [b, c, n] = t.shape()[..] else {
        return Err(shape(format!("expected rank 3, got {:?}", t.shape())));
    };
    Ok((0..b)
        .map(|i| Array2::from_shape_vec((c, n), t.data()[i * c * n..(i + 1) * c * n].to_vec()).expect("slice size"))
        .collect())
}

pub fn encode_batch(records: &[&TrajectoryRecord], norm: &NormStats) -> Result<Tensor> {
    let items = records.iter().map(|r| encode_record(r, norm)).collect::<Result<Vec<_>>>()?;
    stack(&items)
}

/// Normalized network target `[14 × T]`.
pub fn encode_target(record: &TrajectoryRecord, norm: &NormStats) -> Array2<f64> {
    norm.x.normalize_matrix(&record.x)
}

/// Physical displacements from a normalized network output.
pub fn decode_output(output: &Array2<f64>, norm: &NormStats) -> Array2<f64> {
    norm.x.denormalize_matrix(output)
}
