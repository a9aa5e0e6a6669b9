//! Normalization statistics and ODE magnitude weight factors.

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DataPair, Dataset};
use crate::error::{invalid, Error, Result};
use crate::params::VARIED_PARAMETER_NAMES;
use crate::residual::EquationSet;
use crate::system::{vehicle_equations, OUTPUT_LABELS};

/// Per-channel z-score statistics. Channels with zero spread are flagged
/// constant and pass through unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub constant: Vec<bool>,
}

impl ChannelStats {
    /// Two-pass mean and population standard deviation; `rows(c)` yields
    /// every sample of channel `c`.
    fn compute<'a, I>(names: &[&str], rows: impl Fn(usize) -> I) -> Self
    where
        I: Iterator<Item = &'a f64>,
    {
        let mut stats = Self {
            names: names.iter().map(|s| s.to_string()).collect(),
            mean: Vec::new(),
            std: Vec::new(),
            constant: Vec::new(),
        };
        for (c, name) in names.iter().enumerate() {
            let (sum, n) = rows(c).fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
            let mean = sum / n.max(1) as f64;
            let var = rows(c).map(|v| (v - mean) * (v - mean)).sum::<f64>() / n.max(1) as f64;
            let std = var.sqrt();
            let constant = !(std > 0.0);
            if constant {
                log::warn!("channel {name} is constant over the training split; passing through");
            }
            stats.mean.push(mean);
            stats.std.push(std);
            stats.constant.push(constant);
        }
        stats
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn normalize(&self, c: usize, v: f64) -> f64 {
        if self.constant[c] {
            v
        } else {
            (v - self.mean[c]) / self.std[c]
        }
    }

    pub fn denormalize(&self, c: usize, z: f64) -> f64 {
        if self.constant[c] {
            z
        } else {
            z * self.std[c] + self.mean[c]
        }
    }

    /// Scale applied to derivatives of a normalized channel.
    pub fn scale(&self, c: usize) -> f64 {
        if self.constant[c] {
            1.0
        } else {
            self.std[c]
        }
    }

    /// Channel-major matrix `[channels × T]`.
    pub fn normalize_matrix(&self, m: &Array2<f64>) -> Array2<f64> {
        let mut out = m.clone();
        for (c, mut row) in out.rows_mut().into_iter().enumerate() {
            row.mapv_inplace(|v| self.normalize(c, v));
        }
        out
    }

    pub fn denormalize_matrix(&self, m: &Array2<f64>) -> Array2<f64> {
        let mut out = m.clone();
        for (c, mut row) in out.rows_mut().into_iter().enumerate() {
            row.mapv_inplace(|v| self.denormalize(c, v));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub irregularity: ChannelStats,
    pub params: ChannelStats,
    pub x: ChannelStats,
    pub v: ChannelStats,
    pub a: ChannelStats,
}

impl NormStats {
    /// Statistics over the given (training) pairs only.
    pub fn compute(train: &[DataPair]) -> Result<Self> {
        if train.is_empty() {
            return Err(invalid("normalization needs at least one training pair"));
        }
        let irre_names = ["Irre1", "Irre2", "Irre3", "Irre4"];
        Ok(Self {
            irregularity: ChannelStats::compute(&irre_names, |c| {
                train.iter().flat_map(move |p| p.record.irregularity.row(c).to_slice().unwrap().iter())
            }),
            params: ChannelStats::compute(&VARIED_PARAMETER_NAMES, |c| train.iter().map(move |p| &p.record.params[c])),
            x: ChannelStats::compute(&OUTPUT_LABELS, |c| {
                train.iter().flat_map(move |p| p.record.x.row(c).to_slice().unwrap().iter())
            }),
            v: ChannelStats::compute(&OUTPUT_LABELS, |c| {
                train.iter().flat_map(move |p| p.record.v.row(c).to_slice().unwrap().iter())
            }),
            a: ChannelStats::compute(&OUTPUT_LABELS, |c| {
                train.iter().flat_map(move |p| p.record.a.row(c).to_slice().unwrap().iter())
            }),
        })
    }
}

/// φ_k^i for every pair k and vehicle equation i.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightFactors {
    /// Noise variance as a fraction of each channel's variance.
    pub r: f64,
    pub seed: u64,
    pub equations: Vec<String>,
    /// `[pairs][equations]`.
    pub phi: Vec<Vec<f64>>,
}

fn row_variance(m: &Array2<f64>, c: usize) -> f64 {
    let row = m.row(c);
    let mean = row.sum() / row.len() as f64;
    row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / row.len() as f64
}

/// Adds independent zero-mean Gaussian noise of variance `r·Var(channel)` to
/// every channel of x, v and a (in that order, channel by channel, sample by
/// sample) and returns `max_t |residual_i|` per equation.
pub fn perturbed_residual_max(
    eqs: &EquationSet,
    x: &Array2<f64>,
    v: &Array2<f64>,
    a: &Array2<f64>,
    excitation: &Array2<f64>,
    r: f64,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let perturb = |m: &Array2<f64>, rng: &mut dyn rand::RngCore| {
        let mut out = m.clone();
        for c in 0..m.nrows() {
            let sd = (r * row_variance(m, c)).sqrt();
            for val in out.row_mut(c).iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *val += sd * z;
            }
        }
        out
    };
    let (xp, vp, ap) = if r > 0.0 {
        let xp = perturb(x, rng);
        let vp = perturb(v, rng);
        let ap = perturb(a, rng);
        (xp, vp, ap)
    } else {
        (x.clone(), v.clone(), a.clone())
    };
    let res = eqs.residual(xp.view(), vp.view(), ap.view(), excitation.view())?;
    Ok(EquationSet::max_abs(&res))
}

/// Weight factors for every pair. With `noiseless` the exact records are
/// evaluated instead, which measures model error rather than noise response
/// and may yield zeros.
pub fn compute_weight_factors(dataset: &Dataset, r: f64, seed: u64, noiseless: bool) -> Result<WeightFactors> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(invalid(format!("noise fraction r = {r} must be positive")));
    }
    let base = dataset.base_params()?;
    let mut phi = Vec::with_capacity(dataset.len());
    for (k, pair) in dataset.pairs.iter().enumerate() {
        let rec = &pair.record;
        let eqs = vehicle_equations(&base.with_varied(&rec.params)?)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let frac = if noiseless { 0.0 } else { r };
        let row = perturbed_residual_max(&eqs, &rec.x, &rec.v, &rec.a, &rec.irregularity, frac, &mut rng)?;
        if !noiseless && row.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::NonFinite(format!("weight factor of pair {k}: {row:?}")));
        }
        phi.push(row);
    }
    Ok(WeightFactors {
        r,
        seed,
        equations: OUTPUT_LABELS[..10].iter().map(|s| s.to_string()).collect(),
        phi,
    })
}

/// JSON file stored next to a container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub norm: NormStats,
    pub weights: Option<WeightFactors>,
}

impl Sidecar {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))
    }
}
