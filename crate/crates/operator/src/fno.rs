//! Fourier neural operator: pointwise lift, a stack of spectral blocks
//! `σ(W v + F⁻¹(R · F v))` and a two-layer pointwise projection. The final
//! block is left unactivated.

use std::path::Path;

use mbdno_core::dataset::NormStats;
use mbdno_tensor::{Activation, Archive, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encode::{InputLayout, INPUT_CHANNELS};
use crate::error::{config, shape, OperatorError, Result};

pub const OUTPUT_CHANNELS: usize = mbdno_core::system::OUTPUT_CHANNELS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FnoConfig {
    pub width: usize,
    pub depth: usize,
    pub modes: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Hidden width of the projection.
    pub projection_width: usize,
    #[serde(with = "activation_name")]
    pub activation: Activation,
}

impl Default for FnoConfig {
    fn default() -> Self {
        Self {
            width: 72,
            depth: 3,
            modes: 16,
            in_channels: INPUT_CHANNELS,
            out_channels: OUTPUT_CHANNELS,
            projection_width: 128,
            activation: Activation::Gelu,
        }
    }
}

mod activation_name {
    use mbdno_tensor::Activation;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(a: &Activation, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(a.name())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Activation, D::Error> {
        let name = String::deserialize(d)?;
        Activation::from_name(&name).ok_or_else(|| serde::de::Error::custom(format!("unknown activation {name}")))
    }
}

impl FnoConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("width", self.width),
            ("depth", self.depth),
            ("modes", self.modes),
            ("in_channels", self.in_channels),
            ("out_channels", self.out_channels),
            ("projection_width", self.projection_width),
        ] {
            if v == 0 {
                return Err(config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// Closed-form number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        let (w, m, h) = (self.width, self.modes, self.projection_width);
        let lift = self.in_channels * w + w;
        let block = 2 * m * w * w + w * w + w;
        let proj = h * w + h + self.out_channels * h + self.out_channels;
        lift + self.depth * block + proj
    }

    /// Shortest time grid the spectral blocks accept.
    pub fn min_time_len(&self) -> usize {
        (2 * self.modes).max(2)
    }
}

/// Windows per forward pass in [`FnoModel::predict`].
const PREDICT_CHUNK: usize = 4;

/// Trainable tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct FnoModel {
    pub config: FnoConfig,
    pub names: Vec<String>,
    pub params: Vec<Tensor>,
}

fn uniform(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
}

/// Parameter handles of a model registered on a tape.
#[derive(Debug, Clone)]
pub struct Bound {
    pub params: Vec<Var>,
}

impl FnoModel {
    /// Pointwise weights are He-uniform in the fan-in, biases `U(±1/√fan_in)`
    /// and spectral weights `U(0, 1)/width²` in both parts.
    pub fn init(config: FnoConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, m, h) = (config.width, config.modes, config.projection_width);
        let mut model = Self {
            config: config.clone(),
            names: Vec::new(),
            params: Vec::new(),
        };
        model.push_dense("lift", w, config.in_channels, &mut rng);
        let spectral_scale = 1.0 / (w * w) as f64;
        for b in 0..config.depth {
            model.names.push(format!("block{b}.spectral"));
            model
                .params
                .push(Tensor::from_fn(&[m, w, w, 2], |_| spectral_scale * rng.random::<f64>()));
            model.push_dense(&format!("block{b}"), w, w, &mut rng);
        }
        model.push_dense("proj.hidden", h, w, &mut rng);
        model.push_dense("proj.out", config.out_channels, h, &mut rng);
        Ok(model)
    }

    fn push_dense(&mut self, name: &str, out: usize, fan_in: usize, rng: &mut ChaCha8Rng) {
        self.names.push(format!("{name}.weight"));
        self.params.push(uniform(&[out, fan_in], (6.0 / fan_in as f64).sqrt(), rng));
        self.names.push(format!("{name}.bias"));
        self.params.push(uniform(&[out], 1.0 / (fan_in as f64).sqrt(), rng));
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            params: self.params.iter().map(|p| tape.leaf(p.clone())).collect(),
        }
    }

    /// Records the forward pass of `x: [B, in, T]` and returns `[B, out, T]`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let c = &self.config;
        let dims = tape.value(x).shape().to_vec();
        let [_, cin, t] = dims[..] else {
            return Err(shape(format!("input must be [batch, channels, time], got {dims:?}")));
        };
        if cin != c.in_channels {
            return Err(shape(format!("input has {cin} channels, model expects {}", c.in_channels)));
        }
        if t < c.min_time_len() {
            return Err(shape(format!("time length {t} below 2·modes = {}", 2 * c.modes)));
        }
        let p = &bound.params;
        let mut v = tape.linear(x, p[0], Some(p[1]))?;
        for b in 0..c.depth {
            let (r, w, bias) = (p[2 + 3 * b], p[3 + 3 * b], p[4 + 3 * b]);
            let s = tape.rfft(v, c.modes)?;
            let s = tape.mode_mul(s, r)?;
            let k = tape.irfft(s, t)?;
            let lin = tape.linear(v, w, Some(bias))?;
            v = tape.add(lin, k)?;
            if b + 1 < c.depth {
                v = tape.act(v, c.activation);
            }
        }
        let q = 2 + 3 * c.depth;
        let hid = tape.linear(v, p[q], Some(p[q + 1]))?;
        let hid = tape.act(hid, c.activation);
        let out = tape.linear(hid, p[q + 2], Some(p[q + 3]))?;
        if !tape.value(out).is_finite() {
            let bad = tape.value(out).data().iter().filter(|v| !v.is_finite()).count();
            return Err(OperatorError::NonFinite(format!("{bad} non-finite network outputs")));
        }
        Ok(out)
    }

    /// Forward pass without keeping gradients.
    /// Runs the batch in small chunks on one tape. Parameters are bound once
    /// and each chunk's intermediates are dropped before the next, which keeps
    /// the working set warm in cache.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.shape();
        if dims.len() != 3 || dims[0] <= PREDICT_CHUNK {
            let mut tape = Tape::new();
            let bound = self.bind(&mut tape);
            let xv = tape.leaf(x.clone());
            let out = self.forward(&mut tape, &bound, xv)?;
            return Ok(tape.value(out).clone());
        }
        let (batch, channels, samples) = (dims[0], dims[1], dims[2]);
        let per = channels * samples;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let mark = tape.len();
        let mut out = Vec::with_capacity(batch * self.config.out_channels * samples);
        for start in (0..batch).step_by(PREDICT_CHUNK) {
            let end = (start + PREDICT_CHUNK).min(batch);
            let chunk = Tensor::new(vec![end - start, channels, samples], x.data()[start * per..end * per].to_vec())?;
            let xv = tape.leaf(chunk);
            let y = self.forward(&mut tape, &bound, xv)?;
            out.extend_from_slice(tape.value(y).data());
            tape.truncate(mark);
        }
        Ok(Tensor::new(vec![batch, self.config.out_channels, samples], out)?)
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(Tensor::is_finite)
    }
}

/// Model plus everything needed to encode inputs and decode outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: FnoModel,
    pub norm: NormStats,
    pub layout: InputLayout,
    /// Free-form training state carried alongside the weights.
    pub extra: serde_json::Value,
    /// Additional named tensors such as optimizer moments.
    pub state: Vec<(String, Tensor)>,
}

const STATE_PREFIX: &str = "state/";

impl Checkpoint {
    pub fn new(model: FnoModel, norm: NormStats) -> Self {
        Self {
            model,
            norm,
            layout: InputLayout::default(),
            extra: serde_json::Value::Null,
            state: Vec::new(),
        }
    }

    pub fn to_archive(&self) -> Result<Archive> {
        let meta = serde_json::json!({
            "kind": "mbdno-fno",
            "config": self.model.config,
            "norm": self.norm,
            "layout": self.layout,
            "extra": self.extra,
        });
        let mut ar = Archive::new(meta);
        for (n, p) in self.model.names.iter().zip(&self.model.params) {
            ar.push(n.clone(), p.clone());
        }
        for (n, t) in &self.state {
            ar.push(format!("{STATE_PREFIX}{n}"), t.clone());
        }
        Ok(ar)
    }

    pub fn from_archive(ar: Archive) -> Result<Self> {
        let bad = |m: &str| OperatorError::Checkpoint(m.to_string());
        let meta = ar.metadata;
        if meta.get("kind").and_then(|k| k.as_str()) != Some("mbdno-fno") {
            return Err(bad("not an operator checkpoint"));
        }
        let field = |k: &str| meta.get(k).cloned().ok_or_else(|| bad(&format!("missing {k}")));
        let config: FnoConfig = serde_json::from_value(field("config")?).map_err(|e| bad(&e.to_string()))?;
        let norm: NormStats = serde_json::from_value(field("norm")?).map_err(|e| bad(&e.to_string()))?;
        let layout: InputLayout = serde_json::from_value(field("layout")?).map_err(|e| bad(&e.to_string()))?;
        let extra = meta.get("extra").cloned().unwrap_or(serde_json::Value::Null);
        let template = FnoModel::init(config.clone(), 0)?;
        let mut params = Vec::with_capacity(template.params.len());
        for (n, t) in template.names.iter().zip(&template.params) {
            let p = ar
                .entries
                .iter()
                .find(|(en, _)| en == n)
                .map(|(_, p)| p.clone())
                .ok_or_else(|| bad(&format!("missing tensor {n}")))?;
            if p.shape() != t.shape() {
                return Err(bad(&format!("{n} has shape {:?}, config implies {:?}", p.shape(), t.shape())));
            }
            params.push(p);
        }
        let state = ar
            .entries
            .into_iter()
            .filter_map(|(n, t)| n.strip_prefix(STATE_PREFIX).map(|s| (s.to_string(), t)))
            .collect();
        Ok(Self {
            model: FnoModel {
                config,
                names: template.names,
                params,
            },
            norm,
            layout,
            extra,
            state,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_archive()?.save(path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_archive(Archive::load(path)?)
    }
}
