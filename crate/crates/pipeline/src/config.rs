//! Declarative run configuration: one TOML file with a section per stage,
//! patched by `section.key=value` overrides from the command line.

use std::path::{Path, PathBuf};

use mbdno_core::dataset::{GenerationConfig, ParamSampler};
use mbdno_core::{IntegratorConfig, PsdModel, VtcdParams};
use mbdno_operator::{FnoConfig, LossConfig};
use serde::{Deserialize, Serialize};

use crate::error::{config, io_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Which epoch's parameters are kept as `best.ntar`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Lowest mean of the solution, first- and second-derivative errors.
    #[default]
    Mean,
    /// Lowest solution error.
    Solution,
    Last,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    /// Multiplier applied every `decay_every` epochs.
    pub decay: f64,
    pub decay_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Data-parallel gradient workers; results are reduced in batch order.
    pub workers: usize,
    pub selection: Selection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            decay: 0.75,
            decay_every: 30,
            epochs: 100,
            batch_size: 8,
            adam: AdamConfig::default(),
            seed: 0,
            workers: 1,
            selection: Selection::Mean,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config(format!("learning rate {} must be positive", self.lr)));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(config(format!("decay {} must lie in (0, 1]", self.decay)));
        }
        if self.decay_every == 0 || self.batch_size == 0 || self.workers == 0 {
            return Err(config("decay_every, batch_size and workers must be positive"));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(config("Adam needs beta1, beta2 in [0, 1) and eps > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsdConfig {
    /// Tabulated spectrum; the shipped placeholder when absent.
    pub file: Option<PathBuf>,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl Default for PsdConfig {
    fn default() -> Self {
        Self {
            file: None,
            lambda_min: 1.0,
            lambda_max: 120.0,
        }
    }
}

impl PsdConfig {
    pub fn load(&self) -> Result<PsdModel> {
        Ok(match &self.file {
            Some(path) => PsdModel::load(path, self.lambda_min, self.lambda_max)?,
            None => PsdModel::placeholder().with_band(self.lambda_min, self.lambda_max)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    /// Nominal parameter file; the shipped set when absent.
    pub params: Option<PathBuf>,
}

impl SystemConfig {
    pub fn load(&self) -> Result<VtcdParams> {
        Ok(match &self.params {
            Some(path) => VtcdParams::load(path)?,
            None => VtcdParams::nominal(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightConfig {
    pub seed: u64,
    /// Evaluate the exact records instead of noisy copies.
    pub noiseless: bool,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            noiseless: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub repeats: usize,
    pub batch: usize,
    /// Irregularity seed of the benchmarked window.
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            repeats: 7,
            batch: 64,
            seed: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: PathBuf,
    /// Checkpoints, histories and report files.
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data/dataset.mbds"),
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub system: SystemConfig,
    pub psd: PsdConfig,
    pub integrator: IntegratorConfig,
    pub generation: GenerationConfig,
    pub weights: WeightConfig,
    pub model: FnoConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub bench: BenchConfig,
}

impl RunConfig {
    /// Reads `path` (defaults when `None`), applies `overrides` and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(io_err(p))?;
                toml::from_str::<toml::Table>(&text).map_err(|e| config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.integrator.validate()?;
        self.model.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        if self.bench.repeats == 0 || self.bench.batch == 0 {
            return Err(config("bench repeats and batch must be positive"));
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn sampler(&self) -> Result<ParamSampler> {
        Ok(ParamSampler::new(
            self.system.load()?,
            self.generation.range_low,
            self.generation.range_high,
        )?)
    }
}

/// Sets `a.b.c = value` in `table`. The value is read as a TOML literal and
/// falls back to a bare string, so `paths.out_dir=runs/x` needs no quotes.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| config(format!("override {spec:?} is not key=value")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config(format!("bad override key {key:?}")));
    }
    let (last, sections) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for s in sections {
        cur = cur
            .entry(s.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| config(format!("override {key:?}: {s} is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Learning rate of `epoch`: `lr · decay^⌊epoch / decay_every⌋`.
pub fn lr_schedule(cfg: &TrainConfig, epoch: usize) -> f64 {
    cfg.lr * cfg.decay.powi((epoch / cfg.decay_every) as i32)
}
