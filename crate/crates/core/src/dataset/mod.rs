//! Parameter sampling, trajectory generation and the binary dataset container.

mod container;
mod stats;

pub use container::{read_container, write_container, CONTAINER_MAGIC, CONTAINER_VERSION};
pub use stats::{
    compute_weight_factors, perturbed_residual_max, ChannelStats, NormStats, Sidecar, WeightFactors,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::excitation::{synthesize, ProfileExcitation, PsdModel};
use crate::integrate::{integrate, IntegratorConfig, TrajectoryRecord};
use crate::params::{VtcdParams, N_VARIED, VARIED_PARAMETER_NAMES};
use crate::system::{CodesSystem, OUTPUT_LABELS};


/// Records must satisfy `max‖r‖∞ ≤ RESIDUAL_TOLERANCE · max‖F‖∞`.
pub const RESIDUAL_TOLERANCE: f64 = 1e-4;

/// Independent uniform draws of the varied parameters around a nominal set.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSampler {
    pub nominal: VtcdParams,
    pub low: f64,
    pub high: f64,
}

impl ParamSampler {
    pub fn new(nominal: VtcdParams, low: f64, high: f64) -> Result<Self> {
        if !(low > 0.0 && high >= low && high.is_finite()) {
            return Err(invalid(format!("range multipliers [{low}, {high}] must satisfy 0 < low <= high")));
        }
        Ok(Self { nominal, low, high })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> [f64; N_VARIED] {
        let base = self.nominal.varied_vector();
        base.map(|v| {
            let m = if self.high > self.low { rng.random_range(self.low..self.high) } else { self.low };
            v * m
        })
    }
}

/// Generator settings that are not already part of the integrator config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub master_seed: u64,
    pub range_low: f64,
    pub range_high: f64,
    /// Profile sample spacing, m.
    pub profile_dx: f64,
    pub max_retries: usize,
    pub workers: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            n_train: 500,
            n_val: 100,
            master_seed: 20240521,
            range_low: 0.8,
            range_high: 1.2,
            profile_dx: 0.25,
            max_retries: 3,
            workers: 1,
        }
    }
}

/// One stored data pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPair {
    /// Irregularity seed actually used.
    pub seed: u64,
    pub record: TrajectoryRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub n_train: usize,
    pub n_val: usize,
    pub n_time: usize,
    pub dt_out: f64,
    pub duration: f64,
    pub master_seed: u64,
    pub channel_names: Vec<String>,
    pub param_names: Vec<String>,
    /// Parameters the varied vectors are applied to, as TOML.
    pub base_params: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    /// Training pairs first, then validation pairs.
    pub pairs: Vec<DataPair>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn train(&self) -> &[DataPair] {
        &self.pairs[..self.header.n_train]
    }

    pub fn val(&self) -> &[DataPair] {
        &self.pairs[self.header.n_train..]
    }

    pub fn base_params(&self) -> Result<VtcdParams> {
        VtcdParams::from_toml_str(&self.header.base_params)
    }

    /// Full parameter set of pair `k`.
    pub fn pair_params(&self, k: usize) -> Result<VtcdParams> {
        self.base_params()?.with_varied(&self.pairs[k].record.params)
    }
}

/// RNG for attempt `attempt` of pair `index`.
pub fn pair_rng(master_seed: u64, index: usize, attempt: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(((attempt as u64) << 32) | index as u64);
    rng
}

/// Integrates one pair with the given varied parameters and irregularity seed.
pub fn simulate_pair(
    base: &VtcdParams,
    varied: &[f64],
    psd: &PsdModel,
    profile_dx: f64,
    seed: u64,
    config: &IntegratorConfig,
) -> Result<TrajectoryRecord> {
    let params = base.with_varied(varied)?;
    let mut system = CodesSystem::from_params(&params)?;
    let profile = synthesize(psd, params.beam.length, profile_dx, seed)?;
    let excitation = ProfileExcitation::new(profile, system.wheel_origin, system.speed, config.duration)?;
    let irre0 = crate::excitation::WheelExcitation::irregularity(&excitation, 0.0);
    system.set_static_initial(&irre0)?;
    let mut record = integrate(&system, &excitation, config)?;
    record.params = varied.to_vec();
    Ok(record)
}

fn generate_pair(
    index: usize,
    sampler: &ParamSampler,
    psd: &PsdModel,
    gen: &GenerationConfig,
    config: &IntegratorConfig,
) -> Result<DataPair> {
    let mut last = None;
    for attempt in 0..=gen.max_retries {
        let mut rng = pair_rng(gen.master_seed, index, attempt);
        let varied = sampler.sample(&mut rng);
        let seed: u64 = rng.random();
        let outcome = simulate_pair(&sampler.nominal, &varied, psd, gen.profile_dx, seed, config).and_then(|r| {
            if !r.is_finite() {
                Err(Error::NonFinite(format!("record of pair {index}")))
            } else if !(r.residual_ratio <= RESIDUAL_TOLERANCE) {
                Err(Error::NonFinite(format!(
                    "pair {index} residual ratio {:.3e} exceeds {RESIDUAL_TOLERANCE:e}",
                    r.residual_ratio
                )))
            } else {
                Ok(r)
            }
        });
        match outcome {
            Ok(record) => return Ok(DataPair { seed, record }),
            Err(e) if e.is_numerical() => {
                log::warn!("pair {index} attempt {attempt} aborted: {e}; regenerating");
                last = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Generates `n_train + n_val` pairs; reproducible from the master seed.
pub fn generate_dataset(
    sampler: &ParamSampler,
    psd: &PsdModel,
    config: &IntegratorConfig,
    gen: &GenerationConfig,
) -> Result<Dataset> {
    let n = gen.n_train + gen.n_val;
    if n == 0 {
        return Err(invalid("dataset needs at least one pair"));
    }
    config.validate()?;
    let workers = gen.workers.clamp(1, n);
    let mut slots: Vec<Option<Result<DataPair>>> = (0..n).map(|_| None).collect();
    if workers == 1 {
        for (i, slot) in slots.iter_mut().enumerate() {
            *slot = Some(generate_pair(i, sampler, psd, gen, config));
            if (i + 1) % 50 == 0 {
                log::info!("generated {}/{n} pairs", i + 1);
            }
        }
    } else {
        // strided assignment; results land by index so order never depends on timing
        let chunks: Vec<Vec<(usize, Result<DataPair>)>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    s.spawn(move || {
                        (w..n)
                            .step_by(workers)
                            .map(|i| (i, generate_pair(i, sampler, psd, gen, config)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        for (i, r) in chunks.into_iter().flatten() {
            slots[i] = Some(r);
        }
    }
    let pairs = slots
        .into_iter()
        .map(|s| s.expect("every slot filled"))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        header: DatasetHeader {
            n_train: gen.n_train,
            n_val: gen.n_val,
            n_time: config.n_out(),
            dt_out: config.dt_out(),
            duration: config.duration,
            master_seed: gen.master_seed,
            channel_names: OUTPUT_LABELS.iter().map(|s| s.to_string()).collect(),
            param_names: VARIED_PARAMETER_NAMES.iter().map(|s| s.to_string()).collect(),
            base_params: sampler.nominal.to_toml_string(),
        },
        pairs,
    })
}
