#![allow(dead_code)]

use mbdno_core::dataset::{compute_weight_factors, generate_dataset, Dataset, GenerationConfig, NormStats, ParamSampler, WeightFactors};
use mbdno_core::{IntegratorConfig, PsdModel, VtcdParams};
use mbdno_operator::{FnoConfig, LossConfig, LossMode};
use mbdno_pipeline::TrainConfig;

/// 0.1 s windows, 100 output samples.
pub fn short_window() -> IntegratorConfig {
    IntegratorConfig {
        duration: 0.1,
        ..Default::default()
    }
}

pub fn tiny_dataset(n_train: usize, n_val: usize, seed: u64) -> Dataset {
    let sampler = ParamSampler::new(VtcdParams::nominal(), 0.8, 1.2).unwrap();
    let gen = GenerationConfig {
        n_train,
        n_val,
        master_seed: seed,
        ..Default::default()
    };
    generate_dataset(&sampler, &PsdModel::placeholder(), &short_window(), &gen).unwrap()
}

pub fn norm(ds: &Dataset) -> NormStats {
    NormStats::compute(ds.train()).unwrap()
}

pub fn weights(ds: &Dataset) -> WeightFactors {
    compute_weight_factors(ds, 0.02, 7, false).unwrap()
}

pub fn tiny_model() -> FnoConfig {
    FnoConfig {
        width: 8,
        depth: 2,
        modes: 8,
        projection_width: 16,
        ..Default::default()
    }
}

pub fn loss(mode: LossMode, eta: f64) -> LossConfig {
    LossConfig {
        mode,
        eta,
        ..Default::default()
    }
}

pub fn train_cfg(epochs: usize, batch_size: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size,
        seed: 3,
        ..Default::default()
    }
}
