//! Wall-clock comparison of network inference against time integration of
//! the same window.

use std::time::Instant;

use mbdno_core::excitation::{synthesize, ProfileExcitation, WheelExcitation};
use mbdno_core::{integrate, CodesSystem, IntegratorConfig, PsdModel, Scheme, VtcdParams};
use mbdno_operator::encode::{decode_output, encode_raw, stack, unstack};
use mbdno_operator::Checkpoint;
use serde::{Deserialize, Serialize};

use crate::config::BenchConfig;
use crate::error::Result;

/// Field names and units are part of the output contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub window_s: f64,
    pub samples: usize,
    pub integration_dt: f64,
    pub rail_modes: usize,
    pub model_width: usize,
    pub model_depth: usize,
    pub model_modes: usize,
    pub repeats: usize,
    /// Median over repeats, seconds.
    pub integration_s: f64,
    /// Encode, forward and decode of one window, median seconds.
    pub inference_s: f64,
    pub batch: usize,
    /// Batched forward pass divided by the batch size, median seconds.
    pub inference_batched_per_window_s: f64,
    /// `integration_s / inference_s`.
    pub speedup: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times `f` once to warm caches, then `repeats` times.
fn time_median<T>(repeats: usize, mut f: impl FnMut() -> Result<T>) -> Result<f64> {
    f()?;
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        std::hint::black_box(f()?);
        samples.push(start.elapsed().as_secs_f64());
    }
    Ok(median(samples))
}

/// The integration uses Zhai's scheme at the configured step with the
/// per-step residual audit switched off; system assembly, irregularity
/// synthesis and the static initial state are excluded from both timings.
pub fn benchmark(
    ck: &Checkpoint,
    params: &VtcdParams,
    psd: &PsdModel,
    integrator: &IntegratorConfig,
    profile_dx: f64,
    bench: &BenchConfig,
) -> Result<BenchReport> {
    let cfg = IntegratorConfig {
        scheme: Scheme::Zhai,
        check_residual: false,
        ..integrator.clone()
    };
    let mut system = CodesSystem::from_params(params)?;
    let profile = synthesize(psd, params.beam.length, profile_dx, bench.seed)?;
    let excitation = ProfileExcitation::new(profile, system.wheel_origin, system.speed, cfg.duration)?;
    system.set_static_initial(&excitation.irregularity(0.0))?;
    let reference = integrate(&system, &excitation, &cfg)?;
    let integration_s = time_median(bench.repeats, || Ok(integrate(&system, &excitation, &cfg)?))?;

    let varied = params.varied_vector();
    let infer_one = || -> Result<_> {
        let x = encode_raw(reference.irregularity.view(), &varied, &ck.norm)?;
        let y = ck.model.predict(&stack(&[x])?)?;
        Ok(decode_output(&unstack(&y)?[0], &ck.norm))
    };
    let inference_s = time_median(bench.repeats, infer_one)?;

    let one = encode_raw(reference.irregularity.view(), &varied, &ck.norm)?;
    let batch = stack(&vec![one; bench.batch])?;
    let batched = time_median(bench.repeats, || Ok(ck.model.predict(&batch)?))?;

    Ok(BenchReport {
        window_s: cfg.duration,
        samples: reference.len(),
        integration_dt: cfg.dt,
        rail_modes: system.mode_count(),
        model_width: ck.model.config.width,
        model_depth: ck.model.config.depth,
        model_modes: ck.model.config.modes,
        repeats: bench.repeats,
        integration_s,
        inference_s,
        batch: bench.batch,
        inference_batched_per_window_s: batched / bench.batch as f64,
        speedup: integration_s / inference_s,
    })
}
