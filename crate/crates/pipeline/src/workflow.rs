//! Stage functions behind the command-line subcommands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use mbdno_core::dataset::{
    compute_weight_factors, generate_dataset, read_container, simulate_pair, write_container, Dataset, NormStats,
    Sidecar,
};
use mbdno_core::TrajectoryRecord;

use crate::config::RunConfig;
use crate::error::Result;

/// Statistics and weight factors live next to the container as
/// `<container>.json`.
pub fn sidecar_path(container: &Path) -> PathBuf {
    let mut s = container.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Generates the configured dataset, writes the container and a sidecar
/// with training-split statistics, and returns the wall-clock seconds.
pub fn generate(run: &RunConfig, out: &Path) -> Result<(Dataset, f64)> {
    let start = Instant::now();
    let ds = generate_dataset(&run.sampler()?, &run.psd.load()?, &run.integrator, &run.generation)?;
    let seconds = start.elapsed().as_secs_f64();
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(crate::error::io_err(dir))?;
    }
    write_container(out, &ds)?;
    let sidecar = Sidecar {
        norm: NormStats::compute(ds.train())?,
        weights: None,
    };
    sidecar.save(sidecar_path(out))?;
    Ok((ds, seconds))
}

/// Container plus sidecar; statistics are recomputed when the sidecar is
/// missing.
pub fn load_dataset(path: &Path) -> Result<(Dataset, Sidecar)> {
    let ds = read_container(path)?;
    let side = sidecar_path(path);
    let sidecar = if side.exists() {
        Sidecar::load(side)?
    } else {
        Sidecar {
            norm: NormStats::compute(ds.train())?,
            weights: None,
        }
    };
    Ok((ds, sidecar))
}

/// Computes weight factors for every pair and stores them in the sidecar.
pub fn compute_weights(run: &RunConfig, path: &Path) -> Result<Sidecar> {
    let (ds, mut sidecar) = load_dataset(path)?;
    sidecar.weights = Some(compute_weight_factors(&ds, run.loss.r, run.weights.seed, run.weights.noiseless)?);
    sidecar.save(sidecar_path(path))?;
    Ok(sidecar)
}

/// One trajectory at the nominal parameters scaled by `multipliers`
/// (all ones when empty) with irregularity seed `seed`.
pub fn simulate(run: &RunConfig, multipliers: &[f64], seed: u64) -> Result<TrajectoryRecord> {
    let base = run.system.load()?;
    let mut varied = base.varied_vector().to_vec();
    if !multipliers.is_empty() {
        if multipliers.len() != varied.len() {
            return Err(crate::error::config(format!(
                "{} multipliers for {} varied parameters",
                multipliers.len(),
                varied.len()
            )));
        }
        for (v, m) in varied.iter_mut().zip(multipliers) {
            *v *= m;
        }
    }
    Ok(simulate_pair(&base, &varied, &run.psd.load()?, run.generation.profile_dx, seed, &run.integrator)?)
}
