//! Five-way comparison of loss formulations and depth on one dataset.

use std::path::Path;
use std::time::Instant;

use mbdno_core::dataset::{Dataset, NormStats, WeightFactors};
use mbdno_operator::{FnoConfig, LossConfig, LossMode};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{config, Result};
use crate::metrics::{evaluate, EvalReport};
use crate::report;
use crate::train::{plain_ode_eta, Trainer};

/// Depth of the deep variant of the direct-derivative algorithm.
pub const DEEP_DEPTH: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Algorithm {
    pub id: u8,
    pub name: String,
    pub loss: LossConfig,
    pub model: FnoConfig,
}

/// Algorithms 1–5: data only; plain ODE residual with one global weight
/// `eta_plain`; per-equation weighted residual; direct derivatives; direct
/// derivatives at depth [`DEEP_DEPTH`].
pub fn algorithms(model: &FnoConfig, loss: &LossConfig, eta_plain: f64) -> Vec<Algorithm> {
    let with = |id: u8, name: &str, mode: LossMode, eta: f64, depth: usize| Algorithm {
        id,
        name: name.to_string(),
        loss: LossConfig { mode, eta, ..loss.clone() },
        model: FnoConfig { depth, ..model.clone() },
    };
    vec![
        with(1, "data_only", LossMode::DataOnly, loss.eta, model.depth),
        with(2, "plain_ode", LossMode::PlainOde, eta_plain, model.depth),
        with(3, "weighted_ode", LossMode::WeightedOde, 1.0, model.depth),
        with(4, "direct_deriv", LossMode::DirectDerivative, loss.eta, model.depth),
        with(5, "direct_deriv_deep", LossMode::DirectDerivative, loss.eta, DEEP_DEPTH),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationEntry {
    pub algorithm: Algorithm,
    pub best_epoch: Option<usize>,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub entries: Vec<AblationEntry>,
    pub checks: Vec<Check>,
}

impl AblationReport {
    pub fn entry(&self, id: u8) -> Option<&AblationEntry> {
        self.entries.iter().find(|e| e.algorithm.id == id)
    }

    pub fn summary_tsv(&self) -> String {
        let mut s = String::from("algorithm\tname\tdepth\tx_pct\tv_pct\ta_pct\tbest_epoch\ttraining_s\n");
        for e in &self.entries {
            let [x, v, a] = e.report.errors.means();
            s.push_str(&format!(
                "{}\t{}\t{}\t{x:.6}\t{v:.6}\t{a:.6}\t{}\t{:.1}\n",
                e.algorithm.id,
                e.algorithm.name,
                e.algorithm.model.depth,
                e.best_epoch.map_or("-".to_string(), |b| b.to_string()),
                e.report.timings.training_s.unwrap_or(f64::NAN),
            ));
        }
        s
    }
}

/// Second-derivative ordering: A1 > A2 > A4 and A4 < 0.2·A1. Checks whose
/// algorithms were not run are omitted.
pub fn ordering_checks(entries: &[AblationEntry]) -> Vec<Check> {
    let a = |id: u8| entries.iter().find(|e| e.algorithm.id == id).map(|e| e.report.errors.a.mean);
    let mut out = Vec::new();
    if let (Some(a1), Some(a2), Some(a4)) = (a(1), a(2), a(4)) {
        out.push(Check {
            name: "second-derivative error: alg1 > alg2 > alg4".into(),
            passed: a1 > a2 && a2 > a4,
            detail: format!("{a1:.3} % > {a2:.3} % > {a4:.3} %"),
        });
    }
    if let (Some(a1), Some(a4)) = (a(1), a(4)) {
        out.push(Check {
            name: "second-derivative error: alg4 < 0.2 x alg1".into(),
            passed: a4 < 0.2 * a1,
            detail: format!("{a4:.3} % vs {:.3} %", 0.2 * a1),
        });
    }
    out
}

/// Trains and evaluates the algorithms with ids in `ids` under identical
/// seeds and schedule; per-algorithm outputs go to `out_dir/alg<id>/`.
pub fn run_ablation(
    run: &RunConfig,
    dataset: &Dataset,
    norm: &NormStats,
    weights: Option<&WeightFactors>,
    ids: &[u8],
    out_dir: &Path,
) -> Result<AblationReport> {
    let needs_weights = ids.iter().any(|&i| i == 2 || i == 3);
    let eta_plain = match (needs_weights, weights) {
        (true, Some(w)) => plain_ode_eta(dataset, w)?,
        (true, None) => return Err(config("algorithms 2 and 3 need weight factors; run `mbdno weights` first")),
        (false, _) => 1.0,
    };
    let all = algorithms(&run.model, &run.loss, eta_plain);
    let mut entries = Vec::new();
    for &id in ids {
        let alg = all
            .iter()
            .find(|a| a.id == id)
            .ok_or_else(|| config(format!("unknown algorithm {id}; expected 1-5")))?;
        let dir = out_dir.join(format!("alg{id}"));
        let emitted = RunConfig {
            model: alg.model.clone(),
            loss: alg.loss.clone(),
            ..run.clone()
        };
        report::write_text(&dir.join("config.toml"), &emitted.to_toml_string())?;
        log::info!("algorithm {id} ({}): training", alg.name);
        let start = Instant::now();
        let mut trainer = Trainer::new(
            run.train.clone(),
            alg.loss.clone(),
            alg.model.clone(),
            dataset,
            norm.clone(),
            weights,
            Some(&dir),
        )?;
        trainer.run()?;
        let training_s = start.elapsed().as_secs_f64();
        let ck = trainer.best_checkpoint();
        let val: Vec<_> = dataset.val().iter().map(|p| &p.record).collect();
        let (mut rep, preds) = evaluate(&ck, "val", &val, &dataset.header.channel_names, 16)?;
        rep.timings.training_s = Some(training_s);
        report::write_channel_errors(&dir.join("errors.tsv"), &rep)?;
        report::write_trajectory(&dir.join("trajectory.tsv"), val[0], &preds[0], &dataset.header.channel_names)?;
        report::write_json(&dir.join("report.json"), &rep)?;
        entries.push(AblationEntry {
            algorithm: alg.clone(),
            best_epoch: trainer.best.map(|(e, _)| e),
            report: rep,
        });
    }
    let report = AblationReport {
        checks: ordering_checks(&entries),
        entries,
    };
    report::write_text(&out_dir.join("ablation.tsv"), &report.summary_tsv())?;
    report::write_json(&out_dir.join("ablation.json"), &report)?;
    Ok(report)
}
