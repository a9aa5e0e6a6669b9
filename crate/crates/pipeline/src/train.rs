//! Mini-batch training with per-epoch validation and resumable checkpoints.
//!
//! The shuffle of epoch `e` is drawn from ChaCha8 seeded with the run seed on
//! stream `e + 1`, so an epoch depends only on the parameters and optimizer
//! state it starts from. That is what makes resuming exact.

use std::path::{Path, PathBuf};
use std::time::Instant;

use mbdno_core::dataset::{Dataset, NormStats, WeightFactors};
use mbdno_core::system::vehicle_equations;
use mbdno_core::{EquationSet, TrajectoryRecord};
use mbdno_operator::encode::{encode_record, encode_target, stack, unstack};
use mbdno_operator::losses::{pair_loss, PairTarget};
use mbdno_operator::{Checkpoint, FnoConfig, FnoModel, LossConfig, LossMode};
use mbdno_tensor::{Tape, Tensor};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{lr_schedule, TrainConfig};
use crate::error::{config, io_err, PipelineError, Result};
use crate::metrics::{error_triple, predict_records, ErrorTriple};
use crate::optim::Adam;
use crate::report;

pub const BEST_CHECKPOINT: &str = "best.ntar";
pub const LAST_CHECKPOINT: &str = "last.ntar";
pub const ABORT_CHECKPOINT: &str = "abort.ntar";
pub const HISTORY_FILE: &str = "history.tsv";

/// Mean per-pair objective terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct LossSummary {
    pub total: f64,
    pub data: f64,
    pub ode: f64,
    pub derivative: f64,
}

impl LossSummary {
    fn add(&mut self, other: &LossSummary) {
        self.total += other.total;
        self.data += other.data;
        self.ode += other.ode;
        self.derivative += other.derivative;
    }

    fn scaled(&self, c: f64) -> Self {
        Self {
            total: self.total * c,
            data: self.data * c,
            ode: self.ode * c,
            derivative: self.derivative * c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Running mean over the epoch's pairs, each at the parameters current
    /// when its batch was processed.
    pub loss: LossSummary,
    pub val: ErrorTriple,
    pub seconds: f64,
}

struct Prepared<'a> {
    record: &'a TrajectoryRecord,
    input: Array2<f64>,
    x_norm: Array2<f64>,
    equations: Option<EquationSet>,
    phi: Option<Vec<f64>>,
}

pub struct Trainer<'a> {
    pub cfg: TrainConfig,
    pub loss: LossConfig,
    pub model: FnoModel,
    pub adam: Adam,
    pub norm: NormStats,
    pub history: Vec<EpochRecord>,
    /// Epoch and score of the retained best parameters.
    pub best: Option<(usize, f64)>,
    best_model: Option<FnoModel>,
    train: Vec<Prepared<'a>>,
    val: Vec<&'a TrajectoryRecord>,
    dt: f64,
    out_dir: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    epochs_done: usize,
    train: TrainConfig,
    loss: LossConfig,
    history: Vec<EpochRecord>,
    best: Option<(usize, f64)>,
}

fn prepare<'a>(
    dataset: &'a Dataset,
    norm: &NormStats,
    loss: &LossConfig,
    weights: Option<&WeightFactors>,
) -> Result<Vec<Prepared<'a>>> {
    let base = dataset.base_params()?;
    if loss.mode == LossMode::WeightedOde {
        match weights {
            Some(w) if w.phi.len() == dataset.len() => {}
            Some(w) => {
                return Err(config(format!(
                    "weight factors cover {} pairs, dataset has {}",
                    w.phi.len(),
                    dataset.len()
                )))
            }
            None => return Err(config("weighted_ode mode needs weight factors; run `mbdno weights` first")),
        }
    }
    dataset
        .train()
        .iter()
        .enumerate()
        .map(|(k, pair)| {
            let record = &pair.record;
            let equations = if loss.mode.needs_equations() {
                Some(vehicle_equations(&base.with_varied(&record.params)?)?)
            } else {
                None
            };
            let phi = match (loss.mode, weights) {
                (LossMode::WeightedOde, Some(w)) => Some(w.phi[k].clone()),
                _ => None,
            };
            Ok(Prepared {
                record,
                input: encode_record(record, norm)?,
                x_norm: encode_target(record, norm),
                equations,
                phi,
            })
        })
        .collect()
}

impl<'a> Trainer<'a> {
    /// Fresh run; the model is initialized from `cfg.seed`.
    pub fn new(
        cfg: TrainConfig,
        loss: LossConfig,
        model: FnoConfig,
        dataset: &'a Dataset,
        norm: NormStats,
        weights: Option<&WeightFactors>,
        out_dir: Option<&Path>,
    ) -> Result<Self> {
        let model = FnoModel::init(model, cfg.seed)?;
        let adam = Adam::new(cfg.adam.clone(), &model.params);
        Self::assemble(cfg, loss, model, adam, norm, dataset, weights, out_dir)
    }

    /// Continues the run stored in `out_dir/last.ntar`. Only `epochs` may
    /// differ from the stored training configuration.
    pub fn resume(
        cfg: TrainConfig,
        loss: LossConfig,
        dataset: &'a Dataset,
        weights: Option<&WeightFactors>,
        out_dir: &Path,
    ) -> Result<Self> {
        let ck = Checkpoint::load(out_dir.join(LAST_CHECKPOINT))?;
        let meta: CheckpointMeta = serde_json::from_value(ck.extra.clone())
            .map_err(|e| config(format!("checkpoint metadata: {e}")))?;
        let stored = TrainConfig {
            epochs: cfg.epochs,
            ..meta.train.clone()
        };
        if stored != cfg || meta.loss != loss {
            return Err(config("resume needs the stored training and loss configuration (only epochs may change)"));
        }
        let adam = Adam::from_state(cfg.adam.clone(), &ck.model.params, &ck.state)?;
        let mut t = Self::assemble(cfg, loss, ck.model, adam, ck.norm, dataset, weights, Some(out_dir))?;
        t.history = meta.history;
        t.best = meta.best;
        if t.history.len() != meta.epochs_done {
            return Err(config("checkpoint history length disagrees with its epoch count"));
        }
        let best_path = out_dir.join(BEST_CHECKPOINT);
        if t.best.is_some() && best_path.exists() {
            t.best_model = Some(Checkpoint::load(best_path)?.model);
        }
        Ok(t)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        cfg: TrainConfig,
        loss: LossConfig,
        model: FnoModel,
        adam: Adam,
        norm: NormStats,
        dataset: &'a Dataset,
        weights: Option<&WeightFactors>,
        out_dir: Option<&Path>,
    ) -> Result<Self> {
        cfg.validate()?;
        loss.validate()?;
        if dataset.header.n_train == 0 || dataset.header.n_val == 0 {
            return Err(config("training needs non-empty train and validation splits"));
        }
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        Ok(Self {
            train: prepare(dataset, &norm, &loss, weights)?,
            val: dataset.val().iter().map(|p| &p.record).collect(),
            dt: dataset.header.dt_out,
            cfg,
            loss,
            model,
            adam,
            norm,
            history: Vec::new(),
            best: None,
            best_model: None,
            out_dir: out_dir.map(Path::to_path_buf),
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.history.len()
    }

    /// Loss terms summed over `items` and their parameter gradients scaled
    /// by `scale`.
    fn chunk_gradients(&self, items: &[usize], scale: f64) -> Result<(LossSummary, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let bound = self.model.bind(&mut tape);
        let inputs: Vec<Array2<f64>> = items.iter().map(|&i| self.train[i].input.clone()).collect();
        let x = tape.leaf(stack(&inputs)?);
        let out = self.model.forward(&mut tape, &bound, x)?;
        let preds = unstack(tape.value(out))?;
        let mut sum = LossSummary::default();
        let mut grads = Vec::with_capacity(items.len());
        for (pred, &i) in preds.iter().zip(items) {
            let p = &self.train[i];
            let target = PairTarget {
                x_norm: p.x_norm.view(),
                v: p.record.v.view(),
                a: p.record.a.view(),
                excitation: p.record.irregularity.view(),
                equations: p.equations.as_ref(),
                phi: p.phi.as_deref(),
            };
            let b = pair_loss(&self.loss, pred.view(), &target, &self.norm, self.dt)?;
            sum.add(&LossSummary {
                total: b.total,
                data: b.data,
                ode: b.ode,
                derivative: b.derivative,
            });
            grads.push(b.grad * scale);
        }
        let loss = tape.external(sum.total * scale, vec![(out, stack(&grads)?)])?;
        let mut g = tape.backward(loss)?;
        let grads = bound
            .params
            .iter()
            .zip(&self.model.params)
            .map(|(&v, p)| g.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        Ok((sum, grads))
    }

    /// Batch-mean objective and gradient. Workers take contiguous slices and
    /// their gradients are summed in slice order.
    fn batch_gradients(&self, batch: &[usize]) -> Result<(LossSummary, Vec<Tensor>)> {
        let scale = 1.0 / batch.len() as f64;
        let workers = self.cfg.workers.min(batch.len());
        if workers <= 1 {
            return self.chunk_gradients(batch, scale);
        }
        let per = batch.len().div_ceil(workers);
        let parts: Vec<Result<(LossSummary, Vec<Tensor>)>> = std::thread::scope(|s| {
            let handles: Vec<_> = batch
                .chunks(per)
                .map(|c| s.spawn(move || self.chunk_gradients(c, scale)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("gradient worker panicked")).collect()
        });
        let mut parts = parts.into_iter();
        let (mut sum, mut grads) = parts.next().expect("at least one chunk")?;
        for part in parts {
            let (s, g) = part?;
            sum.add(&s);
            for (a, b) in grads.iter_mut().zip(&g) {
                a.add_assign(b);
            }
        }
        Ok((sum, grads))
    }

    fn shuffled(&self, epoch: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut rng);
        order
    }

    /// Mean objective over the training split at the current parameters.
    pub fn train_loss(&self) -> Result<LossSummary> {
        let idx: Vec<usize> = (0..self.train.len()).collect();
        let mut sum = LossSummary::default();
        for chunk in idx.chunks(self.cfg.batch_size) {
            sum.add(&self.chunk_gradients(chunk, 1.0)?.0);
        }
        Ok(sum.scaled(1.0 / self.train.len() as f64))
    }

    pub fn validate(&self) -> Result<ErrorTriple> {
        let ck = Checkpoint::new(self.model.clone(), self.norm.clone());
        let preds = predict_records(&ck, &self.val, self.cfg.batch_size.max(16))?;
        error_triple(&preds, &self.val)
    }

    /// Runs the next epoch, validates, updates the best parameters and
    /// writes checkpoints when an output directory is set.
    pub fn step_epoch(&mut self) -> Result<EpochRecord> {
        let epoch = self.epochs_done();
        let start = Instant::now();
        let lr = lr_schedule(&self.cfg, epoch);
        let order = self.shuffled(epoch);
        let mut sum = LossSummary::default();
        for (bi, batch) in order.chunks(self.cfg.batch_size).enumerate() {
            let outcome = self.batch_gradients(batch).and_then(|(s, g)| {
                if s.total.is_finite() && g.iter().all(Tensor::is_finite) {
                    Ok((s, g))
                } else {
                    Err(PipelineError::Numerical(format!("loss {} at epoch {epoch}, batch {bi}", s.total)))
                }
            });
            let (s, grads) = match outcome {
                Ok(v) => v,
                Err(e) if e.is_numerical() => {
                    self.save_abort(epoch, bi)?;
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            sum.add(&s);
            self.adam.update(&mut self.model.params, &grads, lr)?;
        }
        let val = self.validate()?;
        let record = EpochRecord {
            epoch,
            lr,
            loss: sum.scaled(1.0 / self.train.len() as f64),
            val,
            seconds: start.elapsed().as_secs_f64(),
        };
        let score = record.val.score(self.cfg.selection);
        if score.is_finite() && self.best.is_none_or(|(_, b)| score <= b) {
            self.best = Some((epoch, score));
            self.best_model = Some(self.model.clone());
        }
        log::info!(
            "epoch {epoch:4}  lr {lr:.3e}  loss {:.4e}  val x/v/a {:.3}/{:.3}/{:.3} %  ({:.1} s)",
            record.loss.total,
            record.val.x.mean,
            record.val.v.mean,
            record.val.a.mean,
            record.seconds
        );
        self.history.push(record.clone());
        self.persist()?;
        Ok(record)
    }

    /// Trains until `cfg.epochs` epochs are done.
    pub fn run(&mut self) -> Result<()> {
        while self.epochs_done() < self.cfg.epochs {
            self.step_epoch()?;
        }
        Ok(())
    }

    fn meta(&self) -> serde_json::Value {
        serde_json::to_value(CheckpointMeta {
            epochs_done: self.epochs_done(),
            train: self.cfg.clone(),
            loss: self.loss.clone(),
            history: self.history.clone(),
            best: self.best,
        })
        .expect("metadata serializes")
    }

    /// Current parameters with optimizer state and run metadata.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.model.clone(), self.norm.clone());
        ck.extra = self.meta();
        ck.state = self.adam.state();
        ck
    }

    /// The retained best parameters, or the current ones before any epoch.
    pub fn best_checkpoint(&self) -> Checkpoint {
        let model = self.best_model.clone().unwrap_or_else(|| self.model.clone());
        let mut ck = Checkpoint::new(model, self.norm.clone());
        ck.extra = self.meta();
        ck
    }

    fn persist(&self) -> Result<()> {
        let Some(dir) = &self.out_dir else { return Ok(()) };
        self.checkpoint().save(dir.join(LAST_CHECKPOINT))?;
        if self.best.is_some_and(|(e, _)| e + 1 == self.epochs_done()) {
            self.best_checkpoint().save(dir.join(BEST_CHECKPOINT))?;
        }
        report::write_history(&dir.join(HISTORY_FILE), &self.history)
    }

    fn save_abort(&self, epoch: usize, batch: usize) -> Result<()> {
        let Some(dir) = &self.out_dir else { return Ok(()) };
        let mut ck = self.checkpoint();
        ck.extra["aborted_at"] = serde_json::json!({ "epoch": epoch, "batch": batch });
        ck.save(dir.join(ABORT_CHECKPOINT))?;
        log::error!("non-finite loss; parameters before the failing step saved to {ABORT_CHECKPOINT}");
        Ok(())
    }
}

/// Global ODE weight for the plain residual mode: the reciprocal mean of φ²
/// over the training pairs and equations, so the plain term enters at the
/// same overall scale as the weighted one.
pub fn plain_ode_eta(dataset: &Dataset, weights: &WeightFactors) -> Result<f64> {
    let n = dataset.header.n_train;
    if weights.phi.len() < n || n == 0 {
        return Err(config("weight factors do not cover the training split"));
    }
    let (sum, count) = weights.phi[..n]
        .iter()
        .flatten()
        .fold((0.0, 0usize), |(s, c), p| (s + p * p, c + 1));
    let mean = sum / count as f64;
    if !(mean > 0.0 && mean.is_finite()) {
        return Err(PipelineError::Numerical(format!("mean φ² = {mean}")));
    }
    Ok(1.0 / mean)
}
