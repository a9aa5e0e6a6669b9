use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mbdno_core::Scheme;
use mbdno_operator::{Checkpoint, LossMode};
use mbdno_pipeline::ablation::run_ablation;
use mbdno_pipeline::bench::benchmark;
use mbdno_pipeline::error::{exit, PipelineError};
use mbdno_pipeline::metrics::evaluate;
use mbdno_pipeline::train::{plain_ode_eta, Trainer};
use mbdno_pipeline::{gradcheck, report, workflow, Result, RunConfig};

#[derive(Parser)]
#[command(name = "mbdno", version, about = "Physics-embedded neural operators for vehicle-track dynamics")]
struct Cli {
    /// Run configuration file (TOML); built-in defaults when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Override a configuration value, e.g. `train.epochs=50`. Repeatable.
    #[arg(short = 's', long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset container and its statistics sidecar.
    Generate {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute per-pair equation weight factors into the sidecar.
    Weights {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Train one model.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Continue from `<out_dir>/last.ntar`.
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// `train`, `val` or `all`.
        #[arg(long, default_value = "val")]
        split: String,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Train and compare algorithms 1-5 on one dataset.
    Ablate {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        algorithms: Vec<u8>,
    },
    /// Time inference against integration of the same window.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference audit of every tape operation and a depth-3 network.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Integrate one window and write it as a table.
    Simulate {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Multipliers of the 13 varied parameters, comma separated.
        #[arg(long, value_delimiter = ',')]
        multipliers: Vec<f64>,
        #[arg(long)]
        scheme: Option<Scheme>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<i32> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.set)?;
    let dataset_path = |p: Option<PathBuf>| p.unwrap_or_else(|| cfg.paths.dataset.clone());
    let out_dir = |p: Option<PathBuf>| p.unwrap_or_else(|| cfg.paths.out_dir.clone());
    match cli.command {
        Command::Generate { out } => {
            let path = dataset_path(out);
            let (ds, seconds) = workflow::generate(&cfg, &path)?;
            println!(
                "wrote {} ({} train + {} val pairs, {} samples each) in {seconds:.1} s",
                path.display(),
                ds.header.n_train,
                ds.header.n_val,
                ds.header.n_time
            );
        }
        Command::Weights { dataset } => {
            let path = dataset_path(dataset);
            let side = workflow::compute_weights(&cfg, &path)?;
            let w = side.weights.expect("weights just computed");
            println!("wrote weight factors for {} pairs to {}", w.phi.len(), workflow::sidecar_path(&path).display());
        }
        Command::Train { dataset, out_dir: dir, resume } => {
            let (ds, side) = workflow::load_dataset(&dataset_path(dataset))?;
            let dir = out_dir(dir);
            report::write_text(&dir.join("config.toml"), &cfg.to_toml_string())?;
            let mut trainer = if resume {
                Trainer::resume(cfg.train.clone(), cfg.loss.clone(), &ds, side.weights.as_ref(), &dir)?
            } else {
                Trainer::new(
                    cfg.train.clone(),
                    cfg.loss.clone(),
                    cfg.model.clone(),
                    &ds,
                    side.norm.clone(),
                    side.weights.as_ref(),
                    Some(&dir),
                )?
            };
            if let (LossMode::PlainOde, Some(w)) = (cfg.loss.mode, &side.weights) {
                log::info!("plain_ode eta {:.3e} (the ablation uses {:.3e})", cfg.loss.eta, plain_ode_eta(&ds, w)?);
            }
            trainer.run()?;
            let ck = trainer.best_checkpoint();
            write_eval(&ck, &ds, "val", &dir)?;
        }
        Command::Eval { checkpoint, dataset, split, out_dir: dir } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let (ds, _) = workflow::load_dataset(&dataset_path(dataset))?;
            write_eval(&ck, &ds, &split, &out_dir(dir))?;
        }
        Command::Ablate { dataset, out_dir: dir, algorithms } => {
            let (ds, side) = workflow::load_dataset(&dataset_path(dataset))?;
            let report = run_ablation(&cfg, &ds, &side.norm, side.weights.as_ref(), &algorithms, &out_dir(dir))?;
            print!("{}", report.summary_tsv());
            for c in &report.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
        }
        Command::Bench { checkpoint, out } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let rep = benchmark(
                &ck,
                &cfg.system.load()?,
                &cfg.psd.load()?,
                &cfg.integrator,
                cfg.generation.profile_dx,
                &cfg.bench,
            )?;
            let path = out.unwrap_or_else(|| cfg.paths.out_dir.join("bench.json"));
            report::write_json(&path, &rep)?;
            println!(
                "integration {:.3} ms, inference {:.3} ms (batch {}: {:.3} ms per window), speedup {:.1}x",
                1e3 * rep.integration_s,
                1e3 * rep.inference_s,
                rep.batch,
                1e3 * rep.inference_batched_per_window_s,
                rep.speedup
            );
        }
        Command::Gradcheck { seed } => {
            let rows = gradcheck::run_all(seed)?;
            let mut ok = true;
            for r in &rows {
                ok &= r.passed();
                println!("{:<16} {:.3e} {}", r.name, r.relative_error, if r.passed() { "ok" } else { "FAIL" });
            }
            if !ok {
                eprintln!("gradient check above tolerance {:e}", gradcheck::TOLERANCE);
                return Ok(exit::NUMERICAL);
            }
        }
        Command::Simulate { seed, multipliers, scheme, out } => {
            let mut cfg = cfg.clone();
            if let Some(s) = scheme {
                cfg.integrator.scheme = s;
            }
            let rec = workflow::simulate(&cfg, &multipliers, seed)?;
            let names: Vec<String> = mbdno_core::system::OUTPUT_LABELS.iter().map(|s| s.to_string()).collect();
            report::write_record(&out, &rec, &names)?;
            println!("wrote {} samples to {} (residual ratio {:.2e})", rec.len(), out.display(), rec.residual_ratio);
        }
    }
    Ok(exit::SUCCESS)
}

fn write_eval(ck: &Checkpoint, ds: &mbdno_core::dataset::Dataset, split: &str, dir: &Path) -> Result<()> {
    let records: Vec<_> = match split {
        "train" => ds.train().iter(),
        "val" => ds.val().iter(),
        "all" => ds.pairs.iter(),
        other => return Err(PipelineError::Config(format!("unknown split {other:?}"))),
    }
    .map(|p| &p.record)
    .collect();
    let (rep, preds) = evaluate(ck, split, &records, &ds.header.channel_names, 16)?;
    report::write_json(&dir.join(format!("eval_{split}.json")), &rep)?;
    report::write_channel_errors(&dir.join(format!("errors_{split}.tsv")), &rep)?;
    report::write_trajectory(&dir.join(format!("trajectory_{split}.tsv")), records[0], &preds[0], &ds.header.channel_names)?;
    let [x, v, a] = rep.errors.means();
    println!("{split}: relative L2 x {x:.3} %, v {v:.3} %, a {a:.3} % over {} pairs", rep.pairs);
    Ok(())
}
