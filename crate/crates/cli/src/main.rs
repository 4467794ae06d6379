//! `sspf`: phantom export, augmentation preview, pretraining, fine-tuning
//! and evaluation from one executable.
//!
//! Exit codes: 0 success, 2 configuration or contract error, 3 I/O or file
//! format error, 4 numeric abort.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use sspformer::augment::NoiseSpec;
use sspformer::config::{parse_list, RunConfig};
use sspformer::model::checkpoint;
use sspformer::pipeline::{
    self, AugmentMode, AugmentSettings, Dataset, Predictor, ABLATION_CSV, METRICS_CSV, SWEEP_CSV,
};
use sspformer::{Error, Result, TaskKind};

#[derive(Parser, Debug)]
#[command(
    name = "sspf",
    version,
    about = "Frequency-aware self-supervised pretraining on MRI-like phantoms"
)]
struct Cli {
    /// Seed for every random stream of the run (overrides `seed` in the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory; created if absent.
    #[arg(long, global = true, default_value = "run")]
    out_dir: PathBuf,
    /// Flat `key = value` config applied over the built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Extra `key=value` overrides applied after `--config`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic phantoms and label planes as FTS1 files plus a manifest.
    Phantom {
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Output directory (defaults to `--out-dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply masking and/or k-space noise to one FTS1 tensor.
    Augment(AugmentArgs),
    /// Pretrain with masked reconstruction and cross-sequence consistency.
    Pretrain {
        /// Run one full experiment per value, e.g. `lambda=0,0.1,0.2,0.3,0.5`.
        #[arg(long)]
        sweep: Option<String>,
        /// Run the four ablation rows: baseline, only_fft, only_mask, full.
        #[arg(long, conflicts_with = "sweep")]
        ablate: bool,
    },
    /// Fine-tune decoder, heads and tails of a pretrained checkpoint with the encoder frozen.
    Finetune {
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Write held-out metrics to `metrics.csv`.
    Eval {
        #[arg(long)]
        task: Option<String>,
        #[arg(long, required_unless_present = "identity")]
        checkpoint: Option<PathBuf>,
        /// Score the degraded input itself instead of a model.
        #[arg(long, conflicts_with = "checkpoint")]
        identity: bool,
    },
}

#[derive(Args, Debug)]
struct AugmentArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "both")]
    mode: String,
    #[arg(long)]
    p_base: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    patch: Option<usize>,
    /// Output directory (defaults to `--out-dir`).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric(_) => 4,
        Error::Io(_) | Error::Missing(_) | Error::Format(_) | Error::Nifti(_) => 3,
        _ => 2,
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{kv}` is not KEY=VALUE")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn task_or_default(task: &Option<String>, cfg: &RunConfig) -> Result<TaskKind> {
    match task {
        Some(t) => t.parse(),
        None => Ok(cfg.finetune.task),
    }
}

fn sweep_values(spec: &str) -> Result<Vec<f64>> {
    let (key, values) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("sweep `{spec}` is not KEY=V1,V2,...")))?;
    if key.trim() != "lambda" {
        return Err(Error::Config(format!(
            "only `lambda` can be swept, got `{key}`"
        )));
    }
    parse_list("sweep", values)
}

fn run(cli: &Cli) -> Result<()> {
    let out = cli.out_dir.as_path();
    match &cli.command {
        Command::Phantom {
            count,
            size,
            out: dir,
        } => {
            let cfg = resolve_config(cli)?;
            let dir = dir.as_deref().unwrap_or(out);
            let manifest = pipeline::run_phantom(*count, *size, cfg.seed, dir)?;
            println!(
                "wrote {} files to {}",
                manifest.entries.len() + 1,
                dir.display()
            );
        }
        Command::Augment(a) => {
            let cfg = resolve_config(cli)?;
            let t = &cfg.train;
            let settings = AugmentSettings {
                mode: a.mode.parse::<AugmentMode>()?,
                patch: a.patch.unwrap_or(cfg.model.patch),
                p_base: a.p_base.unwrap_or(t.p_base),
                tau: a.tau.unwrap_or(t.tau),
                noise: NoiseSpec {
                    lambda: a.lambda.unwrap_or(t.noise.lambda),
                    sigma: a.sigma.unwrap_or(t.noise.sigma),
                    ..t.noise
                },
                seed: cfg.seed,
            };
            settings.noise.validate()?;
            let dir = a.out.as_deref().unwrap_or(out);
            let outcome = pipeline::run_augment(&a.input, &settings, dir)?;
            print!("{}", outcome.stats);
        }
        Command::Pretrain { sweep, ablate } => {
            let cfg = resolve_config(cli)?;
            if *ablate {
                for (name, _, o) in pipeline::run_ablation(&cfg, out)? {
                    println!(
                        "{name}: psnr {:.3} dB (identity {:.3} dB)",
                        o.psnr, o.identity_psnr
                    );
                }
                println!("wrote {}", out.join(ABLATION_CSV).display());
            } else if let Some(spec) = sweep {
                for (lambda, o) in pipeline::run_lambda_sweep(&cfg, &sweep_values(spec)?, out)? {
                    println!("lambda {lambda}: psnr {:.3} dB", o.psnr);
                }
                println!("wrote {}", out.join(SWEEP_CSV).display());
            } else {
                let data = Dataset::from_config(&cfg)?;
                let o = pipeline::run_pretrain(&cfg, &data, out)?;
                println!(
                    "pretrained {} steps, final L_sup {:.6}, checkpoint {}",
                    o.reports.len(),
                    o.reports.last().map_or(f64::NAN, |r| r.sup),
                    pipeline::checkpoint_path(out).display()
                );
            }
        }
        Command::Finetune {
            task,
            checkpoint: ckpt,
        } => {
            let mut cfg = resolve_config(cli)?;
            let task = task_or_default(task, &cfg)?;
            let model = load_checkpoint(ckpt)?;
            cfg.model = model.config().clone();
            let data = Dataset::from_config(&cfg)?;
            let (_, reports) = pipeline::run_finetune(&cfg, model, task, &data, out)?;
            println!(
                "fine-tuned {task} for {} steps, final loss {:.6}, checkpoint {}",
                reports.len(),
                reports.last().map_or(f64::NAN, |r| r.sup),
                pipeline::checkpoint_path(out).display()
            );
        }
        Command::Eval {
            task,
            checkpoint: ckpt,
            identity,
        } => {
            let mut cfg = resolve_config(cli)?;
            let task = task_or_default(task, &cfg)?;
            let data = Dataset::from_config(&cfg)?;
            let model = match (ckpt, identity) {
                (_, true) => None,
                (Some(p), false) => Some(load_checkpoint(p)?),
                (None, false) => {
                    return Err(Error::Config(
                        "eval needs --checkpoint or --identity".into(),
                    ))
                }
            };
            if let Some(m) = &model {
                cfg.model = m.config().clone();
            }
            let predictor = model.as_ref().map_or(Predictor::Identity, Predictor::Model);
            let report = pipeline::run_eval(&cfg, predictor, task, &data, out)?;
            for metric in ["psnr", "ssim", "dice_c1", "dice_c2", "dice_c3"] {
                if let Some(v) = report.mean(metric) {
                    println!("{metric}: {v:.4}");
                }
            }
            println!("wrote {}", out.join(METRICS_CSV).display());
        }
    }
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<sspformer::Sspformer> {
    info!("loading checkpoint {}", path.display());
    checkpoint::load(path)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
