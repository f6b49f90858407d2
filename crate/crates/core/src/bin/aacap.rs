use std::path::PathBuf;
use std::process::ExitCode;

use aacap::cli::{cmd_evaluate, cmd_generate, cmd_mixup, cmd_train, RunConfig, TrainRequest};
use aacap::inference::DecodeMode;
use aacap::train::Stage;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "aacap", version, about = "Audio captioning: train, generate, evaluate, mix-up")]
struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DecodeArg {
    Sample,
    Beam,
    Greedy,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Pretrain,
    Finetune,
}

#[derive(Args)]
struct DecodeFlags {
    #[arg(long, value_enum)]
    decode: Option<DecodeArg>,
    #[arg(long)]
    num_candidates: Option<usize>,
    #[arg(long)]
    top_p: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    beam_size: Option<usize>,
    #[arg(long)]
    w_dec: Option<f64>,
    #[arg(long)]
    w_enc: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train (or finetune from --resume) and write the best checkpoint.
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        validation: Option<PathBuf>,
        #[arg(long)]
        mixup: Option<PathBuf>,
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long, short)]
        output: PathBuf,
        #[arg(long, value_enum)]
        stage: Option<StageArg>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Caption audio files.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
        /// JSONL dump of every scored candidate (sampling only).
        #[arg(long)]
        candidates: Option<PathBuf>,
        #[command(flatten)]
        decode: DecodeFlags,
        #[arg(required = true)]
        audio: Vec<PathBuf>,
    },
    /// Caption a manifest and write a metric report.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
        #[command(flatten)]
        decode: DecodeFlags,
    },
    /// Build a mix-up corpus log from a manifest.
    Mixup {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, short)]
        n: usize,
        #[arg(long, short)]
        output: PathBuf,
        /// LLM endpoint URL or `offline`.
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        replay: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn apply_decode(cfg: &mut RunConfig, f: &DecodeFlags) {
    let d = &mut cfg.decode;
    if let Some(m) = f.decode {
        d.mode = match m {
            DecodeArg::Sample => DecodeMode::Sample,
            DecodeArg::Beam => DecodeMode::Beam,
            DecodeArg::Greedy => DecodeMode::Greedy,
        };
    }
    if let Some(v) = f.num_candidates {
        d.sampling.num_candidates = v;
    }
    if let Some(v) = f.top_p {
        d.sampling.top_p = v;
    }
    if let Some(v) = f.temperature {
        d.sampling.temperature = v;
    }
    if let Some(v) = f.beam_size {
        d.beam_size = v;
    }
    if let Some(v) = f.w_dec {
        d.weights.w_dec = v;
    }
    if let Some(v) = f.w_enc {
        d.weights.w_enc = v;
    }
    if let Some(v) = f.seed {
        d.sampling.seed = v;
    }
}

fn run(cli: Cli) -> aacap::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Train {
            train,
            validation,
            mixup,
            resume,
            output,
            stage,
            lr,
            batch_size,
            epochs,
            max_steps,
            alpha,
            tau,
            seed,
        } => {
            let t = &mut cfg.train;
            if let Some(s) = stage {
                t.stage = match s {
                    StageArg::Pretrain => Stage::Pretrain,
                    StageArg::Finetune => Stage::Finetune,
                };
            }
            t.lr = lr.or(t.lr);
            t.batch_size = batch_size.unwrap_or(t.batch_size);
            t.epochs = epochs.unwrap_or(t.epochs);
            t.max_steps = max_steps.or(t.max_steps);
            t.contrastive.alpha = alpha.unwrap_or(t.contrastive.alpha);
            t.contrastive.temperature = tau.unwrap_or(t.contrastive.temperature);
            t.seed = seed.unwrap_or(t.seed);
            let request = TrainRequest {
                train_manifest: &train,
                validation_manifest: validation.as_deref(),
                mixup_log: mixup.as_deref(),
                resume: resume.as_deref(),
                output: &output,
            };
            let (ckpt, outcome) = cmd_train(&cfg, &request)?;
            let accuracy = match ckpt.val_accuracy {
                Some(a) => format!("validation accuracy {a:.4}"),
                None => "no validation set".into(),
            };
            println!(
                "trained {} steps; best epoch {} ({accuracy}); wrote {}",
                outcome.steps.len(),
                outcome.best_epoch,
                output.display()
            );
        }
        Command::Generate {
            checkpoint,
            output,
            candidates,
            decode,
            audio,
        } => {
            apply_decode(&mut cfg, &decode);
            let caps = cmd_generate(&checkpoint, &audio, &cfg.decode, &output, candidates.as_deref())?;
            println!("wrote {} captions to {}", caps.len(), output.display());
        }
        Command::Evaluate {
            checkpoint,
            manifest,
            output,
            decode,
        } => {
            apply_decode(&mut cfg, &decode);
            let report = cmd_evaluate(&checkpoint, &manifest, &cfg, &output)?;
            println!("CIDEr {:.4} over {} items; report at {}", report.corpus.cider, report.corpus.items, output.display());
        }
        Command::Mixup {
            manifest,
            n,
            output,
            endpoint,
            cache,
            replay,
            seed,
        } => {
            if let Some(e) = endpoint {
                cfg.llm.endpoint = e;
            }
            cfg.llm.cache_path = cache.or(cfg.llm.cache_path);
            cfg.llm.replay |= replay;
            let corpus = cmd_mixup(&manifest, n, &cfg.llm, seed, &output, &cfg.data)?;
            println!(
                "{} of {} mix-ups accepted ({} attempts); wrote {}",
                corpus.accepted_count(),
                n,
                corpus.records.len(),
                output.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
