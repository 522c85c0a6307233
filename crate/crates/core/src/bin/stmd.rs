use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stmd::diffusion::Checkpoint;
use stmd::fusion::FusionKind;
use stmd::pipeline::{
    ablate, evaluate, gen_dataset, import_laserhuman, sample_cmd, train, Dataset, Judge, LoadedModel, PipelineError,
    RunConfig,
};
use stmd::scene::{read_ply, Scene};

#[derive(Parser)]
#[command(name = "stmd", version, about = "Scene- and text-conditioned motion diffusion toolkit")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Number of records (default: data.size).
        #[arg(long)]
        size: Option<usize>,
    },
    /// Train a model on a manifest's train split.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Manifest file or the directory holding manifest.jsonl.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Fusion variant, overriding model.fusion.
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        steps: Option<u64>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Sample motions for one scene and caption.
    Sample {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        caption: String,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample the test split and write the metrics report.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Samples per condition (default: eval.k).
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate several fusion variants.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated variants, in table order (default: all five).
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert an external scene/motion/caption export into a manifest.
    Import {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        motions: PathBuf,
        #[arg(long)]
        captions: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, PipelineError> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn parse_variant(s: &str) -> Result<FusionKind, PipelineError> {
    Ok(s.trim().parse::<FusionKind>()?)
}

fn with_variant(mut c: RunConfig, v: Option<&str>) -> Result<RunConfig, PipelineError> {
    if let Some(v) = v {
        c.model.fusion = parse_variant(v)?;
    }
    Ok(c)
}

fn load_model(config: &RunConfig, path: &Path) -> Result<LoadedModel, PipelineError> {
    let ckpt = Checkpoint::load(path)?;
    LoadedModel::from_checkpoint(config, &ckpt)
}

fn log(msg: &str) {
    eprintln!("{msg}");
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| PipelineError::Runtime(e.to_string()))?;
    }
    match cli.command {
        Command::GenData { config, out, seed, size } => {
            let c = load_config(config.as_deref())?;
            let m = gen_dataset(&c, size.unwrap_or(c.data.size), seed.unwrap_or(c.seed), &out)?;
            println!("wrote {} records to {}", m.records.len(), out.display());
        }
        Command::Train {
            config,
            data,
            out,
            seed,
            variant,
            steps,
            resume,
        } => {
            let mut c = with_variant(load_config(config.as_deref())?, variant.as_deref())?;
            if let Some(s) = seed {
                c.seed = s;
            }
            if let Some(s) = steps {
                c.train.steps = s;
            }
            let ds = Dataset::load(&data)?;
            let o = train(&c, &ds, &out, resume.as_deref(), log)?;
            println!(
                "trained to step {}: held-out loss {:.6} -> {:.6}, checkpoint {}",
                o.model.step,
                o.initial_eval.total,
                o.final_eval.total,
                o.checkpoint.display()
            );
        }
        Command::Sample {
            config,
            checkpoint,
            scene,
            caption,
            k,
            seed,
            variant,
            out,
        } => {
            let c = with_variant(load_config(config.as_deref())?, variant.as_deref())?;
            let m = load_model(&c, &checkpoint)?;
            let map = read_ply(&scene)?;
            let files = sample_cmd(&m, &Scene::new_static(map), &caption, k, seed, &out)?;
            println!("wrote {} samples to {}", files.len(), out.display());
        }
        Command::Eval {
            config,
            data,
            checkpoint,
            k,
            seed,
            variant,
            out,
        } => {
            let c = with_variant(load_config(config.as_deref())?, variant.as_deref())?;
            let m = load_model(&c, &checkpoint)?;
            let ds = Dataset::load(&data)?;
            let judge = Judge::train(&c, &ds)?;
            let e = evaluate(&m, &ds, &judge, k.unwrap_or(c.eval.k), seed)?;
            e.write(&out)?;
            print!("{}", e.table);
        }
        Command::Ablate {
            config,
            data,
            variant,
            seed,
            out,
        } => {
            let c = load_config(config.as_deref())?;
            let variants = match variant {
                Some(list) => list.split(',').map(parse_variant).collect::<Result<Vec<_>, _>>()?,
                None => FusionKind::ALL.to_vec(),
            };
            let ds = Dataset::load(&data)?;
            let rows = ablate(&c, &ds, &variants, seed.unwrap_or(c.seed), &out, log)?;
            println!("{} variants; table in {}", rows.len(), out.join("ablation.md").display());
        }
        Command::Import {
            config,
            scenes,
            motions,
            captions,
            out,
        } => {
            let c = load_config(config.as_deref())?;
            let o = import_laserhuman(&scenes, &motions, &captions, c.data.thresholds(), &out)?;
            for w in &o.warnings {
                eprintln!("warning: {w}");
            }
            println!("imported {} records to {}", o.manifest.records.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
