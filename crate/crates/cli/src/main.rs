use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Result};
use clap::{Args, Parser, Subcommand};

use wlnav::curriculum::BehaviorId;
use wlnav_cli::{
    cmd_eval, cmd_gen_batch, cmd_relevance, cmd_render, cmd_train, cmd_train_secondaries, EvalTarget,
    InitMode, RunConfig, TrainMode,
};

#[derive(Parser)]
#[command(name = "wlnav", version, about = "Wheel-legged robot navigation training pipeline")]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed` from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `out_dir` from the configuration.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Simulator threads during rollouts. Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the five secondary behaviours and store their trajectories.
    TrainSecondaries {
        /// Train only this behaviour (b1..b5 or its full name).
        #[arg(long, value_parser = parse_behavior)]
        only: Option<BehaviorId>,
    },
    /// Randomise the stored trajectories into the trajectory batch.
    GenBatch,
    /// Train the primary policy.
    Train(TrainArgs),
    /// Greedy evaluation of a checkpoint.
    Eval {
        checkpoint: PathBuf,
        /// Fresh environments of one behaviour instead of the frozen suite.
        #[arg(long, value_parser = parse_behavior, conflicts_with = "env")]
        behavior: Option<BehaviorId>,
        /// Number of environments with --behavior.
        #[arg(long, default_value_t = 200, requires = "behavior")]
        count: usize,
        /// With --behavior: the training environments instead of fresh ones.
        #[arg(long, requires = "behavior")]
        training_set: bool,
        /// A single environment file.
        #[arg(long)]
        env: Option<PathBuf>,
        /// Per-episode CSV output.
        #[arg(long, default_value = "eval.csv")]
        out: PathBuf,
    },
    /// Obstacle relevance by single-obstacle ablation.
    Relevance {
        checkpoint: PathBuf,
        env: PathBuf,
        /// Output prefix; `.csv` and `.ppm` are appended.
        #[arg(long, default_value = "relevance")]
        out: PathBuf,
    },
    /// Scene image and start height map of an environment.
    Render {
        env: PathBuf,
        /// Draw the greedy path of this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "render")]
        out: PathBuf,
    },
    /// Print the effective configuration.
    ShowConfig,
}

#[derive(Args)]
struct TrainArgs {
    /// Same loop without the trajectory batch.
    #[arg(long, conflicts_with_all = ["with_batch", "batch_file"], required_unless_present = "with_batch")]
    baseline: bool,
    /// Mix trajectory batch samples into every update.
    #[arg(long)]
    with_batch: bool,
    /// Batch file; defaults to the one gen-batch writes.
    #[arg(long, requires = "with_batch")]
    batch_file: Option<PathBuf>,
    /// Start from random weights instead of the straight-driving policy.
    #[arg(long)]
    random_init: bool,
}

fn parse_behavior(s: &str) -> Result<BehaviorId, String> {
    BehaviorId::from_name(s).ok_or_else(|| format!("unknown behaviour {s:?}; use b1..b5"))
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = cli.out_dir {
        cfg.out_dir = d;
    }
    let workers = match cli.workers {
        Some(0) => return Err(anyhow!("--workers must be at least 1")),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let mut log = std::io::stderr();
    match cli.command {
        Command::TrainSecondaries { only } => {
            for s in cmd_train_secondaries(&cfg, only, workers, &mut log)? {
                println!(
                    "{}: {} iterations, {} stored trajectories, final success {:.3}",
                    s.behavior.name(),
                    s.iterations,
                    s.trajectories,
                    s.final_success
                );
            }
        }
        Command::GenBatch => {
            let (path, s) = cmd_gen_batch(&cfg, &mut log)?;
            println!(
                "{}: {} episodes ({} originals, {} kept, {} discarded)",
                path.display(),
                s.written,
                s.originals,
                s.stats.kept,
                s.stats.discarded
            );
        }
        Command::Train(a) => {
            let mode = if a.baseline { TrainMode::Baseline } else { TrainMode::WithBatch };
            let init = if a.random_init { InitMode::Random } else { InitMode::Straight };
            let s = cmd_train(&cfg, mode, a.batch_file.as_deref(), init, workers, &mut log)?;
            println!("{}: {} iterations", s.run_dir.display(), s.metrics.len());
        }
        Command::Eval {
            checkpoint,
            behavior,
            count,
            training_set,
            env,
            out,
        } => {
            let target = match (behavior, env) {
                (Some(b), _) if training_set => EvalTarget::TrainingSet(b),
                (Some(b), _) => EvalTarget::Behavior(b, count),
                (None, Some(e)) => EvalTarget::EnvFile(e),
                (None, None) => EvalTarget::Suite,
            };
            let report = cmd_eval(&cfg, &checkpoint, &target, &out)?;
            print!("{}", report.summary());
        }
        Command::Relevance { checkpoint, env, out } => {
            let r = cmd_relevance(&checkpoint, &env, &out)?;
            match r.most_relevant() {
                Some(i) => println!(
                    "{} obstacles; most relevant #{i} at distance {:.4}",
                    r.obstacles.len(),
                    r.obstacles[i].distance
                ),
                None => println!("no obstacles"),
            }
        }
        Command::Render { env, checkpoint, out } => {
            for p in cmd_render(&env, checkpoint.as_deref(), &out)? {
                println!("{}", p.display());
            }
        }
        Command::ShowConfig => print!("{}", cfg.to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
