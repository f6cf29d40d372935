use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use mzero::envs::EnvKind;
use mzero::harness::{self, Preset, RunConfig, RunMode, SummaryOptions};
use mzero::net::{load_checkpoint, MuZeroNet};
use mzero::trainer::evaluate;
use mzero::{Error, Result};

#[derive(Parser)]
#[command(
    name = "mzero",
    version,
    about = "MuZero training with off-policy tree targets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration over several seeds.
    Run(RunArgs),
    /// Aggregate per-seed metrics files.
    Summarize(SummarizeArgs),
    /// Evaluate a saved checkpoint.
    Eval(EvalArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Base configuration file; presets are used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "muzero")]
    preset: Preset,
    #[arg(long, default_value = "minigrid")]
    env: EnvKind,
    /// MiniGrid side length.
    #[arg(long, short = 'n', default_value_t = 3)]
    grid_size: usize,
    /// Seeds as a comma list (`0,3,7`) or a half-open range (`0..5`).
    #[arg(long, default_value = "0")]
    seeds: String,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// `key=value` overrides, dotted for nested sections (e.g. `train.training_steps=500`).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Run seeds on parallel threads instead of one after another.
    #[arg(long)]
    concurrent: bool,
}

#[derive(Args)]
struct SummarizeArgs {
    #[arg(required = true)]
    files: Vec<PathBuf>,
    #[arg(long, default_value_t = 10)]
    final_window: usize,
    #[arg(long)]
    solved_threshold: Option<f64>,
    #[arg(long, default_value_t = 5)]
    solved_window: usize,
    /// Directory for summary.csv and envelope.csv; nothing is written when absent.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Effective configuration written next to the run's outputs.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("cannot parse seeds {s:?}"));
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        return if a < b {
            Ok((a..b).collect())
        } else {
            Err(bad())
        };
    }
    s.split(',')
        .map(|p| p.trim().parse().map_err(|_| bad()))
        .collect()
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let base = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => harness::preset_config(args.preset, args.env, args.grid_size),
    };
    let mut cfg = base.with_overrides(&args.overrides)?;
    if let Some(dir) = args.out_dir {
        cfg.out_dir = dir;
    }
    let seeds = parse_seeds(&args.seeds)?;
    let mode = if args.concurrent {
        RunMode::Concurrent
    } else {
        RunMode::Sequential
    };
    let report = harness::run(&cfg, &seeds, mode)?;
    for s in &report.seeds {
        let solved = s
            .steps_until_solved
            .map_or_else(|| "-".to_string(), |v| v.to_string());
        println!(
            "{} seed {}: final {:.3} solved_at {}",
            cfg.name, s.seed, s.final_reward, solved
        );
    }
    println!("summary: {}", report.summary_path.display());
    Ok(())
}

fn cmd_summarize(args: SummarizeArgs) -> Result<()> {
    let opts = SummaryOptions {
        final_window: args.final_window,
        solved_threshold: args.solved_threshold,
        solved_window: args.solved_window,
    };
    let summary = harness::summarize(&args.files, &opts)?;
    println!("label,runs,final_mean,final_std,steps_until_solved_mean,solved_runs");
    for g in &summary.groups {
        let solved = g
            .solved_mean()
            .map_or_else(String::new, |m| format!("{m:.1}"));
        println!(
            "{},{},{:.4},{:.4},{},{}",
            g.label,
            g.runs,
            g.final_mean,
            g.final_std,
            solved,
            g.solved_steps.len()
        );
    }
    if let Some(dir) = args.out_dir {
        std::fs::create_dir_all(&dir)?;
        harness::write_summary(
            &summary,
            &opts,
            &dir.join("summary.csv"),
            &dir.join("envelope.csv"),
        )?;
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.config)?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    if ckpt.config_hash != cfg.net_hash()? {
        return Err(Error::Checkpoint(
            "checkpoint was written for a different network configuration".into(),
        ));
    }
    let mut net = MuZeroNet::zeroed(cfg.net_config()?)?;
    net.params = ckpt.params;
    let mut env = cfg.make_env()?;
    let report = evaluate(
        &net,
        &mut env,
        cfg.search_config(),
        args.episodes,
        args.seed,
    )?;
    println!(
        "step {} episodes {} mean {:.3} min {:.3} max {:.3}",
        ckpt.training_step,
        args.episodes,
        report.mean(),
        report.min(),
        report.max()
    );
    if let Some(opp) = report.opponent_mean() {
        println!("opponent mean {opp:.3}");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Summarize(a) => cmd_summarize(a),
        Command::Eval(a) => cmd_eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
