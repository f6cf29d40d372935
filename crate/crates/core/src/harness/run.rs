use std::fs;
use std::path::{Path, PathBuf};

use log::{error, info};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{save_checkpoint, Checkpoint, MuZeroNet};
use crate::trainer::{EvalRecord, Trainer};

use super::config::RunConfig;
use super::summary::{summarize, write_summary, SummaryOptions};

/// One line of a per-seed metrics file. Column order is part of the format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub eval_mean: f64,
    pub eval_min: f64,
    pub eval_max: f64,
    pub loss_real_value: f64,
    pub loss_real_policy: f64,
    pub loss_sim_value: f64,
    pub loss_sim_policy: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma_w: f64,
    pub delta: f64,
    pub buffer_games: usize,
}

impl From<&EvalRecord> for MetricsRow {
    fn from(r: &EvalRecord) -> Self {
        Self {
            step: r.step,
            eval_mean: r.eval_mean,
            eval_min: r.eval_min,
            eval_max: r.eval_max,
            loss_real_value: r.losses.real_value,
            loss_real_policy: r.losses.real_policy,
            loss_sim_value: r.losses.sim_value,
            loss_sim_policy: r.losses.sim_policy,
            alpha: r.weights.alpha,
            beta: r.weights.beta,
            gamma_w: r.weights.gamma_w,
            delta: r.weights.delta,
            buffer_games: r.buffer_games,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RunMode {
    #[default]
    Sequential,
    /// One thread per seed.
    Concurrent,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub final_reward: f64,
    pub steps_until_solved: Option<u64>,
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub config_path: PathBuf,
    pub summary_path: PathBuf,
    pub envelope_path: PathBuf,
    pub seeds: Vec<SeedResult>,
}

pub fn metrics_path(cfg: &RunConfig, seed: u64) -> PathBuf {
    cfg.out_dir.join(format!("{}_seed{}.csv", cfg.name, seed))
}

fn checkpoint_path(cfg: &RunConfig, seed: u64, step: Option<u64>) -> PathBuf {
    match step {
        Some(s) => cfg
            .out_dir
            .join(format!("{}_seed{}_step{}.ckpt", cfg.name, seed, s)),
        None => cfg.out_dir.join(format!("{}_seed{}.ckpt", cfg.name, seed)),
    }
}

fn checkpoint(cfg_hash: u64, step: u64, net: &MuZeroNet) -> Checkpoint {
    Checkpoint {
        config_hash: cfg_hash,
        training_step: step,
        params: net.params.clone(),
    }
}

/// Trains one seed, streaming metrics rows to its CSV as evaluations happen.
pub fn run_seed(cfg: &RunConfig, seed: u64) -> Result<SeedResult> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir)?;
    let hash = cfg.net_hash()?;
    let net = MuZeroNet::new(cfg.net_config()?, seed)?;
    let mut trainer = Trainer::new(
        cfg.make_env()?,
        net,
        cfg.search_config(),
        cfg.train.clone(),
        cfg.weights.clone(),
        seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1),
    )?;
    let path = metrics_path(cfg, seed);
    let mut writer = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
    let outcome = trainer.run(|record, net| {
        writer
            .serialize(MetricsRow::from(record))
            .map_err(|e| csv_error(&path, e))?;
        writer.flush()?;
        if cfg.checkpoint_interval > 0 && record.step % cfg.checkpoint_interval == 0 {
            save_checkpoint(
                &checkpoint_path(cfg, seed, Some(record.step)),
                &checkpoint(hash, record.step, net),
            )?;
        }
        Ok(())
    })?;
    let ckpt = checkpoint_path(cfg, seed, None);
    save_checkpoint(
        &ckpt,
        &checkpoint(hash, trainer.training_step(), &trainer.net),
    )?;
    info!(
        "{} seed {}: final reward {:.3}",
        cfg.name, seed, outcome.final_reward
    );
    Ok(SeedResult {
        seed,
        final_reward: outcome.final_reward,
        steps_until_solved: outcome.steps_until_solved,
        metrics_path: path,
        checkpoint_path: ckpt,
    })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Csv {
        path: path.display().to_string(),
        row: e.position().map_or(0, |p| p.line() as usize),
        msg: e.to_string(),
    }
}

/// Trains every seed, echoes the effective config, and writes the summaries.
///
/// Fails if any seed fails; the other seeds still run to completion.
pub fn run(cfg: &RunConfig, seeds: &[u64], mode: RunMode) -> Result<RunReport> {
    cfg.validate()?;
    if seeds.is_empty() {
        return Err(Error::Config("no seeds given".into()));
    }
    fs::create_dir_all(&cfg.out_dir)?;
    let config_path = cfg.out_dir.join(format!("{}.toml", cfg.name));
    fs::write(&config_path, cfg.to_toml()?)?;

    let results: Vec<(u64, Result<SeedResult>)> = match mode {
        RunMode::Sequential => seeds.iter().map(|&s| (s, run_seed(cfg, s))).collect(),
        RunMode::Concurrent => std::thread::scope(|scope| {
            let handles: Vec<_> = seeds
                .iter()
                .map(|&s| (s, scope.spawn(move || run_seed(cfg, s))))
                .collect();
            handles
                .into_iter()
                .map(|(s, h)| {
                    (
                        s,
                        h.join()
                            .unwrap_or_else(|_| Err(Error::Config(format!("seed {s} panicked")))),
                    )
                })
                .collect()
        }),
    };

    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (seed, r) in results {
        match r {
            Ok(r) => ok.push(r),
            Err(e) => {
                error!("{} seed {} failed: {}", cfg.name, seed, e);
                failures.push(format!("seed {seed}: {e}"));
            }
        }
    }
    if !failures.is_empty() {
        return Err(Error::RunFailed {
            count: failures.len(),
            detail: failures.join("; "),
        });
    }

    let paths: Vec<PathBuf> = ok.iter().map(|r| r.metrics_path.clone()).collect();
    let opts = SummaryOptions {
        final_window: cfg.train.final_window,
        solved_threshold: cfg.train.solved_threshold,
        solved_window: cfg.train.solved_window,
    };
    let summary = summarize(&paths, &opts)?;
    let summary_path = cfg.out_dir.join(format!("{}_summary.csv", cfg.name));
    let envelope_path = cfg.out_dir.join(format!("{}_envelope.csv", cfg.name));
    write_summary(&summary, &opts, &summary_path, &envelope_path)?;
    Ok(RunReport {
        config_path,
        summary_path,
        envelope_path,
        seeds: ok,
    })
}
