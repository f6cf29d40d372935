use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::run::MetricsRow;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SummaryOptions {
    /// Evaluations averaged into each run's final reward.
    pub final_window: usize,
    pub solved_threshold: Option<f64>,
    pub solved_window: usize,
}

impl Default for SummaryOptions {
    fn default() -> Self {
        Self {
            final_window: 10,
            solved_threshold: None,
            solved_window: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvelopePoint {
    pub step: u64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// Statistics for all runs sharing a label.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupSummary {
    pub label: String,
    pub runs: usize,
    pub final_rewards: Vec<f64>,
    pub final_mean: f64,
    /// Population standard deviation.
    pub final_std: f64,
    /// Steps until solved for the runs that got there.
    pub solved_steps: Vec<u64>,
    pub envelope: Vec<EnvelopePoint>,
}

impl GroupSummary {
    pub fn solved_mean(&self) -> Option<f64> {
        (!self.solved_steps.is_empty())
            .then(|| self.solved_steps.iter().sum::<u64>() as f64 / self.solved_steps.len() as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub groups: Vec<GroupSummary>,
}

/// Reads per-seed metrics files (`<label>_seed<k>.csv`).
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = fs::read_to_string(path)?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in reader.deserialize().enumerate() {
        let row: MetricsRow = rec.map_err(|e| Error::Csv {
            path: path.display().to_string(),
            row: i + 1,
            msg: e.to_string(),
        })?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Csv {
            path: path.display().to_string(),
            row: 0,
            msg: "no evaluation rows".into(),
        });
    }
    Ok(rows)
}

/// Label of a metrics file: its stem up to the trailing `_seed<k>`.
pub fn run_label(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    match stem.rfind("_seed") {
        Some(i) if stem[i + 5..].chars().all(|c| c.is_ascii_digit()) && i + 5 < stem.len() => {
            stem[..i].to_string()
        }
        _ => stem,
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn summarize(paths: &[PathBuf], opts: &SummaryOptions) -> Result<Summary> {
    if paths.is_empty() {
        return Err(Error::Config("nothing to summarize".into()));
    }
    let mut by_label: BTreeMap<String, Vec<Vec<MetricsRow>>> = BTreeMap::new();
    for p in paths {
        by_label
            .entry(run_label(p))
            .or_default()
            .push(read_metrics(p)?);
    }
    let groups = by_label
        .into_iter()
        .map(|(label, runs)| summarize_group(label, &runs, opts))
        .collect();
    Ok(Summary { groups })
}

fn summarize_group(label: String, runs: &[Vec<MetricsRow>], opts: &SummaryOptions) -> GroupSummary {
    let final_rewards: Vec<f64> = runs
        .iter()
        .map(|rows| {
            let tail = &rows[rows.len().saturating_sub(opts.final_window)..];
            tail.iter().map(|r| r.eval_mean).sum::<f64>() / tail.len() as f64
        })
        .collect();
    let (final_mean, final_std) = mean_std(&final_rewards);
    let solved_steps = match opts.solved_threshold {
        Some(t) => runs
            .iter()
            .filter_map(|rows| {
                rows.windows(opts.solved_window)
                    .find(|w| w.iter().map(|r| r.eval_mean).sum::<f64>() / w.len() as f64 >= t)
                    .map(|w| w[w.len() - 1].step)
            })
            .collect(),
        None => Vec::new(),
    };
    let mut steps: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for rows in runs {
        for r in rows {
            steps.entry(r.step).or_default().push(r.eval_mean);
        }
    }
    let envelope = steps
        .into_iter()
        .map(|(step, v)| EnvelopePoint {
            step,
            mean: v.iter().sum::<f64>() / v.len() as f64,
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
        .collect();
    GroupSummary {
        label,
        runs: runs.len(),
        final_rewards,
        final_mean,
        final_std,
        solved_steps,
        envelope,
    }
}

/// Writes the per-label table and the per-step min/max envelope.
pub fn write_summary(
    summary: &Summary,
    opts: &SummaryOptions,
    table: &Path,
    envelope: &Path,
) -> Result<()> {
    let mut out = fs::File::create(table)?;
    writeln!(
        out,
        "# final_reward = mean eval reward over the last {} evaluations of each run",
        opts.final_window
    )?;
    let mut w = csv::Writer::from_writer(out);
    let wrap = |path: &Path, e: csv::Error| Error::Csv {
        path: path.display().to_string(),
        row: 0,
        msg: e.to_string(),
    };
    w.write_record([
        "label",
        "runs",
        "final_mean",
        "final_std",
        "steps_until_solved_mean",
        "solved_runs",
    ])
    .map_err(|e| wrap(table, e))?;
    for g in &summary.groups {
        w.write_record([
            g.label.clone(),
            g.runs.to_string(),
            g.final_mean.to_string(),
            g.final_std.to_string(),
            g.solved_mean().map_or_else(String::new, |m| m.to_string()),
            g.solved_steps.len().to_string(),
        ])
        .map_err(|e| wrap(table, e))?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(envelope).map_err(|e| wrap(envelope, e))?;
    w.write_record(["label", "step", "mean", "min", "max"])
        .map_err(|e| wrap(envelope, e))?;
    for g in &summary.groups {
        for p in &g.envelope {
            w.write_record([
                g.label.clone(),
                p.step.to_string(),
                p.mean.to_string(),
                p.min.to_string(),
                p.max.to_string(),
            ])
            .map_err(|e| wrap(envelope, e))?;
        }
    }
    w.flush()?;
    Ok(())
}
