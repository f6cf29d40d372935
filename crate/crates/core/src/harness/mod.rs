//! Run configuration, presets, multi-seed orchestration and result summaries.

mod config;
mod run;
mod summary;

pub use config::{
    decay_boundaries, fnv1a, preset_config, NetSection, Preset, RunConfig, SearchSection,
};
pub use run::{metrics_path, run, run_seed, MetricsRow, RunMode, RunReport, SeedResult};
pub use summary::{
    mean_std, read_metrics, run_label, summarize, write_summary, EnvelopePoint, GroupSummary,
    Summary, SummaryOptions,
};
