use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::envs::{Env, EnvKind, Environment};
use crate::error::{Error, Result};
use crate::mcts::{NoiseConfig, SearchConfig};
use crate::net::NetConfig;
use crate::trainer::{LossWeights, TrainConfig, WeightSchedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSection {
    pub hidden_size: usize,
    pub layer_width: usize,
    pub value_support: usize,
    pub reward_support: usize,
    pub squash_values: bool,
    pub normalize_hidden: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    pub num_simulations: usize,
    pub discount: f64,
    pub c1: f64,
    pub c2: f64,
    /// Root Dirichlet concentration during self-play; 0 disables noise.
    pub dirichlet_alpha: f64,
    pub exploration_fraction: f64,
}

/// Everything needed to reproduce one training run, minus the seed list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Label used in output file names.
    pub name: String,
    pub env: EnvKind,
    pub grid_size: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Save a checkpoint every this many steps (on evaluation boundaries); 0 saves only the last.
    pub checkpoint_interval: u64,
    pub net: NetSection,
    pub search: SearchSection,
    pub train: TrainConfig,
    pub weights: WeightSchedule,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Applies `key=value` overrides, with dotted keys for nested sections.
    /// Values are parsed as TOML and fall back to plain strings.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut table: toml::Table =
            toml::from_str(&self.to_toml()?).map_err(|e| Error::Config(e.to_string()))?;
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {item:?} is not key=value")))?;
            let value = parse_value(raw.trim());
            let mut parts: Vec<&str> = key.trim().split('.').collect();
            let last = parts
                .pop()
                .filter(|k| !k.is_empty())
                .ok_or_else(|| Error::Config(format!("empty key in {item:?}")))?;
            let mut cursor = &mut table;
            for p in parts {
                cursor = cursor
                    .get_mut(p)
                    .and_then(toml::Value::as_table_mut)
                    .ok_or_else(|| Error::Config(format!("unknown section {p:?} in {item:?}")))?;
            }
            cursor.insert(last.to_string(), value);
        }
        let text = toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_toml(&text)
    }

    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config(format!(
                "run name {:?} must be a plain file-name label",
                self.name
            )));
        }
        self.net_config()?.validate()?;
        self.train.validate()?;
        self.weights.validate()?;
        let s = &self.search;
        if s.num_simulations == 0 {
            return Err(Error::Config(
                "search.num_simulations must be positive".into(),
            ));
        }
        if !(s.discount > 0.0 && s.discount <= 1.0) {
            return Err(Error::Config("search.discount must lie in (0, 1]".into()));
        }
        if !(s.dirichlet_alpha >= 0.0) || !(0.0..=1.0).contains(&s.exploration_fraction) {
            return Err(Error::Config("search noise settings out of range".into()));
        }
        if self.env == EnvKind::Tictactoe && self.net.value_support != 1 {
            return Err(Error::Config(
                "tictactoe needs net.value_support = 1".into(),
            ));
        }
        Ok(())
    }

    pub fn make_env(&self) -> Result<Env> {
        Env::new(self.env, self.grid_size)
    }

    pub fn net_config(&self) -> Result<NetConfig> {
        let env = self.make_env()?;
        Ok(NetConfig {
            observation_size: env.observation_size(),
            action_size: env.action_size(),
            hidden_size: self.net.hidden_size,
            layer_width: self.net.layer_width,
            value_support: self.net.value_support,
            reward_support: self.net.reward_support,
            squash_values: self.net.squash_values,
            normalize_hidden: self.net.normalize_hidden,
        })
    }

    pub fn search_config(&self) -> SearchConfig {
        let s = &self.search;
        let mut cfg = SearchConfig::new(s.num_simulations, s.discount);
        cfg.c1 = s.c1;
        cfg.c2 = s.c2;
        cfg.two_player = self.env == EnvKind::Tictactoe;
        cfg.noise =
            (s.dirichlet_alpha > 0.0 && s.exploration_fraction > 0.0).then_some(NoiseConfig {
                alpha: s.dirichlet_alpha,
                fraction: s.exploration_fraction,
            });
        cfg
    }

    /// FNV-1a over the serialized network configuration; stored in checkpoints.
    pub fn net_hash(&self) -> Result<u64> {
        let text =
            toml::to_string(&self.net_config()?).map_err(|e| Error::Config(e.to_string()))?;
        Ok(fnv1a(text.as_bytes()))
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Preset {
    Muzero,
    M0off,
    M0gb,
    M0offv,
    M0all,
    DecayValue,
    DecayValuePolicy,
}

impl Preset {
    pub const ALL: [Preset; 7] = [
        Preset::Muzero,
        Preset::M0off,
        Preset::M0gb,
        Preset::M0offv,
        Preset::M0all,
        Preset::DecayValue,
        Preset::DecayValuePolicy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Muzero => "muzero",
            Preset::M0off => "m0off",
            Preset::M0gb => "m0gb",
            Preset::M0offv => "m0offv",
            Preset::M0all => "m0all",
            Preset::DecayValue => "decay_value",
            Preset::DecayValuePolicy => "decay_value_policy",
        }
    }

    /// Constant weights for the fixed presets, `None` for the decaying ones.
    pub fn fixed_weights(self) -> Option<LossWeights> {
        match self {
            Preset::Muzero => Some(LossWeights::new(1.0, 1.0, 0.0, 0.0)),
            Preset::M0off => Some(LossWeights::new(0.0, 0.0, 1.0, 1.0)),
            Preset::M0gb => Some(LossWeights::new(0.0, 1.0, 1.0, 0.0)),
            Preset::M0offv => Some(LossWeights::new(1.0, 1.0, 1.0, 0.0)),
            Preset::M0all => Some(LossWeights::new(1.0, 1.0, 1.0, 1.0)),
            Preset::DecayValue | Preset::DecayValuePolicy => None,
        }
    }

    pub fn schedule(self, env: EnvKind) -> WeightSchedule {
        match self.fixed_weights() {
            Some(w) => WeightSchedule::constant(w),
            None => {
                WeightSchedule::decaying(decay_boundaries(env), self == Preset::DecayValuePolicy)
            }
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::UnknownPreset(s.to_string()))
    }
}

/// Steps at which the decaying presets drop to half and then zero simulated weight.
pub fn decay_boundaries(env: EnvKind) -> [u64; 2] {
    match env {
        EnvKind::Cartpole | EnvKind::Tictactoe => [6250, 12500],
        EnvKind::Minigrid => [5000, 10000],
    }
}

/// Default configuration for `preset` on `env` (grid size only matters for MiniGrid).
pub fn preset_config(preset: Preset, env: EnvKind, grid_size: usize) -> RunConfig {
    let base_train = TrainConfig {
        training_steps: 25_000,
        batch_size: 128,
        unroll_steps: 10,
        td_steps: 50,
        buffer_capacity: 500,
        warmup_games: 0,
        games_per_cycle: 1,
        batches_per_cycle: 20,
        lr_init: 0.02,
        lr_decay_rate: 0.9,
        lr_decay_steps: 1000,
        momentum: 0.9,
        weight_decay: 1e-4,
        dynamics_grad_scale: 0.5,
        temperature: vec![(0, 1.0)],
        eval_interval: 250,
        eval_episodes: 20,
        solved_threshold: None,
        solved_window: 5,
        final_window: 10,
    };
    let search = SearchSection {
        num_simulations: 50,
        discount: 0.997,
        c1: 1.25,
        c2: 19652.0,
        dirichlet_alpha: 0.25,
        exploration_fraction: 0.25,
    };
    let (net, search, train) = match env {
        EnvKind::Cartpole => (
            NetSection {
                hidden_size: 8,
                layer_width: 16,
                value_support: 21,
                reward_support: 21,
                squash_values: true,
                normalize_hidden: true,
            },
            search,
            TrainConfig {
                solved_threshold: Some(195.0),
                ..base_train
            },
        ),
        EnvKind::Tictactoe => (
            NetSection {
                hidden_size: 8,
                layer_width: 16,
                value_support: 1,
                reward_support: 1,
                squash_values: false,
                normalize_hidden: true,
            },
            SearchSection {
                num_simulations: 25,
                discount: 1.0,
                ..search
            },
            TrainConfig {
                batch_size: 64,
                unroll_steps: 3,
                td_steps: 9,
                buffer_capacity: 3000,
                ..base_train
            },
        ),
        EnvKind::Minigrid => (
            NetSection {
                hidden_size: 5,
                layer_width: 10,
                value_support: 21,
                reward_support: 21,
                squash_values: false,
                normalize_hidden: false,
            },
            SearchSection {
                num_simulations: 5,
                ..search
            },
            TrainConfig {
                training_steps: if grid_size <= 4 { 15_000 } else { 20_000 },
                batch_size: 32,
                unroll_steps: 7,
                td_steps: 7,
                buffer_capacity: 5000,
                warmup_games: 100,
                ..base_train
            },
        ),
    };
    let name = match env {
        EnvKind::Minigrid => format!("{}_{}{}", preset.name(), env.name(), grid_size),
        _ => format!("{}_{}", preset.name(), env.name()),
    };
    RunConfig {
        name,
        env,
        grid_size: if env == EnvKind::Minigrid {
            grid_size
        } else {
            0
        },
        seed: 0,
        out_dir: PathBuf::from("runs"),
        checkpoint_interval: 0,
        net,
        search,
        train,
        weights: preset.schedule(env),
    }
}
