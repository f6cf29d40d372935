//! Deterministic, cloneable environments.
//!
//! Every environment is fully described by its state; cloning yields an
//! independent copy that can be stepped without touching the original. The
//! search uses this to replay greedy tree paths against the true dynamics.

mod cartpole;
mod minigrid;
mod tictactoe;

pub use cartpole::CartPole;
pub use minigrid::MiniGrid;
pub use tictactoe::TicTacToe;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ActionIndex = usize;

/// Flat observation vector handed to the representation network.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    /// Reward to the player who made the move.
    pub reward: f64,
    pub done: bool,
}

/// Common surface of the three environments.
pub trait Environment: Clone + Send {
    fn reset(&mut self, seed: u64) -> Observation;
    fn step(&mut self, action: ActionIndex) -> Result<StepResult>;
    fn legal_actions(&self) -> Result<Vec<ActionIndex>>;
    fn observation(&self) -> Observation;
    fn action_size(&self) -> usize;
    fn observation_size(&self) -> usize;
    fn step_count(&self) -> usize;
    fn is_terminal(&self) -> bool;
    /// Upper bound on episode length.
    fn max_steps(&self) -> usize;
    /// Whether rewards alternate perspective between two players.
    fn is_two_player(&self) -> bool {
        false
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Cartpole,
    Tictactoe,
    Minigrid,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Cartpole => "cartpole",
            EnvKind::Tictactoe => "tictactoe",
            EnvKind::Minigrid => "minigrid",
        }
    }
}

impl std::str::FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cartpole" => Ok(EnvKind::Cartpole),
            "tictactoe" => Ok(EnvKind::Tictactoe),
            "minigrid" => Ok(EnvKind::Minigrid),
            other => Err(Error::Config(format!("unknown environment `{other}`"))),
        }
    }
}

impl std::fmt::Display for EnvKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Any of the supported environments behind one concrete type.
#[derive(Clone, Debug)]
pub enum Env {
    CartPole(CartPole),
    TicTacToe(TicTacToe),
    MiniGrid(MiniGrid),
}

impl Env {
    pub fn new(kind: EnvKind, grid_size: usize) -> Result<Self> {
        Ok(match kind {
            EnvKind::Cartpole => Env::CartPole(CartPole::new()),
            EnvKind::Tictactoe => Env::TicTacToe(TicTacToe::new()),
            EnvKind::Minigrid => {
                if grid_size < 2 {
                    return Err(Error::Config(format!(
                        "minigrid size must be at least 2, got {grid_size}"
                    )));
                }
                Env::MiniGrid(MiniGrid::new(grid_size))
            }
        })
    }

    pub fn kind(&self) -> EnvKind {
        match self {
            Env::CartPole(_) => EnvKind::Cartpole,
            Env::TicTacToe(_) => EnvKind::Tictactoe,
            Env::MiniGrid(_) => EnvKind::Minigrid,
        }
    }
}

macro_rules! dispatch {
    ($self:ident, $env:ident => $body:expr) => {
        match $self {
            Env::CartPole($env) => $body,
            Env::TicTacToe($env) => $body,
            Env::MiniGrid($env) => $body,
        }
    };
}

impl Environment for Env {
    fn reset(&mut self, seed: u64) -> Observation {
        dispatch!(self, e => e.reset(seed))
    }
    fn step(&mut self, action: ActionIndex) -> Result<StepResult> {
        dispatch!(self, e => e.step(action))
    }
    fn legal_actions(&self) -> Result<Vec<ActionIndex>> {
        dispatch!(self, e => e.legal_actions())
    }
    fn observation(&self) -> Observation {
        dispatch!(self, e => e.observation())
    }
    fn action_size(&self) -> usize {
        dispatch!(self, e => e.action_size())
    }
    fn observation_size(&self) -> usize {
        dispatch!(self, e => e.observation_size())
    }
    fn step_count(&self) -> usize {
        dispatch!(self, e => e.step_count())
    }
    fn is_terminal(&self) -> bool {
        dispatch!(self, e => e.is_terminal())
    }
    fn max_steps(&self) -> usize {
        dispatch!(self, e => e.max_steps())
    }
    fn is_two_player(&self) -> bool {
        dispatch!(self, e => e.is_two_player())
    }
}

pub(crate) fn check_action(action: ActionIndex, size: usize) -> Result<()> {
    if action >= size {
        Err(Error::InvalidAction { action, size })
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replay_reproduces_rewards() {
        for kind in [EnvKind::Cartpole, EnvKind::Tictactoe, EnvKind::Minigrid] {
            let mut env = Env::new(kind, 4).unwrap();
            env.reset(11);
            let mut actions = Vec::new();
            let mut rewards = Vec::new();
            let mut i = 0;
            while !env.is_terminal() {
                let legal = env.legal_actions().unwrap();
                let a = legal[i % legal.len()];
                i += 1;
                actions.push(a);
                rewards.push(env.step(a).unwrap().reward);
            }
            let mut replay = Env::new(kind, 4).unwrap();
            replay.reset(11);
            let replayed: Vec<f64> = actions
                .iter()
                .map(|&a| replay.step(a).unwrap().reward)
                .collect();
            assert_eq!(rewards, replayed, "{kind}");
        }
    }

    #[test]
    fn parses_names() {
        assert_eq!("CartPole".parse::<EnvKind>().unwrap(), EnvKind::Cartpole);
        assert!("atari".parse::<EnvKind>().is_err());
    }
}
