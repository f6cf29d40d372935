use super::{check_action, ActionIndex, Environment, Observation, StepResult};
use crate::error::{Error, Result};

pub const RIGHT: ActionIndex = 0;
pub const DOWN: ActionIndex = 1;
pub const GOAL_REWARD: f64 = 10.0;

/// N×N grid walk from the top-left corner to the bottom-right corner.
///
/// Only right and down moves exist, so the walk is monotone. A move past the
/// right or bottom edge leaves the grid for good: the observation becomes all
/// zeros and the episode runs on, reward-free, until the step cap of `N + N`.
/// The goal is therefore reachable only by a path of exactly `N - 1` rights
/// and `N - 1` downs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MiniGrid {
    size: usize,
    /// `(row, col)`, or `None` once the agent walked off the grid.
    agent: Option<(usize, usize)>,
    steps: usize,
    terminal: bool,
}

impl MiniGrid {
    pub fn new(size: usize) -> Self {
        assert!(size >= 2, "grid must be at least 2x2");
        Self {
            size,
            agent: Some((0, 0)),
            steps: 0,
            terminal: false,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn agent(&self) -> Option<(usize, usize)> {
        self.agent
    }

    fn goal(&self) -> (usize, usize) {
        (self.size - 1, self.size - 1)
    }
}

impl Environment for MiniGrid {
    fn reset(&mut self, _seed: u64) -> Observation {
        *self = Self::new(self.size);
        self.observation()
    }

    fn step(&mut self, action: ActionIndex) -> Result<StepResult> {
        if self.terminal {
            return Err(Error::Terminal);
        }
        check_action(action, 2)?;
        let n = self.size;
        self.agent = self.agent.and_then(|(r, c)| match action {
            RIGHT if c + 1 < n => Some((r, c + 1)),
            DOWN if r + 1 < n => Some((r + 1, c)),
            _ => None,
        });
        self.steps += 1;
        let reached = self.agent == Some(self.goal());
        self.terminal = reached || self.steps >= self.max_steps();
        Ok(StepResult {
            observation: self.observation(),
            reward: if reached { GOAL_REWARD } else { 0.0 },
            done: self.terminal,
        })
    }

    fn legal_actions(&self) -> Result<Vec<ActionIndex>> {
        if self.terminal {
            return Err(Error::Terminal);
        }
        Ok(vec![RIGHT, DOWN])
    }

    fn observation(&self) -> Observation {
        let mut grid = vec![0.0; self.size * self.size];
        if let Some((r, c)) = self.agent {
            grid[r * self.size + c] = 1.0;
        }
        Observation(grid)
    }

    fn action_size(&self) -> usize {
        2
    }

    fn observation_size(&self) -> usize {
        self.size * self.size
    }

    fn step_count(&self) -> usize {
        self.steps
    }

    fn is_terminal(&self) -> bool {
        self.terminal
    }

    fn max_steps(&self) -> usize {
        self.size + self.size
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(n: usize, actions: &[ActionIndex]) -> (f64, bool, usize) {
        let mut env = MiniGrid::new(n);
        env.reset(0);
        let mut total = 0.0;
        for &a in actions {
            if env.is_terminal() {
                break;
            }
            total += env.step(a).unwrap().reward;
        }
        (total, env.is_terminal(), env.step_count())
    }

    #[test]
    fn starts_top_left() {
        let mut env = MiniGrid::new(4);
        let obs = env.reset(123);
        assert_eq!(env.agent(), Some((0, 0)));
        assert_eq!(env.step_count(), 0);
        assert_eq!(obs.0[0], 1.0);
        assert_eq!(obs.0.iter().sum::<f64>(), 1.0);
        assert_eq!(obs.len(), 16);
    }

    #[test]
    fn optimal_path_pays_ten() {
        let (total, done, steps) = run(3, &[RIGHT, RIGHT, DOWN, DOWN]);
        assert_eq!((total, done, steps), (10.0, true, 4));
    }

    #[test]
    fn suboptimal_path_runs_to_cap_without_reward() {
        let (total, done, steps) = run(3, &[RIGHT, RIGHT, RIGHT, DOWN, DOWN, DOWN]);
        assert_eq!((total, done, steps), (0.0, true, 6));
        let (total, done, steps) = run(3, &[DOWN, DOWN, DOWN, DOWN, DOWN, DOWN]);
        assert_eq!((total, done, steps), (0.0, true, 6));
    }

    #[test]
    fn off_grid_observation_is_empty() {
        let mut env = MiniGrid::new(3);
        env.reset(0);
        env.step(RIGHT).unwrap();
        env.step(RIGHT).unwrap();
        let r = env.step(RIGHT).unwrap();
        assert!(r.observation.0.iter().all(|&v| v == 0.0));
        assert_eq!(env.agent(), None);
        assert!(!r.done);
    }

    #[test]
    fn clone_mid_episode() {
        let mut env = MiniGrid::new(4);
        env.reset(0);
        env.step(RIGHT).unwrap();
        env.step(DOWN).unwrap();
        let mut copy = env.clone();
        assert_eq!(copy.agent(), Some((1, 1)));
        assert_eq!(copy.step_count(), 2);
        copy.step(DOWN).unwrap();
        assert_eq!(env.agent(), Some((1, 1)));
    }

    #[test]
    fn terminal_rejects_steps() {
        let mut env = MiniGrid::new(2);
        env.reset(0);
        env.step(RIGHT).unwrap();
        assert!(env.step(DOWN).unwrap().done);
        assert!(matches!(env.step(DOWN), Err(Error::Terminal)));
        assert!(env.legal_actions().is_err());
    }
}
