use super::{check_action, ActionIndex, Environment, Observation, StepResult};
use crate::error::{Error, Result};

pub const WIN_REWARD: f64 = 20.0;

const LINES: [[usize; 3]; 8] = [
    [0, 1, 2],
    [3, 4, 5],
    [6, 7, 8],
    [0, 3, 6],
    [1, 4, 7],
    [2, 5, 8],
    [0, 4, 8],
    [2, 4, 6],
];

/// 3×3 noughts and crosses.
///
/// Cells hold `+1` for the first player, `-1` for the second. Observations
/// are canonical: `+1` marks the player to move, `-1` the opponent. A win
/// pays +20 to the mover (the loser's -20 is implicit); a draw pays 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TicTacToe {
    cells: [i8; 9],
    to_play: i8,
    steps: usize,
    terminal: bool,
    winner: i8,
}

impl Default for TicTacToe {
    fn default() -> Self {
        Self::new()
    }
}

impl TicTacToe {
    pub fn new() -> Self {
        Self {
            cells: [0; 9],
            to_play: 1,
            steps: 0,
            terminal: false,
            winner: 0,
        }
    }

    pub fn cells(&self) -> &[i8; 9] {
        &self.cells
    }

    /// `+1` for the first player, `-1` for the second.
    pub fn to_play(&self) -> i8 {
        self.to_play
    }

    /// `+1`/`-1` for a finished game with a winner, 0 otherwise.
    pub fn winner(&self) -> i8 {
        self.winner
    }

    fn has_line(&self, player: i8) -> bool {
        LINES
            .iter()
            .any(|line| line.iter().all(|&i| self.cells[i] == player))
    }
}

impl Environment for TicTacToe {
    fn reset(&mut self, _seed: u64) -> Observation {
        *self = Self::new();
        self.observation()
    }

    fn step(&mut self, action: ActionIndex) -> Result<StepResult> {
        if self.terminal {
            return Err(Error::Terminal);
        }
        check_action(action, 9)?;
        if self.cells[action] != 0 {
            return Err(Error::OccupiedCell(action));
        }
        let mover = self.to_play;
        self.cells[action] = mover;
        self.steps += 1;
        let won = self.has_line(mover);
        if won {
            self.winner = mover;
        }
        self.terminal = won || self.steps == 9;
        self.to_play = -mover;
        Ok(StepResult {
            observation: self.observation(),
            reward: if won { WIN_REWARD } else { 0.0 },
            done: self.terminal,
        })
    }

    fn legal_actions(&self) -> Result<Vec<ActionIndex>> {
        if self.terminal {
            return Err(Error::Terminal);
        }
        Ok((0..9).filter(|&i| self.cells[i] == 0).collect())
    }

    fn observation(&self) -> Observation {
        Observation(
            self.cells
                .iter()
                .map(|&c| f64::from(c * self.to_play))
                .collect(),
        )
    }

    fn action_size(&self) -> usize {
        9
    }

    fn observation_size(&self) -> usize {
        9
    }

    fn step_count(&self) -> usize {
        self.steps
    }

    fn is_terminal(&self) -> bool {
        self.terminal
    }

    fn max_steps(&self) -> usize {
        9
    }

    fn is_two_player(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_board() {
        let mut env = TicTacToe::new();
        let obs = env.reset(0);
        assert_eq!(obs.0, vec![0.0; 9]);
        assert_eq!(env.legal_actions().unwrap(), (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn occupied_cell_is_rejected() {
        let mut env = TicTacToe::new();
        env.step(4).unwrap();
        let legal = env.legal_actions().unwrap();
        assert_eq!(legal.len(), 8);
        assert!(!legal.contains(&4));
        assert!(matches!(env.step(4), Err(Error::OccupiedCell(4))));
        assert!(matches!(env.step(9), Err(Error::InvalidAction { .. })));
    }

    #[test]
    fn observation_is_canonical() {
        let mut env = TicTacToe::new();
        env.step(0).unwrap();
        // Second player to move sees the first player's mark as the opponent.
        assert_eq!(env.observation().0[0], -1.0);
        env.step(1).unwrap();
        assert_eq!(env.observation().0[0], 1.0);
        assert_eq!(env.observation().0[1], -1.0);
    }

    #[test]
    fn win_pays_twenty_to_mover() {
        let mut env = TicTacToe::new();
        for a in [0, 3, 1, 4] {
            assert_eq!(env.step(a).unwrap().reward, 0.0);
        }
        let r = env.step(2).unwrap();
        assert_eq!(r.reward, WIN_REWARD);
        assert!(r.done);
        assert_eq!(env.winner(), 1);
    }

    #[test]
    fn draw_pays_nothing() {
        let mut env = TicTacToe::new();
        let mut total = 0.0;
        for a in [0, 1, 2, 4, 3, 5, 7, 6, 8] {
            total += env.step(a).unwrap().reward;
        }
        assert!(env.is_terminal());
        assert_eq!(total, 0.0);
        assert_eq!(env.winner(), 0);
    }
}
