use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_action, ActionIndex, Environment, Observation, StepResult};
use crate::error::{Error, Result};

const GRAVITY: f64 = 9.8;
const CART_MASS: f64 = 1.0;
const POLE_MASS: f64 = 0.1;
const TOTAL_MASS: f64 = CART_MASS + POLE_MASS;
const HALF_POLE_LENGTH: f64 = 0.5;
const POLE_MASS_LENGTH: f64 = POLE_MASS * HALF_POLE_LENGTH;
const FORCE_MAG: f64 = 10.0;
const TAU: f64 = 0.02;

pub const THETA_LIMIT_DEGREES: f64 = 15.0;
pub const X_LIMIT: f64 = 2.4;
pub const MAX_EPISODE_STEPS: usize = 500;

/// Classic cart-pole balancing task with explicit Euler integration.
///
/// Action 0 pushes left, action 1 pushes right. Every step, including the
/// one that ends the episode, pays +1, so the return equals the episode
/// length.
#[derive(Clone, Debug, PartialEq)]
pub struct CartPole {
    x: f64,
    x_dot: f64,
    theta: f64,
    theta_dot: f64,
    steps: usize,
    terminal: bool,
}

impl Default for CartPole {
    fn default() -> Self {
        Self::new()
    }
}

impl CartPole {
    pub fn new() -> Self {
        Self {
            x: 0.0,
            x_dot: 0.0,
            theta: 0.0,
            theta_dot: 0.0,
            steps: 0,
            terminal: false,
        }
    }

    /// `[x, x_dot, theta, theta_dot]`
    pub fn state(&self) -> [f64; 4] {
        [self.x, self.x_dot, self.theta, self.theta_dot]
    }

    pub fn set_state(&mut self, state: [f64; 4]) {
        [self.x, self.x_dot, self.theta, self.theta_dot] = state;
    }

    fn out_of_bounds(&self) -> bool {
        self.x.abs() > X_LIMIT || self.theta.abs() > THETA_LIMIT_DEGREES.to_radians()
    }
}

impl Environment for CartPole {
    fn reset(&mut self, seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || rng.random_range(-0.05..=0.05);
        *self = Self {
            x: draw(),
            x_dot: draw(),
            theta: draw(),
            theta_dot: draw(),
            steps: 0,
            terminal: false,
        };
        self.observation()
    }

    fn step(&mut self, action: ActionIndex) -> Result<StepResult> {
        if self.terminal {
            return Err(Error::Terminal);
        }
        check_action(action, 2)?;
        let force = if action == 1 { FORCE_MAG } else { -FORCE_MAG };
        let (sin, cos) = self.theta.sin_cos();
        let temp = (force + POLE_MASS_LENGTH * self.theta_dot * self.theta_dot * sin) / TOTAL_MASS;
        let theta_acc = (GRAVITY * sin - cos * temp)
            / (HALF_POLE_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / TOTAL_MASS));
        let x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos / TOTAL_MASS;

        self.x += TAU * self.x_dot;
        self.x_dot += TAU * x_acc;
        self.theta += TAU * self.theta_dot;
        self.theta_dot += TAU * theta_acc;
        self.steps += 1;
        self.terminal = self.out_of_bounds() || self.steps >= MAX_EPISODE_STEPS;

        Ok(StepResult {
            observation: self.observation(),
            reward: 1.0,
            done: self.terminal,
        })
    }

    fn legal_actions(&self) -> Result<Vec<ActionIndex>> {
        if self.terminal {
            return Err(Error::Terminal);
        }
        Ok(vec![0, 1])
    }

    fn observation(&self) -> Observation {
        Observation(self.state().to_vec())
    }

    fn action_size(&self) -> usize {
        2
    }

    fn observation_size(&self) -> usize {
        4
    }

    fn step_count(&self) -> usize {
        self.steps
    }

    fn is_terminal(&self) -> bool {
        self.terminal
    }

    fn max_steps(&self) -> usize {
        MAX_EPISODE_STEPS
    }
}
