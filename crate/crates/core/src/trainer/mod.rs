//! Self-play generation, the combined-loss training step, and evaluation.

mod loss;
mod weights;

pub use loss::{check_finite, combined_loss, loss_and_gradients, LossBreakdown};
pub use weights::{scale_weights, LossWeights, Stage, WeightSchedule};

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::mcts::{policy_from_visits, run_search, sample_action, SearchConfig, TopUpBudget};
use crate::net::{LossMode, MuZeroNet, Sgd, UnrollOptions};
use crate::replay::{build_sim_trajectory, sample_batch, GameHistory, ReplayBuffer, TargetConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub training_steps: u64,
    pub batch_size: usize,
    pub unroll_steps: usize,
    pub td_steps: usize,
    pub buffer_capacity: usize,
    /// Self-play games stored before the first gradient step.
    pub warmup_games: usize,
    /// Self-play games generated before each block of gradient steps.
    pub games_per_cycle: usize,
    pub batches_per_cycle: usize,
    pub lr_init: f64,
    pub lr_decay_rate: f64,
    pub lr_decay_steps: u64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Gradient factor on hidden states entering the dynamics function.
    pub dynamics_grad_scale: f64,
    /// `(from_step, τ)` stages for acting during self-play.
    pub temperature: Vec<(u64, f64)>,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    /// Mean evaluation reward that counts as solved, if the task has one.
    pub solved_threshold: Option<f64>,
    /// Number of consecutive evaluations averaged for the solved check.
    pub solved_window: usize,
    /// Evaluations averaged into the final reward.
    pub final_window: usize,
}

impl TrainConfig {
    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("training_steps", self.training_steps as usize),
            ("batch_size", self.batch_size),
            ("unroll_steps", self.unroll_steps),
            ("td_steps", self.td_steps),
            ("buffer_capacity", self.buffer_capacity),
            ("games_per_cycle", self.games_per_cycle),
            ("batches_per_cycle", self.batches_per_cycle),
            ("lr_decay_steps", self.lr_decay_steps as usize),
            ("eval_interval", self.eval_interval as usize),
            ("eval_episodes", self.eval_episodes),
            ("solved_window", self.solved_window),
            ("final_window", self.final_window),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("train.{name} must be positive")));
            }
        }
        if !(self.lr_init > 0.0) || !(self.lr_decay_rate > 0.0) {
            return Err(Error::Config(
                "learning rate settings must be positive".into(),
            ));
        }
        match self.temperature.first() {
            Some((0, _)) => {}
            _ => {
                return Err(Error::Config(
                    "train.temperature must start at step 0".into(),
                ))
            }
        }
        if self.temperature.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Config(
                "train.temperature steps must be strictly increasing".into(),
            ));
        }
        if self.temperature.iter().any(|&(_, t)| !(t >= 0.0)) {
            return Err(Error::Config(
                "train.temperature values must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Staircase decay: `lr_init · rate^⌊step / decay_steps⌋`.
    pub fn learning_rate(&self, step: u64) -> f64 {
        self.lr_init * self.lr_decay_rate.powi((step / self.lr_decay_steps) as i32)
    }

    pub fn temperature_at(&self, step: u64) -> f64 {
        self.temperature
            .iter()
            .rev()
            .find(|(s, _)| *s <= step)
            .map_or(1.0, |&(_, t)| t)
    }
}

/// Per-episode evaluation rewards.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Episode totals, or first-seat totals for two-player games.
    pub rewards: Vec<f64>,
    /// Second-seat totals for two-player games.
    pub opponent_rewards: Option<Vec<f64>>,
}

impl EvalReport {
    pub fn mean(&self) -> f64 {
        mean(&self.rewards)
    }

    pub fn min(&self) -> f64 {
        self.rewards.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.rewards
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn opponent_mean(&self) -> Option<f64> {
        self.opponent_rewards.as_deref().map(mean)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// One metrics row, written at every evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub step: u64,
    pub eval_mean: f64,
    pub eval_min: f64,
    pub eval_max: f64,
    pub opponent_mean: Option<f64>,
    /// Loss components averaged over the steps since the previous record.
    pub losses: LossBreakdown,
    /// Unscaled weights active at `step`.
    pub weights: LossWeights,
    pub buffer_games: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub records: Vec<EvalRecord>,
    pub final_reward: f64,
    pub steps_until_solved: Option<u64>,
}

/// Mean of the last `window` evaluation means.
pub fn final_reward(records: &[EvalRecord], window: usize) -> f64 {
    let tail = &records[records.len().saturating_sub(window)..];
    tail.iter().map(|r| r.eval_mean).sum::<f64>() / tail.len().max(1) as f64
}

/// First step at which the mean of `window` consecutive evaluations reaches `threshold`.
pub fn steps_until_solved(records: &[EvalRecord], threshold: f64, window: usize) -> Option<u64> {
    records
        .windows(window)
        .find(|w| w.iter().map(|r| r.eval_mean).sum::<f64>() / window as f64 >= threshold)
        .map(|w| w[window - 1].step)
}

/// Plays one self-play episode, acting on visit counts at temperature `τ`.
///
/// When `sim_unroll` is set, every step also records the greedy path from
/// its search tree, replayed on a clone of the environment.
pub fn play_episode<E: Environment, R: Rng + ?Sized>(
    net: &MuZeroNet,
    env: &mut E,
    search: SearchConfig,
    temperature: f64,
    sim_unroll: Option<usize>,
    rng: &mut R,
) -> Result<GameHistory> {
    env.reset(rng.random());
    let mut game = GameHistory::default();
    loop {
        let observation = env.observation();
        let legal = env.legal_actions()?;
        let mut result = run_search(net, &observation, &legal, search, rng)?;
        let acting = policy_from_visits(result.root_node(), temperature)?;
        let action = sample_action(&acting, rng);
        let sim = match sim_unroll {
            Some(k) => Some(build_sim_trajectory(
                env,
                &mut result.tree,
                result.root,
                k,
                TopUpBudget::for_search(search.num_simulations),
                net,
            )?),
            None => None,
        };
        let step = env.step(action)?;
        game.push(
            observation,
            action,
            step.reward,
            result.policy,
            result.root_value,
            step.done,
            sim,
        );
        if step.done {
            return Ok(game);
        }
    }
}

/// Greedy play (τ = 0, no exploration noise) with a fixed snapshot.
///
/// Two-player games put the same snapshot in both seats.
pub fn evaluate<E: Environment>(
    net: &MuZeroNet,
    env: &mut E,
    search: SearchConfig,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::Config(
            "evaluation needs at least one episode".into(),
        ));
    }
    let search = SearchConfig {
        noise: None,
        ..search
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rewards = Vec::with_capacity(episodes);
    let mut opponent = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        env.reset(rng.random());
        let mut seats = [0.0; 2];
        let mut ply = 0;
        loop {
            let obs = env.observation();
            let legal = env.legal_actions()?;
            let result = run_search(net, &obs, &legal, search, &mut rng)?;
            let action = sample_action(&policy_from_visits(result.root_node(), 0.0)?, &mut rng);
            let step = env.step(action)?;
            seats[ply % 2] += step.reward;
            ply += 1;
            if step.done {
                break;
            }
        }
        if env.is_two_player() {
            rewards.push(seats[0]);
            opponent.push(seats[1]);
        } else {
            rewards.push(seats[0] + seats[1]);
        }
    }
    let opponent_rewards = env.is_two_player().then_some(opponent);
    Ok(EvalReport {
        rewards,
        opponent_rewards,
    })
}

/// Training state: parameters, optimizer, buffer and the step clock.
pub struct Trainer<E: Environment> {
    env: E,
    pub net: MuZeroNet,
    sgd: Sgd,
    schedule: WeightSchedule,
    config: TrainConfig,
    search: SearchConfig,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    eval_seed: u64,
    step: u64,
}

impl<E: Environment> Trainer<E> {
    pub fn new(
        env: E,
        net: MuZeroNet,
        search: SearchConfig,
        config: TrainConfig,
        schedule: WeightSchedule,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        schedule.validate()?;
        if net.config.action_size != env.action_size()
            || net.config.observation_size != env.observation_size()
        {
            return Err(Error::Config(format!(
                "network expects {} observations and {} actions, environment has {} and {}",
                net.config.observation_size,
                net.config.action_size,
                env.observation_size(),
                env.action_size()
            )));
        }
        if env.is_two_player() && net.config.value_support != 1 {
            return Err(Error::Config(
                "two-player games need a raw value head (value_support = 1)".into(),
            ));
        }
        let sgd = Sgd::new(&net.params, config.momentum, config.weight_decay);
        let buffer = ReplayBuffer::new(config.buffer_capacity);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eval_seed = rng.random();
        Ok(Self {
            env,
            net,
            sgd,
            schedule,
            config,
            search,
            buffer,
            rng,
            eval_seed,
            step: 0,
        })
    }

    pub fn training_step(&self) -> u64 {
        self.step
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn schedule(&self) -> &WeightSchedule {
        &self.schedule
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    fn targets(&self) -> TargetConfig {
        TargetConfig {
            unroll_steps: self.config.unroll_steps,
            td_steps: self.config.td_steps,
            discount: self.search.discount,
            action_size: self.net.config.action_size,
            two_player: self.env.is_two_player(),
        }
    }

    fn unroll_options(&self) -> UnrollOptions {
        UnrollOptions {
            mode: if self.env.is_two_player() {
                LossMode::Board
            } else {
                LossMode::Mdp
            },
            dynamics_grad_scale: self.config.dynamics_grad_scale,
        }
    }

    /// Plays one game with the current parameters and stores it.
    pub fn generate_game(&mut self) -> Result<()> {
        let sim = self
            .schedule
            .uses_simulated_from(self.step)
            .then_some(self.config.unroll_steps);
        let tau = self.config.temperature_at(self.step);
        let game = play_episode(
            &self.net,
            &mut self.env,
            self.search,
            tau,
            sim,
            &mut self.rng,
        )?;
        debug!(
            "step {}: game of length {} reward {}",
            self.step,
            game.len(),
            game.total_reward()
        );
        self.buffer.push(game);
        Ok(())
    }

    /// One gradient step on a freshly sampled batch.
    pub fn train_step(&mut self) -> Result<LossBreakdown> {
        let scaled = scale_weights(self.schedule.at(self.step))?;
        let pairs = sample_batch(
            &self.buffer,
            self.config.batch_size,
            &self.targets(),
            &mut self.rng,
        )?;
        let real: Vec<_> = pairs.iter().map(|p| &p.real).collect();
        let sim: Vec<_> = pairs.iter().filter_map(|p| p.simulated.as_ref()).collect();
        let (loss, grads) =
            loss_and_gradients(&self.net, &real, &sim, scaled, self.unroll_options());
        check_finite(&loss, &grads, self.step)?;
        let lr = self.config.learning_rate(self.step);
        self.sgd.step(&mut self.net.params, &grads, lr);
        if !self.net.params.all_finite() {
            return Err(Error::NonFinite {
                what: "parameters".into(),
                step: self.step,
            });
        }
        self.step += 1;
        Ok(loss)
    }

    pub fn evaluate(&mut self) -> Result<EvalReport> {
        let mut env = self.env.clone();
        evaluate(
            &self.net,
            &mut env,
            self.search,
            self.config.eval_episodes,
            self.eval_seed ^ self.step,
        )
    }

    /// Runs the full generate/train alternation, calling `observer` after
    /// every evaluation with the record and the current network.
    pub fn run(
        &mut self,
        mut observer: impl FnMut(&EvalRecord, &MuZeroNet) -> Result<()>,
    ) -> Result<RunOutcome> {
        let total = self.config.training_steps;
        let mut records = Vec::new();
        let mut acc = LossBreakdown::default();
        let mut acc_steps = 0u64;
        if self.step == 0 {
            for _ in 0..self.config.warmup_games {
                self.generate_game()?;
            }
        }
        while self.step < total {
            for _ in 0..self.config.games_per_cycle {
                self.generate_game()?;
            }
            for _ in 0..self.config.batches_per_cycle {
                if self.step >= total {
                    break;
                }
                let l = self.train_step()?;
                acc.real_value += l.real_value;
                acc.real_policy += l.real_policy;
                acc.sim_value += l.sim_value;
                acc.sim_policy += l.sim_policy;
                acc.total += l.total;
                acc_steps += 1;
                if self.step.is_multiple_of(self.config.eval_interval) || self.step == total {
                    let record = self.record(acc, acc_steps)?;
                    info!(
                        "step {} eval {:.2} [{:.1}, {:.1}] loss {:.4}",
                        record.step,
                        record.eval_mean,
                        record.eval_min,
                        record.eval_max,
                        record.losses.total
                    );
                    observer(&record, &self.net)?;
                    records.push(record);
                    acc = LossBreakdown::default();
                    acc_steps = 0;
                }
            }
        }
        let final_reward = final_reward(&records, self.config.final_window);
        let solved = self
            .config
            .solved_threshold
            .and_then(|t| steps_until_solved(&records, t, self.config.solved_window));
        Ok(RunOutcome {
            records,
            final_reward,
            steps_until_solved: solved,
        })
    }

    fn record(&mut self, acc: LossBreakdown, steps: u64) -> Result<EvalRecord> {
        let report = self.evaluate()?;
        let n = steps.max(1) as f64;
        Ok(EvalRecord {
            step: self.step,
            eval_mean: report.mean(),
            eval_min: report.min(),
            eval_max: report.max(),
            opponent_mean: report.opponent_mean(),
            losses: LossBreakdown {
                real_value: acc.real_value / n,
                real_policy: acc.real_policy / n,
                sim_value: acc.sim_value / n,
                sim_policy: acc.sim_policy / n,
                total: acc.total / n,
            },
            weights: self.schedule.at(self.step),
            buffer_games: self.buffer.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{Env, EnvKind};
    use crate::net::NetConfig;

    fn minigrid_setup() -> (Env, MuZeroNet, SearchConfig, TrainConfig) {
        let env = Env::new(EnvKind::Minigrid, 3).unwrap();
        let net = MuZeroNet::new(
            NetConfig {
                observation_size: 9,
                action_size: 2,
                hidden_size: 5,
                layer_width: 10,
                value_support: 21,
                reward_support: 21,
                squash_values: false,
                normalize_hidden: true,
            },
            1,
        )
        .unwrap();
        let search = SearchConfig::new(5, 0.997);
        let config = TrainConfig {
            training_steps: 40,
            batch_size: 8,
            unroll_steps: 3,
            td_steps: 3,
            buffer_capacity: 50,
            warmup_games: 0,
            games_per_cycle: 1,
            batches_per_cycle: 10,
            lr_init: 0.02,
            lr_decay_rate: 0.9,
            lr_decay_steps: 1000,
            momentum: 0.9,
            weight_decay: 1e-4,
            dynamics_grad_scale: 0.5,
            temperature: vec![(0, 1.0)],
            eval_interval: 20,
            eval_episodes: 2,
            solved_threshold: None,
            solved_window: 1,
            final_window: 2,
        };
        (env, net, search, config)
    }

    #[test]
    fn learning_rate_staircase() {
        let (_, _, _, c) = minigrid_setup();
        assert_eq!(c.learning_rate(0), 0.02);
        assert_eq!(c.learning_rate(999), 0.02);
        assert!((c.learning_rate(1000) - 0.018).abs() < 1e-15);
        assert!((c.learning_rate(2500) - 0.02 * 0.81).abs() < 1e-15);
    }

    #[test]
    fn baseline_weights_never_build_sim_paths() {
        let (env, net, search, config) = minigrid_setup();
        let schedule = WeightSchedule::constant(LossWeights::new(1.0, 1.0, 0.0, 0.0));
        let mut t = Trainer::new(env, net, search, config, schedule, 3).unwrap();
        t.generate_game().unwrap();
        let g = t.buffer().get(0).unwrap();
        assert!(g.is_consistent());
        assert!(g.sim_trajectories.iter().all(Option::is_none));
    }

    #[test]
    fn off_policy_weights_attach_paths() {
        let (env, net, search, config) = minigrid_setup();
        let k = config.unroll_steps;
        let schedule = WeightSchedule::constant(LossWeights::new(0.0, 0.0, 1.0, 1.0));
        let mut t = Trainer::new(env, net, search, config, schedule, 3).unwrap();
        t.generate_game().unwrap();
        let g = t.buffer().get(0).unwrap();
        for sim in &g.sim_trajectories {
            let sim = sim.as_ref().unwrap();
            assert!(sim.len() >= k || sim.terminated);
            assert_eq!(sim.values.len(), sim.len() + 1);
            assert_eq!(sim.rewards.len(), sim.len());
        }
    }

    #[test]
    fn run_is_reproducible() {
        let run = || {
            let (env, net, search, config) = minigrid_setup();
            let schedule = WeightSchedule::constant(LossWeights::new(1.0, 1.0, 1.0, 1.0));
            let mut t = Trainer::new(env, net, search, config, schedule, 11).unwrap();
            let out = t.run(|_, _| Ok(())).unwrap();
            (out, t.net.params.flat())
        };
        let (a, pa) = run();
        let (b, pb) = run();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        assert_eq!(
            a.records.iter().map(|r| r.step).collect::<Vec<_>>(),
            vec![20, 40]
        );
        assert!(a.records.iter().all(|r| r.losses.sim_value > 0.0));
    }

    #[test]
    fn solved_and_final_windows() {
        let rec = |step, eval_mean| EvalRecord {
            step,
            eval_mean,
            eval_min: 0.0,
            eval_max: 0.0,
            opponent_mean: None,
            losses: LossBreakdown::default(),
            weights: LossWeights::new(1.0, 1.0, 0.0, 0.0),
            buffer_games: 0,
        };
        let records = vec![
            rec(1, 100.0),
            rec(2, 200.0),
            rec(3, 190.0),
            rec(4, 200.0),
            rec(5, 210.0),
        ];
        assert_eq!(steps_until_solved(&records, 195.0, 2), Some(3));
        assert_eq!(steps_until_solved(&records, 195.0, 3), Some(4));
        assert_eq!(steps_until_solved(&records, 300.0, 1), None);
        assert_eq!(final_reward(&records, 2), 205.0);
    }

    #[test]
    fn uniform_minigrid_evaluation_is_deterministic() {
        let (mut env, _, search, _) = minigrid_setup();
        let net = MuZeroNet::zeroed(minigrid_setup().1.config).unwrap();
        let a = evaluate(&net, &mut env, search, 3, 5).unwrap();
        let b = evaluate(&net, &mut env, search, 3, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.opponent_rewards.is_none());
    }
}
