//! Game records, the replay buffer, and training-target construction for
//! both real trajectories and the greedy paths taken from search trees.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::envs::{ActionIndex, Environment, Observation};
use crate::error::{Error, Result};
use crate::mcts::{greedy_path_guided, Model, NodeId, PathGuide, SearchTree, TopUpBudget};
use crate::net::StepTargets;
use crate::net::UnrollBatch;

/// `Σ_{i=1..m} γ^{i-1} u_{t+i} + γ^m v_{t+m}` with `m = min(n, horizon − t)`.
///
/// `rewards[j]` is `u_j`, the reward for the transition into index `j`, and
/// `values[j]` the bootstrap estimate at `j`; both must cover `horizon`.
/// Callers drop the bootstrap past a terminal state by storing 0 there.
pub fn n_step_value(
    rewards: &[f64],
    values: &[f64],
    t: usize,
    n: usize,
    discount: f64,
    horizon: usize,
) -> f64 {
    n_step_with(|j| rewards[j], |j| values[j], t, n, discount, horizon)
}

/// Look-ahead actually used at index `t` of a path of length `horizon`.
pub fn effective_lookahead(t: usize, n: usize, horizon: usize) -> usize {
    n.min(horizon.saturating_sub(t))
}

fn n_step_with(
    reward: impl Fn(usize) -> f64,
    value: impl Fn(usize) -> f64,
    t: usize,
    n: usize,
    discount: f64,
    horizon: usize,
) -> f64 {
    let m = effective_lookahead(t, n, horizon);
    let mut z = 0.0;
    let mut scale = 1.0;
    for i in 1..=m {
        z += scale * reward(t + i);
        scale *= discount;
    }
    z + scale * value(t + m)
}

/// Off-policy path attached to one real timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct SimTrajectory {
    pub actions: Vec<ActionIndex>,
    /// `rewards[i]` comes from stepping a cloned environment with `actions[i]`.
    pub rewards: Vec<f64>,
    /// Node values along the path, `actions.len() + 1` entries; 0 at a terminal end.
    pub values: Vec<f64>,
    /// Visit distributions per path node, `None` where the node has no visits.
    pub policies: Vec<Option<Vec<f64>>>,
    pub terminated: bool,
    pub top_up_simulations: usize,
}

impl SimTrajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

struct EnvGuide<E: Environment> {
    env: E,
    rewards: Vec<f64>,
    error: Option<Error>,
}

impl<E: Environment> PathGuide for EnvGuide<E> {
    fn legal(&mut self) -> Option<Vec<bool>> {
        let legal = self.env.legal_actions().ok()?;
        let mut mask = vec![false; self.env.action_size()];
        for a in legal {
            mask[a] = true;
        }
        Some(mask)
    }

    fn advance(&mut self, action: ActionIndex) -> bool {
        match self.env.step(action) {
            Ok(step) => {
                self.rewards.push(step.reward);
                step.done
            }
            Err(e) => {
                self.error = Some(e);
                true
            }
        }
    }
}

/// Walks the searched tree greedily from `root` while replaying the chosen
/// actions on a clone of `env` (the state the search was run for).
pub fn build_sim_trajectory<E: Environment, M: Model + ?Sized>(
    env: &E,
    tree: &mut SearchTree,
    root: NodeId,
    unroll_steps: usize,
    budget: TopUpBudget,
    model: &M,
) -> Result<SimTrajectory> {
    let mut guide = EnvGuide {
        env: env.clone(),
        rewards: Vec::new(),
        error: None,
    };
    let path = greedy_path_guided(tree, root, unroll_steps, budget, model, &mut guide)?;
    if let Some(e) = guide.error {
        return Err(e);
    }
    let mut values = path.node_values;
    if path.terminated {
        *values.last_mut().expect("path has a final node") = 0.0;
    }
    Ok(SimTrajectory {
        actions: path.actions,
        rewards: guide.rewards,
        values,
        policies: path.policies,
        terminated: path.terminated,
        top_up_simulations: path.top_up_simulations,
    })
}

/// One real episode.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GameHistory {
    /// Observation before each action.
    pub observations: Vec<Observation>,
    pub actions: Vec<ActionIndex>,
    /// `rewards[t]` is the reward for `actions[t]`, from the mover's perspective.
    pub rewards: Vec<f64>,
    pub root_policies: Vec<Vec<f64>>,
    pub root_values: Vec<f64>,
    pub dones: Vec<bool>,
    pub sim_trajectories: Vec<Option<SimTrajectory>>,
}

impl GameHistory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        observation: Observation,
        action: ActionIndex,
        reward: f64,
        root_policy: Vec<f64>,
        root_value: f64,
        done: bool,
        sim: Option<SimTrajectory>,
    ) {
        self.observations.push(observation);
        self.actions.push(action);
        self.rewards.push(reward);
        self.root_policies.push(root_policy);
        self.root_values.push(root_value);
        self.dones.push(done);
        self.sim_trajectories.push(sim);
    }

    pub fn is_consistent(&self) -> bool {
        let n = self.actions.len();
        [
            self.observations.len(),
            self.rewards.len(),
            self.root_policies.len(),
            self.root_values.len(),
            self.dones.len(),
            self.sim_trajectories.len(),
        ]
        .iter()
        .all(|&l| l == n)
    }
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    games: VecDeque<GameHistory>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            games: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, game: GameHistory) {
        if self.games.len() == self.capacity {
            self.games.pop_front();
        }
        self.games.push_back(game);
    }

    pub fn len(&self) -> usize {
        self.games.len()
    }

    pub fn is_empty(&self) -> bool {
        self.games.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn positions(&self) -> usize {
        self.games.iter().map(GameHistory::len).sum()
    }

    pub fn games(&self) -> impl Iterator<Item = &GameHistory> {
        self.games.iter()
    }

    pub fn get(&self, i: usize) -> Option<&GameHistory> {
        self.games.get(i)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Origin {
    Real,
    Simulated,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TargetConfig {
    pub unroll_steps: usize,
    pub td_steps: usize,
    pub discount: f64,
    pub action_size: usize,
    /// Values alternate perspective each ply.
    pub two_player: bool,
}

impl TargetConfig {
    fn backup_factor(&self) -> f64 {
        if self.two_player {
            -self.discount
        } else {
            self.discount
        }
    }
}

/// A K-step trajectory with targets at every unroll step.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub origin: Origin,
    pub observation: Observation,
    /// K actions.
    pub actions: Vec<ActionIndex>,
    /// K + 1 entries.
    pub value_targets: Vec<f64>,
    /// K + 1 entries; entry `k` is the reward for `actions[k - 1]` (entry 0 unused).
    pub reward_targets: Vec<f64>,
    pub policy_targets: Vec<Vec<f64>>,
    /// 0 where the policy loss is masked out.
    pub policy_mask: Vec<f64>,
}

fn uniform(size: usize) -> Vec<f64> {
    vec![1.0 / size as f64; size]
}

/// On-policy sample anchored at real timestep `t`.
pub fn make_real_sample<R: Rng + ?Sized>(
    game: &GameHistory,
    t: usize,
    cfg: &TargetConfig,
    rng: &mut R,
) -> TrainingSample {
    let len = game.len();
    assert!(t < len, "anchor {t} outside a game of length {len}");
    let factor = cfg.backup_factor();
    let reward_at = |j: usize| game.rewards[j - 1];
    let value_at = |j: usize| if j < len { game.root_values[j] } else { 0.0 };

    let mut sample = empty_sample(Origin::Real, game.observations[t].clone(), cfg);
    for k in 0..=cfg.unroll_steps {
        let idx = t + k;
        sample.value_targets.push(if idx < len {
            n_step_with(reward_at, value_at, idx, cfg.td_steps, factor, len)
        } else {
            0.0
        });
        sample.reward_targets.push(if k > 0 && idx <= len {
            game.rewards[idx - 1]
        } else {
            0.0
        });
        if idx < len {
            sample.policy_targets.push(game.root_policies[idx].clone());
            sample.policy_mask.push(1.0);
        } else {
            sample.policy_targets.push(uniform(cfg.action_size));
            sample.policy_mask.push(0.0);
        }
        if k < cfg.unroll_steps {
            sample.actions.push(if idx < len {
                game.actions[idx]
            } else {
                rng.random_range(0..cfg.action_size)
            });
        }
    }
    sample
}

/// Off-policy sample built from the greedy path stored at timestep `t`, if any.
pub fn make_sim_sample<R: Rng + ?Sized>(
    game: &GameHistory,
    t: usize,
    cfg: &TargetConfig,
    rng: &mut R,
) -> Option<TrainingSample> {
    let sim = game.sim_trajectories[t].as_ref()?;
    let len = sim.len();
    let factor = cfg.backup_factor();
    let reward_at = |j: usize| sim.rewards[j - 1];
    let value_at = |j: usize| sim.values[j];

    let mut sample = empty_sample(Origin::Simulated, game.observations[t].clone(), cfg);
    for k in 0..=cfg.unroll_steps {
        let past_end = k > len || (k == len && sim.terminated);
        sample.value_targets.push(if !past_end {
            n_step_with(reward_at, value_at, k, cfg.td_steps, factor, len)
        } else {
            0.0
        });
        sample.reward_targets.push(if k > 0 && k <= len {
            sim.rewards[k - 1]
        } else {
            0.0
        });
        match sim.policies.get(k).and_then(Option::as_ref) {
            Some(pi) if !past_end => {
                sample.policy_targets.push(pi.clone());
                sample.policy_mask.push(1.0);
            }
            _ => {
                sample.policy_targets.push(uniform(cfg.action_size));
                sample.policy_mask.push(0.0);
            }
        }
        if k < cfg.unroll_steps {
            sample.actions.push(if k < len {
                sim.actions[k]
            } else {
                rng.random_range(0..cfg.action_size)
            });
        }
    }
    Some(sample)
}

fn empty_sample(origin: Origin, observation: Observation, cfg: &TargetConfig) -> TrainingSample {
    let steps = cfg.unroll_steps + 1;
    TrainingSample {
        origin,
        observation,
        actions: Vec::with_capacity(cfg.unroll_steps),
        value_targets: Vec::with_capacity(steps),
        reward_targets: Vec::with_capacity(steps),
        policy_targets: Vec::with_capacity(steps),
        policy_mask: Vec::with_capacity(steps),
    }
}

/// Real and simulated samples sharing one anchor.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePair {
    pub game: usize,
    pub anchor: usize,
    pub real: TrainingSample,
    pub simulated: Option<TrainingSample>,
}

/// Draws `batch_size` anchors uniformly over all stored (game, timestep)
/// positions and builds both samples for each.
///
/// Simulated samples use their own random stream, so the real samples are
/// identical whether or not greedy paths were recorded.
pub fn sample_batch<R: Rng + ?Sized>(
    buffer: &ReplayBuffer,
    batch_size: usize,
    cfg: &TargetConfig,
    rng: &mut R,
) -> Result<Vec<SamplePair>> {
    if buffer.is_empty() || buffer.positions() == 0 {
        return Err(Error::Config(
            "cannot sample from an empty replay buffer".into(),
        ));
    }
    let mut sim_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let mut cumulative = Vec::with_capacity(buffer.len());
    let mut total = 0;
    for g in buffer.games() {
        total += g.len();
        cumulative.push(total);
    }
    let mut pairs = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let pos = rng.random_range(0..total);
        let game_idx = cumulative.partition_point(|&c| c <= pos);
        let start = if game_idx == 0 {
            0
        } else {
            cumulative[game_idx - 1]
        };
        let anchor = pos - start;
        let game = buffer.get(game_idx).expect("index within buffer");
        let real = make_real_sample(game, anchor, cfg, rng);
        let simulated = make_sim_sample(game, anchor, cfg, &mut sim_rng);
        pairs.push(SamplePair {
            game: game_idx,
            anchor,
            real,
            simulated,
        });
    }
    Ok(pairs)
}

/// Lays samples out row-wise for the tape.
pub fn to_unroll_batch(samples: &[&TrainingSample], action_size: usize) -> UnrollBatch {
    let rows = samples.len();
    let unroll = samples.first().map_or(0, |s| s.actions.len());
    let mut batch = UnrollBatch {
        rows,
        observations: samples
            .iter()
            .flat_map(|s| s.observation.0.iter().copied())
            .collect(),
        actions: (0..unroll)
            .map(|k| samples.iter().map(|s| s.actions[k]).collect())
            .collect(),
        steps: Vec::with_capacity(unroll + 1),
    };
    for k in 0..=unroll {
        batch.steps.push(StepTargets {
            value: samples.iter().map(|s| s.value_targets[k]).collect(),
            reward: samples.iter().map(|s| s.reward_targets[k]).collect(),
            policy: samples
                .iter()
                .flat_map(|s| {
                    debug_assert_eq!(s.policy_targets[k].len(), action_size);
                    s.policy_targets[k].iter().copied()
                })
                .collect(),
            policy_mask: samples.iter().map(|s| s.policy_mask[k]).collect(),
        });
    }
    batch
}
