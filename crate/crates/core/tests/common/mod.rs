//! Oracles shared by the integration tests and the acceptance report.
#![allow(dead_code)]

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mzero::envs::{ActionIndex, Env, EnvKind, Environment, Observation};
use mzero::mcts::{self, Inference, Model, SearchConfig, TopUpBudget};
use mzero::net::{LossMode, MuZeroNet, NetConfig, UnrollOptions};
use mzero::replay::{
    build_sim_trajectory, effective_lookahead, n_step_value, Origin, TrainingSample,
};
use mzero::trainer::{combined_loss, loss_and_gradients, scale_weights, LossWeights};

/// Outcome of one oracle: whether it held and a one-line account.
pub struct Check {
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

pub fn small_config(rng: &mut ChaCha8Rng, mode: LossMode) -> NetConfig {
    let board = mode == LossMode::Board;
    NetConfig {
        observation_size: rng.random_range(2..5),
        action_size: rng.random_range(2..4),
        hidden_size: rng.random_range(2..5),
        layer_width: rng.random_range(3..6),
        value_support: if board { 1 } else { 5 },
        reward_support: if board { 1 } else { 5 },
        squash_values: !board && rng.random_bool(0.5),
        normalize_hidden: rng.random_bool(0.5),
    }
}

/// A net whose every parameter, output heads included, is drawn from `[-scale, scale]`.
pub fn random_net(config: NetConfig, rng: &mut ChaCha8Rng, scale: f64) -> MuZeroNet {
    let mut net = MuZeroNet::new(config, rng.random()).unwrap();
    let flat: Vec<f64> = (0..net.params.count())
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    net.params.set_flat(&flat);
    net
}

fn random_policy(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

pub fn random_sample(
    rng: &mut ChaCha8Rng,
    c: &NetConfig,
    unroll: usize,
    origin: Origin,
) -> TrainingSample {
    let bound = if c.value_support == 1 { 1.0 } else { 1.8 };
    TrainingSample {
        origin,
        observation: Observation(
            (0..c.observation_size)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        ),
        actions: (0..unroll)
            .map(|_| rng.random_range(0..c.action_size))
            .collect(),
        value_targets: (0..=unroll)
            .map(|_| rng.random_range(-bound..bound))
            .collect(),
        reward_targets: (0..=unroll)
            .map(|k| {
                if k == 0 {
                    0.0
                } else {
                    rng.random_range(-bound..bound)
                }
            })
            .collect(),
        policy_targets: (0..=unroll)
            .map(|_| random_policy(rng, c.action_size))
            .collect(),
        policy_mask: (0..=unroll)
            .map(|_| if rng.random_bool(0.8) { 1.0 } else { 0.0 })
            .collect(),
    }
}

pub fn random_batch(
    rng: &mut ChaCha8Rng,
    c: &NetConfig,
    rows: usize,
    unroll: usize,
    origin: Origin,
) -> Vec<TrainingSample> {
    (0..rows)
        .map(|_| random_sample(rng, c, unroll, origin))
        .collect()
}

fn mode_of(c: &NetConfig) -> LossMode {
    if c.value_support == 1 {
        LossMode::Board
    } else {
        LossMode::Mdp
    }
}

/// Relative error of reverse-mode gradients against central differences of
/// the combined loss, with every network and both sample sides involved.
pub fn gradient_oracle(draws: usize, tolerance: f64, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for draw in 0..draws {
        let mode = if draw % 4 == 3 {
            LossMode::Board
        } else {
            LossMode::Mdp
        };
        let config = small_config(&mut rng, mode);
        let mut net = random_net(config.clone(), &mut rng, 0.8);
        let unroll = rng.random_range(1..4);
        let rows = rng.random_range(1..4);
        let real = random_batch(&mut rng, &config, rows, unroll, Origin::Real);
        let sim = random_batch(&mut rng, &config, rows, unroll, Origin::Simulated);
        let w = LossWeights {
            alpha: rng.random_range(0.1..1.0),
            beta: rng.random_range(0.1..1.0),
            gamma_w: rng.random_range(0.1..1.0),
            delta: rng.random_range(0.1..1.0),
        };
        let scaled = scale_weights(w).unwrap();
        let opts = UnrollOptions {
            mode,
            dynamics_grad_scale: 1.0,
        };
        let real_refs: Vec<&TrainingSample> = real.iter().collect();
        let sim_refs: Vec<&TrainingSample> = sim.iter().collect();

        let (_, grads) = loss_and_gradients(&net, &real_refs, &sim_refs, scaled, opts);
        let analytic = grads.flat();
        let base = net.params.flat();
        let h = 1e-6;
        let mut numeric = vec![0.0; base.len()];
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] = base[i] + h;
            net.params.set_flat(&p);
            let up = combined_loss(&net, &real_refs, &sim_refs, scaled, opts).total;
            p[i] = base[i] - h;
            net.params.set_flat(&p);
            let down = combined_loss(&net, &real_refs, &sim_refs, scaled, opts).total;
            numeric[i] = (up - down) / (2.0 * h);
        }
        net.params.set_flat(&base);
        let diff: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = analytic
            .iter()
            .map(|a| a * a)
            .sum::<f64>()
            .sqrt()
            .max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt())
            .max(1e-12);
        worst = worst.max(diff / norm);
    }
    Check::new(
        worst <= tolerance,
        format!("{draws} draws, worst relative error {worst:.2e} (tolerance {tolerance:.0e})"),
    )
}

/// Deterministic fake model. A hidden state is a single integer label; priors,
/// rewards and values are fixed functions of the label.
pub struct Scripted {
    pub actions: usize,
}

impl Scripted {
    fn label(hidden: &[f64], action: ActionIndex, actions: usize) -> f64 {
        ((hidden[0] as u64 * actions as u64 + action as u64 + 1) % 1_000_003) as f64
    }

    fn inference(&self, label: f64) -> Inference {
        let l = label as u64;
        let raw: Vec<f64> = (0..self.actions)
            .map(|a| 1.0 + ((l * 7 + a as u64 * 13) % 11) as f64)
            .collect();
        let s: f64 = raw.iter().sum();
        Inference {
            hidden: vec![label],
            reward: ((l * 5) % 7) as f64 / 2.0 - 1.0,
            value: ((l * 3) % 13) as f64 / 4.0 - 1.5,
            policy: raw.into_iter().map(|v| v / s).collect(),
        }
    }
}

impl Model for Scripted {
    fn action_size(&self) -> usize {
        self.actions
    }
    fn initial(&self, _obs: &Observation) -> mzero::Result<Inference> {
        let mut inf = self.inference(0.0);
        inf.reward = 0.0;
        Ok(inf)
    }
    fn recurrent(&self, hidden: &[f64], action: ActionIndex) -> mzero::Result<Inference> {
        Ok(self.inference(Self::label(hidden, action, self.actions)))
    }
}

#[derive(Default, Clone)]
struct RefEdge {
    n: u32,
    w: f64,
}

/// Independent replay of PUCT selection, expansion and backup keyed by action paths.
pub fn reference_search(
    model: &Scripted,
    sims: usize,
    discount: f64,
    two_player: bool,
) -> HashMap<Vec<usize>, Vec<(u32, f64)>> {
    let (c1, c2) = (1.25, 19652.0);
    let factor = if two_player { -discount } else { discount };
    let mut expanded: HashMap<Vec<usize>, (Inference, Vec<RefEdge>)> = HashMap::new();
    let root = model.initial(&Observation(vec![])).unwrap();
    expanded.insert(vec![], (root, vec![RefEdge::default(); model.actions]));
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..sims {
        let mut path: Vec<usize> = Vec::new();
        loop {
            let (inf, edges) = &expanded[&path];
            let total: u32 = edges.iter().map(|e| e.n).sum();
            let explore =
                (f64::from(total) + 1.0).sqrt() * (c1 + ((f64::from(total) + c2 + 1.0) / c2).ln());
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for (a, e) in edges.iter().enumerate() {
                let q = if e.n > 0 {
                    let q = e.w / f64::from(e.n);
                    if hi > lo {
                        (q - lo) / (hi - lo)
                    } else {
                        q
                    }
                } else {
                    0.0
                };
                let score = q + inf.policy[a] * explore / (1.0 + f64::from(e.n));
                if score > best_score {
                    best = a;
                    best_score = score;
                }
            }
            path.push(best);
            if !expanded.contains_key(&path) {
                break;
            }
        }
        let parent = &path[..path.len() - 1];
        let leaf = model
            .recurrent(&expanded[parent].0.hidden, path[path.len() - 1])
            .unwrap();
        let leaf_value = leaf.value;
        expanded.insert(
            path.clone(),
            (leaf, vec![RefEdge::default(); model.actions]),
        );
        let mut g = leaf_value;
        for depth in (0..path.len()).rev() {
            let child = &path[..=depth];
            let reward = if two_player {
                0.0
            } else {
                expanded[child].0.reward
            };
            g = reward + factor * g;
            let e = &mut expanded.get_mut(&path[..depth]).unwrap().1[path[depth]];
            e.n += 1;
            e.w += g;
            let q = e.w / f64::from(e.n);
            lo = lo.min(q);
            hi = hi.max(q);
        }
    }
    expanded
        .into_iter()
        .map(|(k, (_, edges))| {
            (
                k,
                edges
                    .iter()
                    .map(|e| (e.n, if e.n > 0 { e.w / f64::from(e.n) } else { 0.0 }))
                    .collect(),
            )
        })
        .collect()
}

/// Tree statistics of the library search, keyed the same way as [`reference_search`].
pub fn library_search(
    model: &Scripted,
    sims: usize,
    discount: f64,
    two_player: bool,
) -> HashMap<Vec<usize>, Vec<(u32, f64)>> {
    let mut config = SearchConfig::new(sims, discount);
    config.two_player = two_player;
    let legal: Vec<usize> = (0..model.actions).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let r = mcts::run_search(model, &Observation(vec![]), &legal, config, &mut rng).unwrap();
    let mut out = HashMap::new();
    let mut stack = vec![(r.root, Vec::new())];
    while let Some((id, key)) = stack.pop() {
        let node = &r.tree.nodes[id];
        out.insert(
            key.clone(),
            node.edges.iter().map(|e| (e.visit_count, e.q())).collect(),
        );
        for (a, e) in node.edges.iter().enumerate() {
            if let Some(c) = e.child {
                let mut k = key.clone();
                k.push(a);
                stack.push((c, k));
            }
        }
    }
    out
}

pub fn mcts_oracle() -> Check {
    let mut notes = Vec::new();
    let mut pass = true;
    for actions in [2, 3] {
        for two_player in [false, true] {
            for sims in [1, 5, 25, 50] {
                let model = Scripted { actions };
                let discount = if two_player { 1.0 } else { 0.97 };
                let lib = library_search(&model, sims, discount, two_player);
                let reference = reference_search(&model, sims, discount, two_player);
                let root_visits: u32 = lib[&Vec::new()].iter().map(|e| e.0).sum();
                if lib != reference || root_visits as usize != sims {
                    pass = false;
                    notes.push(format!(
                        "mismatch at actions={actions} two_player={two_player} sims={sims}"
                    ));
                }
            }
        }
    }
    let detail = if pass {
        "N and Q equal the independent replay exactly; root visits = sims for 1, 5, 25, 50"
            .to_string()
    } else {
        notes.join("; ")
    };
    Check::new(pass, detail)
}

/// Direct `Σ γ^{i-1} r_{t+i} + γ^m v_{t+m}` with `m = min(n, N - t)`.
pub fn reference_n_step(
    rewards: &[f64],
    values: &[f64],
    t: usize,
    n: usize,
    discount: f64,
    horizon: usize,
) -> f64 {
    let m = if n < horizon - t { n } else { horizon - t };
    let mut z = 0.0;
    for i in 1..=m {
        z += discount.powi(i as i32 - 1) * rewards[t + i];
    }
    z + discount.powi(m as i32) * values[t + m]
}

pub fn target_oracle(sequences: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut clamp_ok = true;
    for _ in 0..sequences {
        let horizon = rng.random_range(1..40);
        let n = rng.random_range(1..60);
        let discount = rng.random_range(0.5..1.0);
        let rewards: Vec<f64> = (0..=horizon).map(|_| rng.random_range(-5.0..5.0)).collect();
        let values: Vec<f64> = (0..=horizon)
            .map(|_| rng.random_range(-20.0..20.0))
            .collect();
        for t in 0..=horizon {
            let got = n_step_value(&rewards, &values, t, n, discount, horizon);
            let want = reference_n_step(&rewards, &values, t, n, discount, horizon);
            worst = worst.max((got - want).abs());
            let m = effective_lookahead(t, n, horizon);
            clamp_ok &= m == n.min(horizon - t);
            let clamped = n_step_value(&rewards, &values, t, horizon - t, discount, horizon);
            if n >= horizon - t {
                clamp_ok &= got == clamped;
            }
        }
    }
    Check::new(
        worst <= 1e-9 && clamp_ok,
        format!("{sequences} sequences, max abs error {worst:.1e}; look-ahead clamped to N-t at every index: {clamp_ok}"),
    )
}

fn replay_rewards(env: &Env, actions: &[ActionIndex]) -> Option<Vec<f64>> {
    let mut env = env.clone();
    let mut rewards = Vec::new();
    for &a in actions {
        let r = env.step(a).ok()?;
        rewards.push(r.reward);
        if r.done {
            break;
        }
    }
    Some(rewards)
}

pub fn provenance_oracle(positions: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    let mut nonzero = 0;
    for i in 0..positions {
        let (mut env, hidden) = if i % 2 == 0 {
            (
                Env::new(EnvKind::Minigrid, rng.random_range(3..7)).unwrap(),
                5,
            )
        } else {
            (Env::new(EnvKind::Tictactoe, 0).unwrap(), 8)
        };
        env.reset(rng.random());
        let walk = rng.random_range(0..env.max_steps());
        for _ in 0..walk {
            let legal = env.legal_actions().unwrap();
            if env
                .step(legal[rng.random_range(0..legal.len())])
                .unwrap()
                .done
            {
                env.reset(rng.random());
            }
        }
        let two_player = env.is_two_player();
        let config = NetConfig {
            observation_size: env.observation_size(),
            action_size: env.action_size(),
            hidden_size: hidden,
            layer_width: 2 * hidden,
            value_support: if two_player { 1 } else { 21 },
            reward_support: if two_player { 1 } else { 21 },
            squash_values: false,
            normalize_hidden: false,
        };
        let net = random_net(config, &mut rng, 1.0);
        let mut search = SearchConfig::new(
            rng.random_range(1..30),
            if two_player { 1.0 } else { 0.997 },
        );
        search.two_player = two_player;
        let legal = env.legal_actions().unwrap();
        let mut r = mcts::run_search(&net, &env.observation(), &legal, search, &mut rng).unwrap();
        let unroll = rng.random_range(1..10);
        let traj = build_sim_trajectory(
            &env,
            &mut r.tree,
            r.root,
            unroll,
            TopUpBudget::for_search(search.num_simulations),
            &net,
        )
        .unwrap();
        nonzero += usize::from(traj.rewards.iter().any(|&x| x != 0.0));
        if replay_rewards(&env, &traj.actions) != Some(traj.rewards.clone()) {
            mismatches += 1;
        }
    }
    Check::new(
        mismatches == 0,
        format!("{positions} positions, {mismatches} mismatches ({nonzero} paths with a nonzero reward)"),
    )
}

pub fn scaling_oracle() -> Check {
    let w = |a, b, g, d| LossWeights {
        alpha: a,
        beta: b,
        gamma_w: g,
        delta: d,
    };
    let cases = [
        (w(1.0, 1.0, 0.0, 0.0), w(1.0, 1.0, 0.0, 0.0)),
        (w(1.0, 1.0, 1.0, 1.0), w(0.5, 0.5, 0.5, 0.5)),
        (w(1.0, 1.0, 0.5, 0.0), w(2.0 / 3.0, 1.0, 1.0 / 3.0, 0.0)),
    ];
    let close = |a: &LossWeights, b: &LossWeights| {
        [
            (a.alpha, b.alpha),
            (a.beta, b.beta),
            (a.gamma_w, b.gamma_w),
            (a.delta, b.delta),
        ]
        .iter()
        .all(|(x, y)| (x - y).abs() <= 1e-12)
    };
    let cases_ok = cases
        .iter()
        .all(|(input, want)| close(&scale_weights(*input).unwrap(), want));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut invariant = true;
    for _ in 0..1000 {
        let base = w(
            rng.random_range(0.01..5.0),
            rng.random_range(0.01..5.0),
            rng.random_range(0.0..5.0),
            rng.random_range(0.0..5.0),
        );
        let c = rng.random_range(0.001..1000.0);
        let scaled = w(
            base.alpha * c,
            base.beta * c,
            base.gamma_w * c,
            base.delta * c,
        );
        invariant &= close(
            &scale_weights(base).unwrap(),
            &scale_weights(scaled).unwrap(),
        );
    }
    Check::new(
        cases_ok && invariant,
        format!("fixed cases: {cases_ok}; invariant under 1000 positive rescalings: {invariant}"),
    )
}

/// Per-sample forward path through the public inference functions.
pub fn baseline_loss(net: &MuZeroNet, batch: &[TrainingSample]) -> f64 {
    let mode = mode_of(&net.config);
    let mut total = 0.0;
    for s in batch {
        let unroll = s.actions.len();
        let mut out = net.initial_inference(&s.observation).unwrap();
        let t = net.loss_terms(&out, 0.0, s.value_targets[0], &s.policy_targets[0], mode);
        total += t.value + s.policy_mask[0] * t.policy;
        for k in 1..=unroll {
            out = net
                .recurrent_inference(&out.hidden_state, s.actions[k - 1])
                .unwrap();
            let t = net.loss_terms(
                &out,
                s.reward_targets[k],
                s.value_targets[k],
                &s.policy_targets[k],
                mode,
            );
            total += (t.reward + t.value + s.policy_mask[k] * t.policy) / unroll as f64;
        }
    }
    total / batch.len() as f64
}

pub fn baseline_oracle(batches: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for i in 0..batches {
        let mode = if i % 5 == 4 {
            LossMode::Board
        } else {
            LossMode::Mdp
        };
        let config = small_config(&mut rng, mode);
        let net = random_net(config.clone(), &mut rng, 0.8);
        let unroll = rng.random_range(1..6);
        let rows = rng.random_range(1..9);
        let real = random_batch(&mut rng, &config, rows, unroll, Origin::Real);
        let sim = random_batch(&mut rng, &config, 4, unroll, Origin::Simulated);
        let weights = scale_weights(LossWeights {
            alpha: 1.0,
            beta: 1.0,
            gamma_w: 0.0,
            delta: 0.0,
        })
        .unwrap();
        let real_refs: Vec<&TrainingSample> = real.iter().collect();
        let sim_refs: Vec<&TrainingSample> = sim.iter().collect();
        let opts = UnrollOptions {
            mode,
            dynamics_grad_scale: 0.5,
        };
        let got = combined_loss(&net, &real_refs, &sim_refs, weights, opts).total;
        worst = worst.max((got - baseline_loss(&net, &real)).abs());
    }
    Check::new(
        worst <= 1e-9,
        format!("{batches} batches, max abs difference {worst:.1e}"),
    )
}

/// Every 6-step MiniGrid(3) sequence: reward 10 exactly when the first four
/// moves are two rights and two downs, and the episode then ends at the goal.
pub fn minigrid_enumeration() -> Check {
    let mut paying = 0;
    let mut rule_ok = true;
    for code in 0..64u32 {
        let actions: Vec<usize> = (0..6).map(|i| ((code >> i) & 1) as usize).collect();
        let mut env = Env::new(EnvKind::Minigrid, 3).unwrap();
        env.reset(0);
        let mut total = 0.0;
        let mut steps = 0;
        for &a in &actions {
            if env.is_terminal() {
                break;
            }
            total += env.step(a).unwrap().reward;
            steps += 1;
        }
        let rights = actions[..4].iter().filter(|&&a| a == 0).count();
        let optimal_prefix = rights == 2;
        rule_ok &= env.is_terminal();
        rule_ok &= if optimal_prefix {
            total == 10.0 && steps == 4
        } else {
            total == 0.0 && steps == 6
        };
        paying += usize::from(total == 10.0);
    }
    // Each of the C(4,2) = 6 optimal prefixes is followed by 4 ignored continuations.
    Check::new(
        rule_ok && paying == 6 * 4,
        format!("{paying}/64 sequences pay 10 (6 optimal prefixes x 4 continuations); rules hold: {rule_ok}"),
    )
}

/// Mean reward of a uniform random policy on MiniGrid(3).
pub fn minigrid_uniform_mean(episodes: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = Env::new(EnvKind::Minigrid, 3).unwrap();
    let mut total = 0.0;
    for _ in 0..episodes {
        env.reset(0);
        while !env.is_terminal() {
            total += env.step(rng.random_range(0..2)).unwrap().reward;
        }
    }
    total / episodes as f64
}
