//! PUCT search over a learned model, plus the greedy max-visit walk used to
//! pull off-policy training paths out of a finished tree.
//!
//! Edge statistics follow the usual convention: `Q(s, a)` is the running mean
//! of the discounted returns `G = R(s, a) + γ·G_child` backed up through the
//! edge, so it includes the edge's own reward. In two-player mode every ply
//! flips perspective (`G = -γ·G_child`) and rewards inside the tree are zero.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::envs::{ActionIndex, Observation};
use crate::error::{Error, Result};
use crate::net::{policy_probabilities, MuZeroNet};

/// What the search needs from a model: scalar reward and value, a prior.
pub trait Model {
    fn action_size(&self) -> usize;
    fn initial(&self, obs: &Observation) -> Result<Inference>;
    fn recurrent(&self, hidden: &[f64], action: ActionIndex) -> Result<Inference>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub hidden: Vec<f64>,
    pub reward: f64,
    pub value: f64,
    /// Prior probabilities over all actions.
    pub policy: Vec<f64>,
}

impl Model for MuZeroNet {
    fn action_size(&self) -> usize {
        self.config.action_size
    }

    fn initial(&self, obs: &Observation) -> Result<Inference> {
        let out = self.initial_inference(obs)?;
        Ok(Inference {
            value: self.scalar_value(&out.value),
            reward: 0.0,
            policy: policy_probabilities(&out.policy_logits),
            hidden: out.hidden_state.0,
        })
    }

    fn recurrent(&self, hidden: &[f64], action: ActionIndex) -> Result<Inference> {
        let out = self.recurrent_inference(&crate::net::HiddenState(hidden.to_vec()), action)?;
        Ok(Inference {
            value: self.scalar_value(&out.value),
            reward: self.scalar_reward(&out.reward),
            policy: policy_probabilities(&out.policy_logits),
            hidden: out.hidden_state.0,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub alpha: f64,
    pub fraction: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchConfig {
    pub num_simulations: usize,
    pub discount: f64,
    pub c1: f64,
    pub c2: f64,
    pub two_player: bool,
    pub noise: Option<NoiseConfig>,
}

impl SearchConfig {
    pub fn new(num_simulations: usize, discount: f64) -> Self {
        Self {
            num_simulations,
            discount,
            c1: 1.25,
            c2: 19652.0,
            two_player: false,
            noise: None,
        }
    }

    fn backup_factor(&self) -> f64 {
        if self.two_player {
            -self.discount
        } else {
            self.discount
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MinMaxBounds {
    pub min_q: f64,
    pub max_q: f64,
}

impl Default for MinMaxBounds {
    fn default() -> Self {
        Self {
            min_q: f64::INFINITY,
            max_q: f64::NEG_INFINITY,
        }
    }
}

impl MinMaxBounds {
    pub fn update(&mut self, q: f64) {
        self.min_q = self.min_q.min(q);
        self.max_q = self.max_q.max(q);
    }

    /// Rescales into `[0, 1]` once two distinct values were seen.
    pub fn normalize(&self, q: f64) -> f64 {
        if self.max_q > self.min_q {
            (q - self.min_q) / (self.max_q - self.min_q)
        } else {
            q
        }
    }
}

pub type NodeId = usize;

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeStats {
    pub visit_count: u32,
    pub value_sum: f64,
    pub prior: f64,
    pub reward: f64,
    pub child: Option<NodeId>,
}

impl EdgeStats {
    pub fn q(&self) -> f64 {
        if self.visit_count == 0 {
            0.0
        } else {
            self.value_sum / f64::from(self.visit_count)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeNode {
    pub hidden_state: Vec<f64>,
    pub edges: Vec<EdgeStats>,
    pub legal: Vec<bool>,
    pub is_expanded: bool,
    /// Plies below the search root; in two-player mode odd depths belong to the opponent.
    pub depth: usize,
    /// Backups through this node, counting its own expansion.
    pub visit_count: u32,
    pub value_sum: f64,
    /// Value from the prediction function at expansion.
    pub predicted_value: f64,
}

impl TreeNode {
    /// Mean backed-up value from this node's player's perspective.
    pub fn value(&self) -> f64 {
        if self.visit_count == 0 {
            self.predicted_value
        } else {
            self.value_sum / f64::from(self.visit_count)
        }
    }

    pub fn child_visits(&self) -> u32 {
        self.edges.iter().map(|e| e.visit_count).sum()
    }

    /// Restricts the node to `legal` actions and renormalises the priors over them.
    pub fn mask(&mut self, legal: &[bool]) {
        self.legal = legal.to_vec();
        let mass: f64 = self
            .edges
            .iter()
            .zip(legal)
            .filter(|(_, &ok)| ok)
            .map(|(e, _)| e.prior)
            .sum();
        let count = legal.iter().filter(|&&ok| ok).count().max(1) as f64;
        for (e, &ok) in self.edges.iter_mut().zip(legal) {
            e.prior = match (ok, mass > 0.0) {
                (false, _) => 0.0,
                (true, true) => e.prior / mass,
                (true, false) => 1.0 / count,
            };
        }
    }
}

#[derive(Clone, Debug)]
pub struct SearchTree {
    pub nodes: Vec<TreeNode>,
    pub bounds: MinMaxBounds,
    pub config: SearchConfig,
}

impl SearchTree {
    pub fn new(config: SearchConfig) -> Self {
        Self {
            nodes: Vec::new(),
            bounds: MinMaxBounds::default(),
            config,
        }
    }

    /// Adds an expanded node; the expansion itself counts as one visit with `value`.
    pub fn add_node(
        &mut self,
        hidden: Vec<f64>,
        priors: &[f64],
        depth: usize,
        value: f64,
    ) -> NodeId {
        let edges = priors
            .iter()
            .map(|&p| EdgeStats {
                visit_count: 0,
                value_sum: 0.0,
                prior: p,
                reward: 0.0,
                child: None,
            })
            .collect();
        self.nodes.push(TreeNode {
            hidden_state: hidden,
            edges,
            legal: vec![true; priors.len()],
            is_expanded: true,
            depth,
            visit_count: 1,
            value_sum: value,
            predicted_value: value,
        });
        self.nodes.len() - 1
    }

    /// Hangs `child` under `parent` via `action`, recording the transition reward.
    pub fn attach(&mut self, parent: NodeId, action: ActionIndex, child: NodeId, reward: f64) {
        let edge = &mut self.nodes[parent].edges[action];
        edge.child = Some(child);
        edge.reward = reward;
    }

    /// Backs `leaf_value` up along `path`, a list of `(node, action)` pairs
    /// from the selection start to the edge whose child is the new leaf.
    ///
    /// The leaf's own expansion visit is recorded by [`SearchTree::add_node`].
    pub fn backup(&mut self, path: &[(NodeId, ActionIndex)], leaf_value: f64) {
        let factor = self.config.backup_factor();
        let mut g = leaf_value;
        for &(node, action) in path.iter().rev() {
            let edge = &mut self.nodes[node].edges[action];
            g = edge.reward + factor * g;
            edge.visit_count += 1;
            edge.value_sum += g;
            let q = edge.q();
            self.bounds.update(q);
            let n = &mut self.nodes[node];
            n.visit_count += 1;
            n.value_sum += g;
        }
    }

    /// One selection → expansion → backup pass starting at `start`.
    pub fn simulate<M: Model + ?Sized>(&mut self, model: &M, start: NodeId) -> Result<()> {
        let mut path = Vec::new();
        let mut node = start;
        loop {
            let action = select_action_ucb(
                &self.nodes[node],
                &self.bounds,
                self.config.c1,
                self.config.c2,
            );
            path.push((node, action));
            match self.nodes[node].edges[action].child {
                Some(child) => node = child,
                None => break,
            }
        }
        let &(parent, action) = path.last().expect("selection yields at least one edge");
        let inf = model.recurrent(&self.nodes[parent].hidden_state, action)?;
        let reward = if self.config.two_player {
            0.0
        } else {
            inf.reward
        };
        let depth = self.nodes[parent].depth + 1;
        let child = self.add_node(inf.hidden, &inf.policy, depth, inf.value);
        self.attach(parent, action, child, reward);
        self.backup(&path, inf.value);
        Ok(())
    }
}

/// PUCT choice at an expanded node; ties go to the lowest action index.
///
/// Score is the min-max normalised `Q` (0 for unvisited edges) plus
/// `P · √N(s) / (1 + N(s,a)) · (c1 + ln((Σ_b N(s,b) + c2 + 1) / c2))`, where
/// `N(s)` counts the node's own expansion visit.
pub fn select_action_ucb(node: &TreeNode, bounds: &MinMaxBounds, c1: f64, c2: f64) -> ActionIndex {
    let total = f64::from(node.child_visits());
    let explore = (total + 1.0).sqrt() * (c1 + ((total + c2 + 1.0) / c2).ln());
    let mut best = None;
    let mut best_score = f64::NEG_INFINITY;
    for (a, e) in node.edges.iter().enumerate() {
        if !node.legal[a] {
            continue;
        }
        let q = if e.visit_count > 0 {
            bounds.normalize(e.q())
        } else {
            0.0
        };
        let u = e.prior * explore / (1.0 + f64::from(e.visit_count));
        let score = q + u;
        if best.is_none() || score > best_score {
            best = Some(a);
            best_score = score;
        }
    }
    best.expect("node has at least one legal action")
}

/// `π(a) ∝ N(a)^{1/τ}`; `τ = 0` is a one-hot on the most visited action.
pub fn policy_from_visits(node: &TreeNode, temperature: f64) -> Result<Vec<f64>> {
    visit_distribution(node, temperature)
        .ok_or_else(|| Error::Config("cannot form a policy from zero visits".into()))
}

fn visit_distribution(node: &TreeNode, temperature: f64) -> Option<Vec<f64>> {
    let visits: Vec<f64> = node
        .edges
        .iter()
        .zip(&node.legal)
        .map(|(e, &ok)| if ok { f64::from(e.visit_count) } else { 0.0 })
        .collect();
    let max = visits.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return None;
    }
    if temperature == 0.0 {
        let best = visits.iter().position(|&v| v == max).unwrap();
        let mut pi = vec![0.0; visits.len()];
        pi[best] = 1.0;
        return Some(pi);
    }
    let powered: Vec<f64> = visits
        .iter()
        .map(|v| (v / max).powf(1.0 / temperature))
        .collect();
    let sum: f64 = powered.iter().sum();
    Some(powered.into_iter().map(|v| v / sum).collect())
}

pub fn sample_action<R: Rng + ?Sized>(policy: &[f64], rng: &mut R) -> ActionIndex {
    let mut x = rng.random::<f64>();
    for (a, &p) in policy.iter().enumerate() {
        if x < p {
            return a;
        }
        x -= p;
    }
    policy.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

#[derive(Clone, Debug)]
pub struct SearchResult {
    pub tree: SearchTree,
    pub root: NodeId,
    /// Visit-count distribution at the root (τ = 1).
    pub policy: Vec<f64>,
    pub root_value: f64,
}

impl SearchResult {
    pub fn root_node(&self) -> &TreeNode {
        &self.tree.nodes[self.root]
    }
}

/// Runs `num_simulations` passes from the root built for `obs`.
pub fn run_search<M: Model + ?Sized, R: Rng + ?Sized>(
    model: &M,
    obs: &Observation,
    legal_actions: &[ActionIndex],
    config: SearchConfig,
    rng: &mut R,
) -> Result<SearchResult> {
    if config.num_simulations == 0 {
        return Err(Error::Config("num_simulations must be at least 1".into()));
    }
    let size = model.action_size();
    let mut legal = vec![false; size];
    for &a in legal_actions {
        if a >= size {
            return Err(Error::InvalidAction { action: a, size });
        }
        legal[a] = true;
    }
    let inf = model.initial(obs)?;
    let mut tree = SearchTree::new(config);
    let root = tree.add_node(inf.hidden, &inf.policy, 0, inf.value);
    tree.nodes[root].mask(&legal);
    if let Some(noise) = config.noise {
        add_exploration_noise(&mut tree.nodes[root], noise, rng);
    }
    for _ in 0..config.num_simulations {
        tree.simulate(model, root)?;
    }
    let policy = policy_from_visits(&tree.nodes[root], 1.0)?;
    let root_value = tree.nodes[root].value();
    Ok(SearchResult {
        tree,
        root,
        policy,
        root_value,
    })
}

fn add_exploration_noise<R: Rng + ?Sized>(node: &mut TreeNode, noise: NoiseConfig, rng: &mut R) {
    let legal: Vec<usize> = (0..node.edges.len()).filter(|&a| node.legal[a]).collect();
    if legal.len() < 2 {
        return;
    }
    let gamma = Gamma::new(noise.alpha, 1.0).expect("dirichlet alpha must be positive");
    let draws: Vec<f64> = legal.iter().map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if sum <= 0.0 {
        return;
    }
    for (&a, d) in legal.iter().zip(draws) {
        let e = &mut node.edges[a];
        e.prior = e.prior * (1.0 - noise.fraction) + noise.fraction * d / sum;
    }
}

/// Lets the greedy walk see the real environment alongside the tree.
pub trait PathGuide {
    /// Legal-action mask at the current path position, `None` when all are legal.
    fn legal(&mut self) -> Option<Vec<bool>>;
    /// Applies `action`; returns `true` once the path has reached a terminal state.
    fn advance(&mut self, action: ActionIndex) -> bool;
}

/// Guide for environments without legality constraints or termination.
pub struct Unguided;

impl PathGuide for Unguided {
    fn legal(&mut self) -> Option<Vec<bool>> {
        None
    }
    fn advance(&mut self, _action: ActionIndex) -> bool {
        false
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TopUpBudget {
    /// Simulations per top-up round at a leaf.
    pub batch: usize,
    /// Total top-up simulations allowed for one walk.
    pub cap: usize,
}

impl TopUpBudget {
    pub fn for_search(num_simulations: usize) -> Self {
        Self {
            batch: num_simulations,
            cap: 10 * num_simulations,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GreedyPath {
    pub actions: Vec<ActionIndex>,
    /// One per path node, `actions.len() + 1` entries.
    pub node_values: Vec<f64>,
    /// Visit distributions per path node; `None` where the node has no child visits.
    pub policies: Vec<Option<Vec<f64>>>,
    pub top_up_simulations: usize,
    /// Trailing actions appended after the top-up budget ran out.
    pub padded: usize,
    /// The guide reported a terminal state after the last action.
    pub terminated: bool,
}

pub fn greedy_path<M: Model + ?Sized>(
    tree: &mut SearchTree,
    root: NodeId,
    min_length: usize,
    budget: TopUpBudget,
    model: &M,
) -> Result<GreedyPath> {
    greedy_path_guided(tree, root, min_length, budget, model, &mut Unguided)
}

/// Descends by maximum visit count (lowest index on ties) until the tree
/// runs out. Whenever the walk hits a node without visited children before
/// `min_length` actions, simulations are run from that node in rounds of
/// `budget.batch` until it has one. If the budget is exhausted the path is
/// padded with the node's highest-prior action and its predicted value.
pub fn greedy_path_guided<M: Model + ?Sized, G: PathGuide + ?Sized>(
    tree: &mut SearchTree,
    root: NodeId,
    min_length: usize,
    budget: TopUpBudget,
    model: &M,
    guide: &mut G,
) -> Result<GreedyPath> {
    let mut path = GreedyPath {
        actions: Vec::new(),
        node_values: Vec::new(),
        policies: Vec::new(),
        top_up_simulations: 0,
        padded: 0,
        terminated: false,
    };
    let mut node = root;
    loop {
        if let Some(legal) = guide.legal() {
            if tree.nodes[node].legal != legal {
                tree.nodes[node].mask(&legal);
            }
        }
        let mut next = max_visit_child(&tree.nodes[node]);
        while next.is_none()
            && path.actions.len() < min_length
            && path.top_up_simulations < budget.cap
        {
            let round = budget
                .batch
                .min(budget.cap - path.top_up_simulations)
                .max(1);
            for _ in 0..round {
                tree.simulate(model, node)?;
            }
            path.top_up_simulations += round;
            next = max_visit_child(&tree.nodes[node]);
        }
        let n = &tree.nodes[node];
        path.node_values.push(n.value());
        path.policies.push(visit_distribution(n, 1.0));
        let Some(action) = next else { break };
        path.actions.push(action);
        node = n.edges[action].child.expect("visited edge has a child");
        if guide.advance(action) {
            path.terminated = true;
            let n = &tree.nodes[node];
            path.node_values.push(n.value());
            path.policies.push(visit_distribution(n, 1.0));
            return Ok(path);
        }
    }

    // Budget exhausted short of min_length.
    let deepest = &tree.nodes[node];
    let fill = deepest.predicted_value;
    while path.actions.len() < min_length {
        let legal = guide
            .legal()
            .unwrap_or_else(|| vec![true; deepest.edges.len()]);
        let action = (0..deepest.edges.len())
            .filter(|&a| legal[a])
            .fold(None, |best: Option<usize>, a| match best {
                Some(b) if deepest.edges[b].prior >= deepest.edges[a].prior => Some(b),
                _ => Some(a),
            })
            .unwrap_or(0);
        path.actions.push(action);
        path.node_values.push(fill);
        path.policies.push(None);
        path.padded += 1;
        if guide.advance(action) {
            path.terminated = true;
            break;
        }
    }
    Ok(path)
}

fn max_visit_child(node: &TreeNode) -> Option<ActionIndex> {
    let mut best: Option<ActionIndex> = None;
    for (a, e) in node.edges.iter().enumerate() {
        if !node.legal[a] || e.visit_count == 0 || e.child.is_none() {
            continue;
        }
        if best.is_none_or(|b| e.visit_count > node.edges[b].visit_count) {
            best = Some(a);
        }
    }
    best
}
