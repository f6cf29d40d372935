//! The representation (`h`), dynamics (`g`) and prediction (`f`) functions.
//!
//! Each function is a two-layer perceptron with a ReLU hidden layer. `g`
//! reads the hidden state concatenated with a one-hot action and emits the
//! next hidden state plus reward logits; `f` emits value logits plus policy
//! logits. Single-sample inference (used by the search) runs on plain slices;
//! training goes through [`tape::Tape`].

mod checkpoint;
mod optim;
pub mod support;
pub mod tape;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use optim::Sgd;
pub use support::{scalar_to_support, support_to_scalar, ScalarCodec, ValueDistribution};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{ActionIndex, Observation};
use crate::error::{Error, Result};
use support::softmax;
use tape::{Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(name: &str, rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor {name}: data length");
        Self {
            name: name.to_owned(),
            rows,
            cols,
            data,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    pub tensors: Vec<Tensor>,
}

impl Parameters {
    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| t.data.iter().copied())
            .collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.count());
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.data.len();
            t.data.copy_from_slice(&values[off..off + n]);
            off += n;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| &t.data)
            .map(|v| v * v)
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub observation_size: usize,
    pub action_size: usize,
    pub hidden_size: usize,
    /// Width of the single hidden layer inside each function.
    pub layer_width: usize,
    pub value_support: usize,
    pub reward_support: usize,
    /// Squash value and reward targets before the support encoding.
    pub squash_values: bool,
    /// Min-max rescale every hidden state to `[0, 1]`.
    pub normalize_hidden: bool,
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let nonzero = [
            ("observation_size", self.observation_size),
            ("action_size", self.action_size),
            ("hidden_size", self.hidden_size),
            ("layer_width", self.layer_width),
        ];
        for (name, v) in nonzero {
            if v == 0 {
                return Err(Error::Config(format!("net.{name} must be positive")));
            }
        }
        for (name, v) in [
            ("value_support", self.value_support),
            ("reward_support", self.reward_support),
        ] {
            if v % 2 == 0 {
                return Err(Error::Config(format!("net.{name} must be odd, got {v}")));
            }
        }
        Ok(())
    }

    pub fn value_codec(&self) -> ScalarCodec {
        ScalarCodec {
            support_size: self.value_support,
            squash: self.squash_values,
        }
    }

    pub fn reward_codec(&self) -> ScalarCodec {
        ScalarCodec {
            support_size: self.reward_support,
            squash: self.squash_values,
        }
    }

    fn layer_shapes(&self) -> [(&'static str, usize, usize); 3] {
        [
            ("repr", self.observation_size, self.hidden_size),
            (
                "dyn",
                self.hidden_size + self.action_size,
                self.hidden_size + self.reward_support,
            ),
            (
                "pred",
                self.hidden_size,
                self.value_support + self.action_size,
            ),
        ]
    }
}

/// Which branch of the per-head losses applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// Two-player zero-sum: no reward loss, squared-error value loss.
    Board,
    /// General MDP: cross-entropy reward and value losses over supports.
    Mdp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HiddenState(pub Vec<f64>);

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkOutput {
    pub value: ValueDistribution,
    pub reward: ValueDistribution,
    pub policy_logits: Vec<f64>,
    pub hidden_state: HiddenState,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub reward: f64,
    pub value: f64,
    pub policy: f64,
}

#[derive(Clone, Copy)]
enum Function {
    Represent = 0,
    Dynamics = 1,
    Predict = 2,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MuZeroNet {
    pub config: NetConfig,
    pub params: Parameters,
}

impl MuZeroNet {
    /// Uniform `±1/√fan_in` initialisation for weights and biases, except that
    /// the value, reward and policy outputs start at zero: an untrained model
    /// predicts value 0, reward 0 and a uniform policy.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = Vec::with_capacity(12);
        for (name, fan_in, fan_out) in config.layer_shapes() {
            for (layer, inputs, outputs) in [
                (1, fan_in, config.layer_width),
                (2, config.layer_width, fan_out),
            ] {
                let bound = 1.0 / (inputs as f64).sqrt();
                let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-bound..bound)).collect();
                tensors.push(Tensor::new(
                    &format!("{name}.w{layer}"),
                    inputs,
                    outputs,
                    draw(inputs * outputs),
                ));
                tensors.push(Tensor::new(
                    &format!("{name}.b{layer}"),
                    1,
                    outputs,
                    draw(outputs),
                ));
            }
        }
        let mut net = Self {
            config,
            params: Parameters { tensors },
        };
        net.zero_output_heads();
        Ok(net)
    }

    fn zero_output_heads(&mut self) {
        let pred = Function::Predict as usize * 4;
        self.params.tensors[pred + 2].data.fill(0.0);
        self.params.tensors[pred + 3].data.fill(0.0);
        let dyn_base = Function::Dynamics as usize * 4;
        let hidden = self.config.hidden_size;
        for t in &mut self.params.tensors[dyn_base + 2..=dyn_base + 3] {
            let cols = t.cols;
            for row in t.data.chunks_mut(cols) {
                row[hidden..].fill(0.0);
            }
        }
    }

    pub fn zeroed(config: NetConfig) -> Result<Self> {
        let mut net = Self::new(config, 0)?;
        for t in &mut net.params.tensors {
            t.data.fill(0.0);
        }
        Ok(net)
    }

    fn mlp(&self, f: Function, input: &[f64]) -> Vec<f64> {
        let base = f as usize * 4;
        let t = &self.params.tensors;
        let hidden = dense(input, &t[base], &t[base + 1], true);
        dense(&hidden, &t[base + 2], &t[base + 3], false)
    }

    fn finish_hidden(&self, mut state: Vec<f64>) -> HiddenState {
        if self.config.normalize_hidden {
            let (lo, hi) = tape::argmin_argmax(&state);
            let (min, span) = (state[lo], tape::min_max_span(state[hi] - state[lo]));
            state.iter_mut().for_each(|v| *v = (*v - min) / span);
        }
        HiddenState(state)
    }

    /// Only the most recent observation is used; the environments are fully observable.
    pub fn represent(&self, history: &[Observation]) -> Result<HiddenState> {
        let obs = history
            .last()
            .ok_or_else(|| Error::Config("empty observation history".into()))?;
        check_len(obs.len(), self.config.observation_size)?;
        Ok(self.finish_hidden(self.mlp(Function::Represent, obs.as_slice())))
    }

    pub fn dynamics(
        &self,
        state: &HiddenState,
        action: ActionIndex,
    ) -> Result<(HiddenState, ValueDistribution)> {
        let c = &self.config;
        check_len(state.0.len(), c.hidden_size)?;
        if action >= c.action_size {
            return Err(Error::InvalidAction {
                action,
                size: c.action_size,
            });
        }
        let mut input = Vec::with_capacity(c.hidden_size + c.action_size);
        input.extend_from_slice(&state.0);
        input.extend((0..c.action_size).map(|a| if a == action { 1.0 } else { 0.0 }));
        let mut out = self.mlp(Function::Dynamics, &input);
        let reward = out.split_off(c.hidden_size);
        Ok((self.finish_hidden(out), ValueDistribution::new(reward)))
    }

    pub fn predict(&self, state: &HiddenState) -> Result<(ValueDistribution, Vec<f64>)> {
        check_len(state.0.len(), self.config.hidden_size)?;
        let mut out = self.mlp(Function::Predict, &state.0);
        let policy = out.split_off(self.config.value_support);
        Ok((ValueDistribution::new(out), policy))
    }

    pub fn initial_inference(&self, obs: &Observation) -> Result<NetworkOutput> {
        let hidden = self.represent(std::slice::from_ref(obs))?;
        let (value, policy_logits) = self.predict(&hidden)?;
        Ok(NetworkOutput {
            value,
            reward: ValueDistribution::new(vec![0.0; self.config.reward_support]),
            policy_logits,
            hidden_state: hidden,
        })
    }

    pub fn recurrent_inference(
        &self,
        state: &HiddenState,
        action: ActionIndex,
    ) -> Result<NetworkOutput> {
        let (hidden, reward) = self.dynamics(state, action)?;
        let (value, policy_logits) = self.predict(&hidden)?;
        Ok(NetworkOutput {
            value,
            reward,
            policy_logits,
            hidden_state: hidden,
        })
    }

    pub fn scalar_value(&self, d: &ValueDistribution) -> f64 {
        self.config.value_codec().decode(d)
    }

    pub fn scalar_reward(&self, d: &ValueDistribution) -> f64 {
        self.config.reward_codec().decode(d)
    }

    /// Per-head losses of one prediction against its targets.
    pub fn loss_terms(
        &self,
        pred: &NetworkOutput,
        target_reward: f64,
        target_value: f64,
        target_policy: &[f64],
        mode: LossMode,
    ) -> LossTerms {
        let head = |d: &ValueDistribution, codec: ScalarCodec, target: f64| {
            if codec.support_size == 1 {
                (d.logits[0] - target).powi(2)
            } else {
                cross_entropy(&codec.encode(target), &d.logits)
            }
        };
        let reward = match mode {
            LossMode::Board => 0.0,
            LossMode::Mdp => head(&pred.reward, self.config.reward_codec(), target_reward),
        };
        let value = match mode {
            LossMode::Board => (pred.value.expectation() - target_value).powi(2),
            LossMode::Mdp => head(&pred.value, self.config.value_codec(), target_value),
        };
        LossTerms {
            reward,
            value,
            policy: cross_entropy(target_policy, &pred.policy_logits),
        }
    }

    pub fn register(&self, tape: &mut Tape) -> ParamVars {
        ParamVars(
            (0..self.params.tensors.len())
                .map(|i| tape.param(&self.params, i))
                .collect(),
        )
    }

    fn tape_mlp(&self, tape: &mut Tape, vars: &ParamVars, f: Function, x: Var) -> Var {
        let base = f as usize * 4;
        let v = &vars.0;
        let h = tape.linear(x, v[base], v[base + 1]);
        let h = tape.relu(h);
        tape.linear(h, v[base + 2], v[base + 3])
    }

    fn tape_hidden(&self, tape: &mut Tape, x: Var) -> Var {
        if self.config.normalize_hidden {
            tape.min_max(x)
        } else {
            x
        }
    }

    /// Records the K-step unroll of `batch` on `tape`.
    ///
    /// Returns the batch-mean value component (reward plus value losses) and
    /// policy component, each summed over unroll steps. Steps after the first
    /// are weighted `1/K`.
    pub fn unroll_losses(
        &self,
        tape: &mut Tape,
        vars: &ParamVars,
        batch: &UnrollBatch,
        opts: UnrollOptions,
    ) -> (Var, Var) {
        let c = &self.config;
        let rows = batch.rows;
        let unroll = batch.actions.len();
        assert_eq!(
            batch.steps.len(),
            unroll + 1,
            "need K+1 target steps for K actions"
        );

        let obs = tape.input(rows, c.observation_size, batch.observations.clone());
        let repr = self.tape_mlp(tape, vars, Function::Represent, obs);
        let mut hidden = self.tape_hidden(tape, repr);

        let mut value_terms = Vec::new();
        let mut policy_terms = Vec::new();
        for (k, targets) in batch.steps.iter().enumerate() {
            let step_scale = if k == 0 { 1.0 } else { 1.0 / unroll as f64 } / rows as f64;
            if k > 0 {
                let actions = &batch.actions[k - 1];
                let mut one_hot = vec![0.0; rows * c.action_size];
                for (r, &a) in actions.iter().enumerate() {
                    one_hot[r * c.action_size + a] = 1.0;
                }
                let a = tape.input(rows, c.action_size, one_hot);
                let input = tape.concat(hidden, a);
                let out = self.tape_mlp(tape, vars, Function::Dynamics, input);
                let next = tape.slice(out, 0, c.hidden_size);
                let next = self.tape_hidden(tape, next);
                hidden = tape.scale_grad(next, opts.dynamics_grad_scale);
                if opts.mode == LossMode::Mdp {
                    let reward = tape.slice(out, c.hidden_size, c.reward_support);
                    let l = scalar_head_loss(
                        tape,
                        reward,
                        c.reward_codec(),
                        &targets.reward,
                        step_scale,
                    );
                    value_terms.push((l, 1.0));
                }
            }
            let out = self.tape_mlp(tape, vars, Function::Predict, hidden);
            let value = tape.slice(out, 0, c.value_support);
            let policy = tape.slice(out, c.value_support, c.action_size);
            let lv = match opts.mode {
                LossMode::Board => {
                    assert_eq!(c.value_support, 1, "board mode uses a raw value head");
                    tape.squared_error(value, targets.value.clone(), vec![step_scale; rows])
                }
                LossMode::Mdp => {
                    scalar_head_loss(tape, value, c.value_codec(), &targets.value, step_scale)
                }
            };
            value_terms.push((lv, 1.0));
            let weights = targets.policy_mask.iter().map(|m| m * step_scale).collect();
            let lp = tape.softmax_xent(policy, targets.policy.clone(), weights);
            policy_terms.push((lp, 1.0));
        }
        (tape.combine(value_terms), tape.combine(policy_terms))
    }
}

fn scalar_head_loss(
    tape: &mut Tape,
    x: Var,
    codec: ScalarCodec,
    targets: &[f64],
    scale: f64,
) -> Var {
    let rows = targets.len();
    if codec.support_size == 1 {
        tape.squared_error(x, targets.to_vec(), vec![scale; rows])
    } else {
        let encoded = targets.iter().flat_map(|&t| codec.encode(t)).collect();
        tape.softmax_xent(x, encoded, vec![scale; rows])
    }
}

/// Tape handles for every parameter tensor, in [`Parameters`] order.
pub struct ParamVars(pub Vec<Var>);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnrollOptions {
    pub mode: LossMode,
    /// Factor applied to gradients entering each hidden state produced by `g`.
    pub dynamics_grad_scale: f64,
}

/// Targets for one unroll step across the batch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepTargets {
    /// Scalar value targets, one per row.
    pub value: Vec<f64>,
    /// Scalar reward targets for the transition into this step (ignored at step 0).
    pub reward: Vec<f64>,
    /// `rows × action_size` policy targets.
    pub policy: Vec<f64>,
    /// 1 to train the policy head on this row, 0 to mask it.
    pub policy_mask: Vec<f64>,
}

/// A batch of K-step trajectories laid out for the tape.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UnrollBatch {
    pub rows: usize,
    /// `rows × observation_size`.
    pub observations: Vec<f64>,
    /// `actions[k][r]` is the action taken at unroll step `k` for row `r`.
    pub actions: Vec<Vec<ActionIndex>>,
    /// K + 1 entries.
    pub steps: Vec<StepTargets>,
}

fn dense(input: &[f64], w: &Tensor, b: &Tensor, relu: bool) -> Vec<f64> {
    let mut out = b.data.clone();
    for (i, &x) in input.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (o, &wij) in out.iter_mut().zip(&w.data[i * w.cols..(i + 1) * w.cols]) {
            *o += x * wij;
        }
    }
    if relu {
        out.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    out
}

fn check_len(got: usize, expected: usize) -> Result<()> {
    if got == expected {
        Ok(())
    } else {
        Err(Error::Shape { expected, got })
    }
}

/// `−Σ t_j log softmax(l)_j`
pub fn cross_entropy(target: &[f64], logits: &[f64]) -> f64 {
    let lse = tape::log_sum_exp(logits);
    -target
        .iter()
        .zip(logits)
        .filter(|(t, _)| **t != 0.0)
        .map(|(t, l)| t * (l - lse))
        .sum::<f64>()
}

pub fn policy_probabilities(logits: &[f64]) -> Vec<f64> {
    softmax(logits)
}
