use crate::error::{Error, Result};
use crate::net::tape::{Gradients, Tape};
use crate::net::{MuZeroNet, UnrollOptions};
use crate::replay::{to_unroll_batch, TrainingSample};

use super::weights::LossWeights;

/// Unweighted batch-mean loss components and the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub real_value: f64,
    pub real_policy: f64,
    pub sim_value: f64,
    pub sim_policy: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [
            self.real_value,
            self.real_policy,
            self.sim_value,
            self.sim_policy,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Combined loss of real and simulated samples under already-scaled weights.
///
/// Sides whose two weights are both zero are not unrolled at all.
pub fn combined_loss(
    net: &MuZeroNet,
    real: &[&TrainingSample],
    sim: &[&TrainingSample],
    scaled: LossWeights,
    opts: UnrollOptions,
) -> LossBreakdown {
    record(net, real, sim, scaled, opts).1
}

/// [`combined_loss`] plus the parameter gradient of its total.
pub fn loss_and_gradients(
    net: &MuZeroNet,
    real: &[&TrainingSample],
    sim: &[&TrainingSample],
    scaled: LossWeights,
    opts: UnrollOptions,
) -> (LossBreakdown, Gradients) {
    let ((tape, total), breakdown) = record(net, real, sim, scaled, opts);
    let grads = tape.backward(total, &net.params);
    (breakdown, grads)
}

fn record(
    net: &MuZeroNet,
    real: &[&TrainingSample],
    sim: &[&TrainingSample],
    w: LossWeights,
    opts: UnrollOptions,
) -> ((Tape, crate::net::tape::Var), LossBreakdown) {
    let mut tape = Tape::new();
    let vars = net.register(&mut tape);
    let action_size = net.config.action_size;
    let mut out = LossBreakdown::default();
    let mut terms = Vec::new();

    if (w.alpha > 0.0 || w.beta > 0.0) && !real.is_empty() {
        let batch = to_unroll_batch(real, action_size);
        let (v, p) = net.unroll_losses(&mut tape, &vars, &batch, opts);
        out.real_value = tape.scalar(v);
        out.real_policy = tape.scalar(p);
        terms.push((v, w.alpha));
        terms.push((p, w.beta));
    }
    if (w.gamma_w > 0.0 || w.delta > 0.0) && !sim.is_empty() {
        let batch = to_unroll_batch(sim, action_size);
        let (v, p) = net.unroll_losses(&mut tape, &vars, &batch, opts);
        out.sim_value = tape.scalar(v);
        out.sim_policy = tape.scalar(p);
        terms.push((v, w.gamma_w));
        terms.push((p, w.delta));
    }
    terms.retain(|(_, c)| *c != 0.0);
    let total = tape.combine(terms);
    out.total = tape.scalar(total);
    ((tape, total), out)
}

/// Rejects a loss or gradient that is no longer finite.
pub fn check_finite(loss: &LossBreakdown, grads: &Gradients, step: u64) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            what: format!("loss {loss:?}"),
            step,
        });
    }
    if !grads.all_finite() {
        return Err(Error::NonFinite {
            what: "gradient".into(),
            step,
        });
    }
    Ok(())
}
