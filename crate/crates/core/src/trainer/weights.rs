use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mixing coefficients for real value, real policy, simulated value and
/// simulated policy losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma_w: f64,
    pub delta: f64,
}

impl LossWeights {
    pub const fn new(alpha: f64, beta: f64, gamma_w: f64, delta: f64) -> Self {
        Self {
            alpha,
            beta,
            gamma_w,
            delta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.gamma_w, self.delta];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be finite and non-negative, got {self:?}"
            )));
        }
        if self.alpha + self.gamma_w <= 0.0 {
            return Err(Error::Config("alpha + gamma_w must be positive".into()));
        }
        if self.beta + self.delta <= 0.0 {
            return Err(Error::Config("beta + delta must be positive".into()));
        }
        Ok(())
    }

    /// True when any simulated-trajectory term contributes.
    pub fn uses_simulated(&self) -> bool {
        self.gamma_w > 0.0 || self.delta > 0.0
    }
}

/// Normalizes the value pair and the policy pair to sum to one each.
pub fn scale_weights(w: LossWeights) -> Result<LossWeights> {
    w.validate()?;
    let value = w.alpha + w.gamma_w;
    let policy = w.beta + w.delta;
    Ok(LossWeights {
        alpha: w.alpha / value,
        beta: w.beta / policy,
        gamma_w: w.gamma_w / value,
        delta: w.delta / policy,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub from_step: u64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma_w: f64,
    pub delta: f64,
}

impl Stage {
    pub fn new(from_step: u64, w: LossWeights) -> Self {
        Self {
            from_step,
            alpha: w.alpha,
            beta: w.beta,
            gamma_w: w.gamma_w,
            delta: w.delta,
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights::new(self.alpha, self.beta, self.gamma_w, self.delta)
    }
}

/// Piecewise-constant weights indexed by training step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightSchedule {
    stages: Vec<Stage>,
}

impl WeightSchedule {
    pub fn new(stages: Vec<Stage>) -> Result<Self> {
        let s = Self { stages };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(weights: LossWeights) -> Self {
        Self {
            stages: vec![Stage::new(0, weights)],
        }
    }

    /// Full, half, then no simulated value weight, switching at `boundaries`.
    /// With `decay_policy` the simulated policy weight follows the same path.
    pub fn decaying(boundaries: [u64; 2], decay_policy: bool) -> Self {
        let stage = |from_step, w: f64| {
            Stage::new(
                from_step,
                LossWeights::new(1.0, 1.0, w, if decay_policy { w } else { 0.0 }),
            )
        };
        Self {
            stages: vec![
                stage(0, 1.0),
                stage(boundaries[0], 0.5),
                stage(boundaries[1], 0.0),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.stages.first() {
            None => return Err(Error::Config("weight schedule has no stages".into())),
            Some(s) if s.from_step != 0 => {
                return Err(Error::Config(
                    "first weight stage must start at step 0".into(),
                ));
            }
            _ => {}
        }
        if self
            .stages
            .windows(2)
            .any(|w| w[1].from_step <= w[0].from_step)
        {
            return Err(Error::Config(
                "weight stage steps must be strictly increasing".into(),
            ));
        }
        self.stages.iter().try_for_each(|s| s.weights().validate())
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn at(&self, step: u64) -> LossWeights {
        self.stages
            .iter()
            .rev()
            .find(|s| s.from_step <= step)
            .map(Stage::weights)
            .expect("validated schedule starts at step 0")
    }

    /// Whether any stage at or after `step` needs simulated trajectories.
    pub fn uses_simulated_from(&self, step: u64) -> bool {
        let current = self
            .stages
            .iter()
            .rposition(|s| s.from_step <= step)
            .unwrap_or(0);
        self.stages[current..]
            .iter()
            .any(|s| s.weights().uses_simulated())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: LossWeights, b: LossWeights) -> bool {
        [
            (a.alpha, b.alpha),
            (a.beta, b.beta),
            (a.gamma_w, b.gamma_w),
            (a.delta, b.delta),
        ]
        .iter()
        .all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn scaling_examples() {
        let w = scale_weights(LossWeights::new(1.0, 1.0, 0.0, 0.0)).unwrap();
        assert_eq!(w, LossWeights::new(1.0, 1.0, 0.0, 0.0));
        let w = scale_weights(LossWeights::new(1.0, 1.0, 1.0, 1.0)).unwrap();
        assert_eq!(w, LossWeights::new(0.5, 0.5, 0.5, 0.5));
        let w = scale_weights(LossWeights::new(1.0, 1.0, 0.5, 0.0)).unwrap();
        assert!(close(w, LossWeights::new(2.0 / 3.0, 1.0, 1.0 / 3.0, 0.0)));
    }

    #[test]
    fn zero_denominator_rejected() {
        assert!(scale_weights(LossWeights::new(0.0, 1.0, 0.0, 1.0)).is_err());
        assert!(scale_weights(LossWeights::new(1.0, 0.0, 1.0, 0.0)).is_err());
        assert!(scale_weights(LossWeights::new(-1.0, 1.0, 2.0, 1.0)).is_err());
    }

    #[test]
    fn decaying_schedule_switches() {
        let s = WeightSchedule::decaying([6250, 12500], false);
        assert_eq!(s.at(0).gamma_w, 1.0);
        assert_eq!(s.at(6249).gamma_w, 1.0);
        assert_eq!(s.at(6250).gamma_w, 0.5);
        assert_eq!(s.at(12499).gamma_w, 0.5);
        assert_eq!(s.at(12500).gamma_w, 0.0);
        assert!(s.uses_simulated_from(12499));
        assert!(!s.uses_simulated_from(12500));
        assert!(s.stages().iter().all(|st| st.delta == 0.0));
        let p = WeightSchedule::decaying([5000, 10000], true);
        assert_eq!(p.at(7000).delta, 0.5);
    }

    #[test]
    fn schedule_validation() {
        let w = LossWeights::new(1.0, 1.0, 0.0, 0.0);
        assert!(WeightSchedule::new(vec![]).is_err());
        assert!(WeightSchedule::new(vec![Stage::new(5, w)]).is_err());
        let dup = vec![Stage::new(0, w), Stage::new(0, w)];
        assert!(WeightSchedule::new(dup).is_err());
    }

    proptest! {
        #[test]
        fn scaling_is_scale_invariant(
            a in 0.0f64..10.0, b in 0.0f64..10.0, g in 0.0f64..10.0, d in 0.0f64..10.0, k in 0.01f64..100.0
        ) {
            prop_assume!(a + g > 1e-6 && b + d > 1e-6);
            let w = LossWeights::new(a, b, g, d);
            let kw = LossWeights::new(k * a, k * b, k * g, k * d);
            let s = scale_weights(w).unwrap();
            let ks = scale_weights(kw).unwrap();
            prop_assert!(close(s, ks));
            prop_assert!((s.alpha + s.gamma_w - 1.0).abs() < 1e-12);
            prop_assert!((s.beta + s.delta - 1.0).abs() < 1e-12);
        }
    }
}
