//! Categorical encoding of scalars over integer support points.
//!
//! A support of odd size `S` covers the integers `-(S-1)/2 ..= (S-1)/2`. A
//! scalar is spread over its two neighbouring points ("two-hot") so the
//! expectation under the encoding is the (clamped) scalar itself. `S = 1` is
//! the degenerate raw-scalar head.

use super::tape::log_sum_exp;

const TRANSFORM_EPS: f64 = 0.001;

/// Largest representable magnitude for a support of size `size`.
pub fn support_radius(size: usize) -> f64 {
    assert!(size % 2 == 1, "support size must be odd, got {size}");
    ((size - 1) / 2) as f64
}

pub fn scalar_to_support(x: f64, size: usize) -> Vec<f64> {
    let radius = support_radius(size);
    let mut probs = vec![0.0; size];
    if size == 1 {
        probs[0] = 1.0;
        return probs;
    }
    let x = x.clamp(-radius, radius);
    let floor = x.floor();
    let upper = x - floor;
    let idx = (floor + radius) as usize;
    probs[idx] = 1.0 - upper;
    if upper > 0.0 {
        probs[idx + 1] = upper;
    }
    probs
}

/// Expectation of the support points under `probs`.
pub fn support_expectation(probs: &[f64]) -> f64 {
    let radius = support_radius(probs.len());
    probs
        .iter()
        .enumerate()
        .map(|(i, p)| p * (i as f64 - radius))
        .sum()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|&l| (l - lse).exp()).collect()
}

/// Logits (or a raw scalar when the support has size 1) over a value support.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueDistribution {
    pub logits: Vec<f64>,
}

impl ValueDistribution {
    pub fn new(logits: Vec<f64>) -> Self {
        Self { logits }
    }

    pub fn support_size(&self) -> usize {
        self.logits.len()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        softmax(&self.logits)
    }

    /// Expected support point, or the raw value for a size-1 head.
    pub fn expectation(&self) -> f64 {
        if self.logits.len() == 1 {
            self.logits[0]
        } else {
            support_expectation(&self.probabilities())
        }
    }
}

pub fn support_to_scalar(d: &ValueDistribution) -> f64 {
    d.expectation()
}

/// Invertible squashing `sign(x)(√(|x|+1) − 1) + εx` for large-magnitude values.
pub fn squash(x: f64) -> f64 {
    x.signum() * ((x.abs() + 1.0).sqrt() - 1.0) + TRANSFORM_EPS * x
}

pub fn unsquash(y: f64) -> f64 {
    let e = TRANSFORM_EPS;
    let inner = ((1.0 + 4.0 * e * (y.abs() + 1.0 + e)).sqrt() - 1.0) / (2.0 * e);
    y.signum() * (inner * inner - 1.0)
}

/// How scalar targets map onto a support and back.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalarCodec {
    pub support_size: usize,
    pub squash: bool,
}

impl ScalarCodec {
    pub fn encode(&self, x: f64) -> Vec<f64> {
        let x = if self.squash { squash(x) } else { x };
        scalar_to_support(x, self.support_size)
    }

    pub fn decode(&self, d: &ValueDistribution) -> f64 {
        let y = d.expectation();
        if self.squash && self.support_size > 1 {
            unsquash(y)
        } else {
            y
        }
    }
}
