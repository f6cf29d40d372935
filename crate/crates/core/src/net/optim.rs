use super::tape::Gradients;
use super::Parameters;

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(params: &Parameters, momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: params
                .tensors
                .iter()
                .map(|t| vec![0.0; t.data.len()])
                .collect(),
        }
    }

    pub fn step(&mut self, params: &mut Parameters, grads: &Gradients, lr: f64) {
        for ((t, g), v) in params
            .tensors
            .iter_mut()
            .zip(&grads.0)
            .zip(&mut self.velocity)
        {
            for ((w, &gi), vi) in t.data.iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = self.momentum * *vi + gi + self.weight_decay * *w;
                *w -= lr * *vi;
            }
        }
    }
}
