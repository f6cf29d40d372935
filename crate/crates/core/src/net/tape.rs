//! Reverse-mode differentiation over row-batched matrices.
//!
//! Nodes hold `rows × cols` values in row-major order; each row is one
//! sample. The op set is exactly what the three MuZero functions and their
//! losses need. Loss ops reduce to a `1 × 1` node.

use super::Parameters;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(usize),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Relu(Var),
    /// Per-row min-max rescaling to `[0, 1]`.
    MinMax {
        x: Var,
        lo: Vec<usize>,
        hi: Vec<usize>,
        span: Vec<f64>,
    },
    Concat(Var, Var),
    Slice {
        x: Var,
        start: usize,
    },
    /// Identity forward, gradient multiplied by `factor` on the way back.
    ScaleGrad {
        x: Var,
        factor: f64,
    },
    /// Σ_r w_r · (−Σ_j t_rj · log softmax(x_r)_j); caches the softmax.
    SoftmaxXent {
        logits: Var,
        target: Vec<f64>,
        weights: Vec<f64>,
        probs: Vec<f64>,
    },
    /// Σ_r w_r · (x_r − t_r)², `x` is a single column.
    SquaredError {
        x: Var,
        target: Vec<f64>,
        weights: Vec<f64>,
    },
    /// Σ c_i · x_i over `1 × 1` nodes.
    Combine(Vec<(Var, f64)>),
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
}

/// Gradients for every tensor of a [`Parameters`] set, in the same layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    pub fn zeros_like(params: &Parameters) -> Self {
        Gradients(
            params
                .tensors
                .iter()
                .map(|t| vec![0.0; t.data.len()])
                .collect(),
        )
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().flatten().all(|g| g.is_finite())
    }

    pub fn flat(&self) -> Vec<f64> {
        self.0.iter().flatten().copied().collect()
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let n = &self.nodes[v.0];
        assert_eq!((n.rows, n.cols), (1, 1), "not a scalar node");
        n.value[0]
    }

    pub fn input(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        assert_eq!(value.len(), rows * cols);
        self.push(rows, cols, value, Op::Input)
    }

    /// Registers parameter tensor `index`; its gradient lands in slot `index`.
    pub fn param(&mut self, params: &Parameters, index: usize) -> Var {
        let t = &params.tensors[index];
        self.push(t.rows, t.cols, t.data.clone(), Op::Param(index))
    }

    /// `x · w + b` with `w: in × out` and `b: 1 × out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (rows, inner) = self.shape(x);
        let (w_rows, out) = self.shape(w);
        assert_eq!(inner, w_rows, "linear: input width does not match weights");
        assert_eq!(self.shape(b), (1, out), "linear: bias shape");
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        let bv = &self.nodes[b.0].value;
        let mut y = Vec::with_capacity(rows * out);
        for r in 0..rows {
            y.extend_from_slice(bv);
            let yr = &mut y[r * out..(r + 1) * out];
            for (i, &xi) in xv[r * inner..(r + 1) * inner].iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                for (yj, &wij) in yr.iter_mut().zip(&wv[i * out..(i + 1) * out]) {
                    *yj += xi * wij;
                }
            }
        }
        self.push(rows, out, y, Op::Linear { x, w, b })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let (rows, cols) = self.shape(x);
        let y = self.nodes[x.0].value.iter().map(|&v| v.max(0.0)).collect();
        self.push(rows, cols, y, Op::Relu(x))
    }

    pub fn min_max(&mut self, x: Var) -> Var {
        let (rows, cols) = self.shape(x);
        let xv = &self.nodes[x.0].value;
        let mut y = Vec::with_capacity(rows * cols);
        let mut lo = Vec::with_capacity(rows);
        let mut hi = Vec::with_capacity(rows);
        let mut spans = Vec::with_capacity(rows);
        for row in xv.chunks(cols) {
            let (l, h) = argmin_argmax(row);
            let span = min_max_span(row[h] - row[l]);
            y.extend(row.iter().map(|&v| (v - row[l]) / span));
            lo.push(l);
            hi.push(h);
            spans.push(span);
        }
        self.push(
            rows,
            cols,
            y,
            Op::MinMax {
                x,
                lo,
                hi,
                span: spans,
            },
        )
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (rows, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        assert_eq!(rows, rb, "concat: row mismatch");
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let mut y = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            y.extend_from_slice(&av[r * ca..(r + 1) * ca]);
            y.extend_from_slice(&bv[r * cb..(r + 1) * cb]);
        }
        self.push(rows, ca + cb, y, Op::Concat(a, b))
    }

    /// Columns `start..start + len`.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (rows, cols) = self.shape(x);
        assert!(start + len <= cols, "slice out of range");
        let xv = &self.nodes[x.0].value;
        let mut y = Vec::with_capacity(rows * len);
        for r in 0..rows {
            y.extend_from_slice(&xv[r * cols + start..r * cols + start + len]);
        }
        self.push(rows, len, y, Op::Slice { x, start })
    }

    pub fn scale_grad(&mut self, x: Var, factor: f64) -> Var {
        if factor == 1.0 {
            return x;
        }
        let (rows, cols) = self.shape(x);
        let y = self.nodes[x.0].value.clone();
        self.push(rows, cols, y, Op::ScaleGrad { x, factor })
    }

    pub fn softmax_xent(&mut self, logits: Var, target: Vec<f64>, weights: Vec<f64>) -> Var {
        let (rows, cols) = self.shape(logits);
        assert_eq!(target.len(), rows * cols);
        assert_eq!(weights.len(), rows);
        let lv = &self.nodes[logits.0].value;
        let mut probs = Vec::with_capacity(rows * cols);
        let mut total = 0.0;
        for r in 0..rows {
            let row = &lv[r * cols..(r + 1) * cols];
            let lse = log_sum_exp(row);
            let mut ce = 0.0;
            for (j, &l) in row.iter().enumerate() {
                let t = target[r * cols + j];
                if t != 0.0 {
                    ce -= t * (l - lse);
                }
                probs.push((l - lse).exp());
            }
            total += weights[r] * ce;
        }
        self.push(
            1,
            1,
            vec![total],
            Op::SoftmaxXent {
                logits,
                target,
                weights,
                probs,
            },
        )
    }

    pub fn squared_error(&mut self, x: Var, target: Vec<f64>, weights: Vec<f64>) -> Var {
        let (rows, cols) = self.shape(x);
        assert_eq!(cols, 1, "squared_error expects a single column");
        assert_eq!(target.len(), rows);
        assert_eq!(weights.len(), rows);
        let xv = &self.nodes[x.0].value;
        let total = (0..rows)
            .map(|r| weights[r] * (xv[r] - target[r]).powi(2))
            .sum();
        self.push(1, 1, vec![total], Op::SquaredError { x, target, weights })
    }

    pub fn combine(&mut self, terms: Vec<(Var, f64)>) -> Var {
        let total = terms.iter().map(|&(v, c)| c * self.scalar(v)).sum();
        self.push(1, 1, vec![total], Op::Combine(terms))
    }

    /// Back-propagates from the scalar `output`, returning parameter gradients.
    pub fn backward(&self, output: Var, params: &Parameters) -> Gradients {
        assert_eq!(self.shape(output), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![1.0]);
        let mut out = Gradients::zeros_like(params);

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(p) => {
                    for (acc, gi) in out.0[*p].iter_mut().zip(&g) {
                        *acc += gi;
                    }
                }
                Op::Linear { x, w, b } => {
                    let (rows, inner) = self.shape(*x);
                    let out_cols = node.cols;
                    let xv = &self.nodes[x.0].value;
                    let wv = &self.nodes[w.0].value;
                    let mut dx = vec![0.0; rows * inner];
                    let mut dw = vec![0.0; inner * out_cols];
                    let mut db = vec![0.0; out_cols];
                    for r in 0..rows {
                        let gr = &g[r * out_cols..(r + 1) * out_cols];
                        for (dbj, &gj) in db.iter_mut().zip(gr) {
                            *dbj += gj;
                        }
                        for i in 0..inner {
                            let wrow = &wv[i * out_cols..(i + 1) * out_cols];
                            dx[r * inner + i] = wrow.iter().zip(gr).map(|(a, b)| a * b).sum();
                            let xi = xv[r * inner + i];
                            if xi != 0.0 {
                                for (d, &gj) in
                                    dw[i * out_cols..(i + 1) * out_cols].iter_mut().zip(gr)
                                {
                                    *d += xi * gj;
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *w, dw);
                    accumulate(&mut grads, *b, db);
                }
                Op::Relu(x) => {
                    let xv = &self.nodes[x.0].value;
                    let dx = g
                        .iter()
                        .zip(xv)
                        .map(|(&gi, &xi)| if xi > 0.0 { gi } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *x, dx);
                }
                Op::MinMax { x, lo, hi, span } => {
                    let cols = node.cols;
                    let mut dx = vec![0.0; g.len()];
                    for r in 0..node.rows {
                        let gr = &g[r * cols..(r + 1) * cols];
                        let yr = &node.value[r * cols..(r + 1) * cols];
                        let s = span[r];
                        let mut d_lo = 0.0;
                        let mut d_hi = 0.0;
                        for (j, (&gj, &yj)) in gr.iter().zip(yr).enumerate() {
                            dx[r * cols + j] += gj / s;
                            d_lo += gj * (yj - 1.0) / s;
                            d_hi -= gj * yj / s;
                        }
                        dx[r * cols + lo[r]] += d_lo;
                        dx[r * cols + hi[r]] += d_hi;
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Concat(a, b) => {
                    let (rows, ca) = self.shape(*a);
                    let cb = self.shape(*b).1;
                    let mut da = Vec::with_capacity(rows * ca);
                    let mut dbv = Vec::with_capacity(rows * cb);
                    for r in 0..rows {
                        let gr = &g[r * (ca + cb)..(r + 1) * (ca + cb)];
                        da.extend_from_slice(&gr[..ca]);
                        dbv.extend_from_slice(&gr[ca..]);
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, dbv);
                }
                Op::Slice { x, start } => {
                    let (rows, cols) = self.shape(*x);
                    let len = node.cols;
                    let mut dx = vec![0.0; rows * cols];
                    for r in 0..rows {
                        dx[r * cols + start..r * cols + start + len]
                            .copy_from_slice(&g[r * len..(r + 1) * len]);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::ScaleGrad { x, factor } => {
                    accumulate(&mut grads, *x, g.iter().map(|v| v * factor).collect());
                }
                Op::SoftmaxXent {
                    logits,
                    target,
                    weights,
                    probs,
                } => {
                    let (rows, cols) = self.shape(*logits);
                    let mut dx = vec![0.0; rows * cols];
                    for r in 0..rows {
                        let tsum: f64 = target[r * cols..(r + 1) * cols].iter().sum();
                        let scale = g[0] * weights[r];
                        for j in 0..cols {
                            let k = r * cols + j;
                            dx[k] = scale * (tsum * probs[k] - target[k]);
                        }
                    }
                    accumulate(&mut grads, *logits, dx);
                }
                Op::SquaredError { x, target, weights } => {
                    let xv = &self.nodes[x.0].value;
                    let dx = (0..xv.len())
                        .map(|r| g[0] * weights[r] * 2.0 * (xv[r] - target[r]))
                        .collect();
                    accumulate(&mut grads, *x, dx);
                }
                Op::Combine(terms) => {
                    for &(v, c) in terms {
                        accumulate(&mut grads, v, vec![g[0] * c]);
                    }
                }
            }
        }
        out
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, delta: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, d) in existing.iter_mut().zip(&delta) {
                *a += d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Lowest-index argmin and argmax.
pub(crate) fn argmin_argmax(row: &[f64]) -> (usize, usize) {
    let mut lo = 0;
    let mut hi = 0;
    for (i, &v) in row.iter().enumerate() {
        if v < row[lo] {
            lo = i;
        }
        if v > row[hi] {
            hi = i;
        }
    }
    (lo, hi)
}

pub(crate) fn min_max_span(span: f64) -> f64 {
    if span < 1e-5 {
        span + 1e-5
    } else {
        span
    }
}
