//! Reverse-mode automatic differentiation over 2-D `f64` arrays.
//!
//! Forward passes append nodes to a [`Tape`]; `backward` walks the node list
//! in reverse and accumulates gradients. Vectors are 1xD arrays so a single
//! node type covers embeddings, hidden states and biases alike.
//!
//! Everything is `f64`: the gradient-fidelity checks compare analytic
//! gradients against central finite differences at 1e-4 relative error,
//! which f32 cannot sustain.

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// matrix + row vector, broadcast over rows
    AddRow(usize, usize),
    /// matrix * row vector, broadcast over rows
    MulRow(usize, usize),
    Scale(usize, f64),
    OneMinus(usize),
    Tanh(usize),
    Sigmoid(usize),
    Gelu(usize),
    Softmax {
        x: usize,
        /// keys that may be attended to; `None` means all
        col_mask: Option<Vec<bool>>,
        /// row i may only attend to columns <= i
        causal: bool,
    },
    /// per-row standardization; `inv_std` cached at forward time
    LayerNorm { x: usize, inv_std: Vec<f64> },
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceRows { x: usize, start: usize, end: usize },
    SliceCols { x: usize, start: usize, end: usize },
    /// mean over rows -> 1xD
    MeanRows(usize),
    Transpose(usize),
    /// embedding lookup; repeated ids accumulate gradient
    GatherRows { table: usize, ids: Vec<usize> },
    /// elementwise product with a constant (dropout masks)
    MulConst(usize, Array2<f64>),
    /// mean over rows of -w_i * log softmax(logits)_i[target_i]; value is 1x1
    CrossEntropy {
        logits: usize,
        targets: Vec<usize>,
        weights: Vec<f64>,
        /// rows whose target probability underflowed and was clamped
        clamped: Vec<bool>,
    },
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Gradients produced by [`Tape::backward`].
pub struct Grads {
    grads: Vec<Option<Array2<f64>>>,
}

impl Grads {
    /// Gradient of the loss w.r.t. a leaf `var`; zero array if the var did
    /// not influence the loss. Intermediate-node gradients are consumed
    /// during the backward sweep and read back as zero.
    pub fn get(&self, var: Var, tape: &Tape) -> Array2<f64> {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Array2::zeros(tape.nodes[var.0].value.raw_dim()),
        }
    }
}

/// Wengert list of forward values plus enough context to run backward.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    clamp_count: u64,
}

const LN_EPS: f64 = 1e-8;
const PROB_FLOOR: f64 = 1e-12;

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of cross-entropy targets whose probability hit the 1e-12 floor.
    pub fn clamp_count(&self) -> u64 {
        self.clamp_count
    }

    pub fn value(&self, var: Var) -> &Array2<f64> {
        &self.nodes[var.0].value
    }

    pub fn scalar(&self, var: Var) -> f64 {
        self.nodes[var.0].value[[0, 0]]
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        self.push(v, Op::MatMul(a.0, b.0))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(v, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push(v, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(v, Op::Mul(a.0, b.0))
    }

    /// `a + row` where `row` is 1xD, broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.nodes[row.0].value.row(0).to_owned();
        let v = &self.nodes[a.0].value + &r;
        self.push(v, Op::AddRow(a.0, row.0))
    }

    /// `a * row` elementwise with a 1xD row broadcast over rows.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.nodes[row.0].value.row(0).to_owned();
        let v = &self.nodes[a.0].value * &r;
        self.push(v, Op::MulRow(a.0, row.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = &self.nodes[a.0].value * c;
        self.push(v, Op::Scale(a.0, c))
    }

    /// `1 - a` elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| 1.0 - x);
        self.push(v, Op::OneMinus(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(f64::tanh);
        self.push(v, Op::Tanh(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(v, Op::Sigmoid(a.0))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(gelu);
        self.push(v, Op::Gelu(a.0))
    }

    /// Row-wise softmax. `col_mask[j] == false` excludes column j (score
    /// treated as -inf); `causal` restricts row i to columns <= i.
    /// Errors if any row has no admissible column.
    pub fn softmax(&mut self, x: Var, col_mask: Option<&[bool]>, causal: bool) -> Result<Var> {
        let scores = &self.nodes[x.0].value;
        let (n, m) = (scores.nrows(), scores.ncols());
        let mut out = Array2::zeros((n, m));
        for i in 0..n {
            let admissible = |j: usize| {
                (!causal || j <= i) && col_mask.map_or(true, |mask| mask[j])
            };
            let mut max = f64::NEG_INFINITY;
            for j in 0..m {
                if admissible(j) {
                    max = max.max(scores[[i, j]]);
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(Error::Shape(format!("softmax row {i} has no admissible column")));
            }
            let mut sum = 0.0;
            for j in 0..m {
                if admissible(j) {
                    let e = (scores[[i, j]] - max).exp();
                    out[[i, j]] = e;
                    sum += e;
                }
            }
            for j in 0..m {
                out[[i, j]] /= sum;
            }
        }
        Ok(self.push(
            out,
            Op::Softmax { x: x.0, col_mask: col_mask.map(|m| m.to_vec()), causal },
        ))
    }

    /// Standardize each row to zero mean and unit variance.
    pub fn layer_norm(&mut self, x: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let (n, d) = (xv.nrows(), xv.ncols());
        let mut out = Array2::zeros((n, d));
        let mut inv_std = Vec::with_capacity(n);
        for i in 0..n {
            let row = xv.row(i);
            let mean = row.sum() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for j in 0..d {
                out[[i, j]] = (xv[[i, j]] - mean) * is;
            }
        }
        self.push(out, Op::LayerNorm { x: x.0, inv_std })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let n = self.nodes[parts[0].0].value.nrows();
        let total: usize = parts.iter().map(|p| self.nodes[p.0].value.ncols()).sum();
        let mut out = Array2::zeros((n, total));
        let mut at = 0;
        for p in parts {
            let v = &self.nodes[p.0].value;
            out.slice_mut(ndarray::s![.., at..at + v.ncols()]).assign(v);
            at += v.ncols();
        }
        self.push(out, Op::ConcatCols(parts.iter().map(|p| p.0).collect()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let d = self.nodes[parts[0].0].value.ncols();
        let total: usize = parts.iter().map(|p| self.nodes[p.0].value.nrows()).sum();
        let mut out = Array2::zeros((total, d));
        let mut at = 0;
        for p in parts {
            let v = &self.nodes[p.0].value;
            out.slice_mut(ndarray::s![at..at + v.nrows(), ..]).assign(v);
            at += v.nrows();
        }
        self.push(out, Op::ConcatRows(parts.iter().map(|p| p.0).collect()))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Var {
        let v = self.nodes[x.0].value.slice(ndarray::s![start..end, ..]).to_owned();
        self.push(v, Op::SliceRows { x: x.0, start, end })
    }

    pub fn row(&mut self, x: Var, i: usize) -> Var {
        self.slice_rows(x, i, i + 1)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let v = self.nodes[x.0].value.slice(ndarray::s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols { x: x.0, start, end })
    }

    pub fn mean_rows(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.mean_axis(Axis(0)).unwrap().insert_axis(Axis(0));
        self.push(v, Op::MeanRows(x.0))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.t().to_owned();
        self.push(v, Op::Transpose(x.0))
    }

    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = &self.nodes[table.0].value;
        let mut out = Array2::zeros((ids.len(), t.ncols()));
        for (i, &id) in ids.iter().enumerate() {
            out.row_mut(i).assign(&t.row(id));
        }
        self.push(out, Op::GatherRows { table: table.0, ids: ids.to_vec() })
    }

    pub fn mul_const(&mut self, x: Var, mask: Array2<f64>) -> Var {
        let v = &self.nodes[x.0].value * &mask;
        self.push(v, Op::MulConst(x.0, mask))
    }

    /// Mean over rows of `-weights[i] * log p(targets[i])` with
    /// `p = softmax(logits)` per row. Probabilities below 1e-12 are clamped
    /// (counted; clamped rows contribute zero gradient).
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Var {
        let lv = &self.nodes[logits.0].value;
        let n = lv.nrows();
        assert_eq!(targets.len(), n);
        assert_eq!(weights.len(), n);
        let mut total = 0.0;
        let mut clamped = vec![false; n];
        for i in 0..n {
            let row = lv.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            let logp = lv[[i, targets[i]]] - lse;
            let logp = if logp.exp() < PROB_FLOOR {
                clamped[i] = true;
                self.clamp_count += 1;
                PROB_FLOOR.ln()
            } else {
                logp
            };
            total += -weights[i] * logp;
        }
        let v = Array2::from_elem((1, 1), total / n as f64);
        self.push(
            v,
            Op::CrossEntropy {
                logits: logits.0,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                clamped,
            },
        )
    }

    /// Accumulate gradients of the scalar at `loss` w.r.t. every node.
    pub fn backward(&self, loss: Var) -> Grads {
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::ones(self.nodes[loss.0].value.raw_dim()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.nodes[*b].value.t());
                    let db = self.nodes[*a].value.t().dot(&g);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, -g);
                }
                Op::Mul(a, b) => {
                    let da = &g * &self.nodes[*b].value;
                    let db = &g * &self.nodes[*a].value;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::AddRow(a, row) => {
                    let drow = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *row, drow);
                }
                Op::MulRow(a, row) => {
                    let r = self.nodes[*row].value.row(0).to_owned();
                    let da = &g * &r;
                    let drow = (&g * &self.nodes[*a].value)
                        .sum_axis(Axis(0))
                        .insert_axis(Axis(0));
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *row, drow);
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, &g * *c),
                Op::OneMinus(a) => accumulate(&mut grads, *a, -g),
                Op::Tanh(a) => {
                    let y = &self.nodes[idx].value;
                    accumulate(&mut grads, *a, &g * &y.mapv(|v| 1.0 - v * v));
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[idx].value;
                    accumulate(&mut grads, *a, &g * &y.mapv(|v| v * (1.0 - v)));
                }
                Op::Gelu(a) => {
                    let x = &self.nodes[*a].value;
                    accumulate(&mut grads, *a, &g * &x.mapv(gelu_grad));
                }
                Op::Softmax { x, .. } => {
                    let y = &self.nodes[idx].value;
                    let mut dx = Array2::zeros(y.raw_dim());
                    for i in 0..y.nrows() {
                        let dot: f64 =
                            g.row(i).iter().zip(y.row(i).iter()).map(|(a, b)| a * b).sum();
                        for j in 0..y.ncols() {
                            dx[[i, j]] = y[[i, j]] * (g[[i, j]] - dot);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::LayerNorm { x, inv_std } => {
                    let y = &self.nodes[idx].value;
                    let d = y.ncols() as f64;
                    let mut dx = Array2::zeros(y.raw_dim());
                    for i in 0..y.nrows() {
                        let gmean = g.row(i).sum() / d;
                        let gydot: f64 =
                            g.row(i).iter().zip(y.row(i).iter()).map(|(a, b)| a * b).sum();
                        let gy = gydot / d;
                        for j in 0..y.ncols() {
                            dx[[i, j]] = inv_std[i] * (g[[i, j]] - gmean - y[[i, j]] * gy);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let w = self.nodes[*p].value.ncols();
                        let dp = g.slice(ndarray::s![.., at..at + w]).to_owned();
                        accumulate(&mut grads, *p, dp);
                        at += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let h = self.nodes[*p].value.nrows();
                        let dp = g.slice(ndarray::s![at..at + h, ..]).to_owned();
                        accumulate(&mut grads, *p, dp);
                        at += h;
                    }
                }
                Op::SliceRows { x, start, end } => {
                    let mut dx = Array2::zeros(self.nodes[*x].value.raw_dim());
                    dx.slice_mut(ndarray::s![*start..*end, ..]).assign(&g);
                    accumulate(&mut grads, *x, dx);
                }
                Op::SliceCols { x, start, end } => {
                    let mut dx = Array2::zeros(self.nodes[*x].value.raw_dim());
                    dx.slice_mut(ndarray::s![.., *start..*end]).assign(&g);
                    accumulate(&mut grads, *x, dx);
                }
                Op::MeanRows(x) => {
                    let n = self.nodes[*x].value.nrows();
                    let row = g.row(0).mapv(|v| v / n as f64);
                    let mut dx = Array2::zeros(self.nodes[*x].value.raw_dim());
                    for i in 0..n {
                        dx.row_mut(i).assign(&row);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Transpose(x) => accumulate(&mut grads, *x, g.t().to_owned()),
                Op::GatherRows { table, ids } => {
                    let mut dt = Array2::zeros(self.nodes[*table].value.raw_dim());
                    for (i, &id) in ids.iter().enumerate() {
                        let mut row = dt.row_mut(id);
                        row += &g.row(i);
                    }
                    accumulate(&mut grads, *table, dt);
                }
                Op::MulConst(x, mask) => accumulate(&mut grads, *x, &g * mask),
                Op::CrossEntropy { logits, targets, weights, clamped } => {
                    let lv = &self.nodes[*logits].value;
                    let n = lv.nrows();
                    let up = g[[0, 0]] / n as f64;
                    let mut dl = Array2::zeros(lv.raw_dim());
                    for i in 0..n {
                        if clamped[i] {
                            continue;
                        }
                        let row = lv.row(i);
                        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
                        let sum: f64 = exps.iter().sum();
                        for j in 0..lv.ncols() {
                            let p = exps[j] / sum;
                            let delta = if j == targets[i] { 1.0 } else { 0.0 };
                            dl[[i, j]] = up * weights[i] * (p - delta);
                        }
                    }
                    accumulate(&mut grads, *logits, dl);
                }
            }
        }
        Grads { grads }
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], idx: usize, g: Array2<f64>) {
    match &mut grads[idx] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

// tanh approximation of GELU; smooth, so finite-difference checks hold.
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x.powi(3))).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x.powi(3));
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Central-difference gradient checker used across module tests: perturbs
/// every element of `param`, rebuilds the loss with `f`, and compares against
/// `analytic`. Returns the worst relative error.
pub fn finite_diff_rel_error<F>(param: &mut Array2<f64>, analytic: &Array2<f64>, eps: f64, mut f: F) -> f64
where
    F: FnMut(&Array2<f64>) -> f64,
{
    let mut fd = Array2::zeros(param.raw_dim());
    for i in 0..param.nrows() {
        for j in 0..param.ncols() {
            let orig = param[[i, j]];
            param[[i, j]] = orig + eps;
            let up = f(param);
            param[[i, j]] = orig - eps;
            let down = f(param);
            param[[i, j]] = orig;
            fd[[i, j]] = (up - down) / (2.0 * eps);
        }
    }
    let num = (analytic - &fd).mapv(f64::abs).sum();
    let den = fd.mapv(f64::abs).sum().max(1e-10);
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn randn(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, d), |_| rng.random::<f64>() * 2.0 - 1.0)
    }

    /// FD check for a scalar-valued graph builder over two leaf inputs.
    fn check_two_input<F>(a0: Array2<f64>, b0: Array2<f64>, build: F)
    where
        F: Fn(&mut Tape, Var, Var) -> Var,
    {
        let mut tape = Tape::new();
        let a = tape.leaf(a0.clone());
        let b = tape.leaf(b0.clone());
        let loss = build(&mut tape, a, b);
        assert_eq!(tape.value(loss).dim(), (1, 1));
        let grads = tape.backward(loss);
        let ga = grads.get(a, &tape);
        let gb = grads.get(b, &tape);

        let mut a_mut = a0.clone();
        let err_a = finite_diff_rel_error(&mut a_mut, &ga, 1e-5, |av| {
            let mut t = Tape::new();
            let va = t.leaf(av.clone());
            let vb = t.leaf(b0.clone());
            let l = build(&mut t, va, vb);
            t.scalar(l)
        });
        assert!(err_a < 1e-6, "input-a gradient off: rel err {err_a}");

        let mut b_mut = b0.clone();
        let err_b = finite_diff_rel_error(&mut b_mut, &gb, 1e-5, |bv| {
            let mut t = Tape::new();
            let va = t.leaf(a0.clone());
            let vb = t.leaf(bv.clone());
            let l = build(&mut t, va, vb);
            t.scalar(l)
        });
        assert!(err_b < 1e-6, "input-b gradient off: rel err {err_b}");
    }

    /// Reduce any matrix to a scalar in a gradient-rich way: sum of tanh.
    fn squash(t: &mut Tape, x: Var) -> Var {
        let y = t.tanh(x);
        let n = t.value(y).nrows();
        let flat = if n > 1 { t.mean_rows(y) } else { y };
        let d = t.value(flat).ncols();
        let w = t.leaf(Array2::from_shape_fn((d, 1), |(i, _)| 0.3 + 0.1 * i as f64));
        t.matmul(flat, w)
    }

    #[test]
    fn matmul_add_mul_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = randn(&mut rng, 3, 4);
        let b = randn(&mut rng, 4, 3);
        check_two_input(a, b, |t, va, vb| {
            let m = t.matmul(va, vb);
            squash(t, m)
        });

        let a = randn(&mut rng, 3, 4);
        let b = randn(&mut rng, 3, 4);
        check_two_input(a.clone(), b.clone(), |t, va, vb| {
            let s = t.add(va, vb);
            squash(t, s)
        });
        check_two_input(a.clone(), b.clone(), |t, va, vb| {
            let s = t.mul(va, vb);
            squash(t, s)
        });
        check_two_input(a, b, |t, va, vb| {
            let s = t.sub(va, vb);
            squash(t, s)
        });
    }

    #[test]
    fn broadcast_row_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = randn(&mut rng, 4, 5);
        let r = randn(&mut rng, 1, 5);
        check_two_input(a.clone(), r.clone(), |t, va, vr| {
            let s = t.add_row(va, vr);
            squash(t, s)
        });
        check_two_input(a, r, |t, va, vr| {
            let s = t.mul_row(va, vr);
            squash(t, s)
        });
    }

    #[test]
    fn activation_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = randn(&mut rng, 3, 3);
        let dummy = Array2::zeros((1, 1));
        check_two_input(a.clone(), dummy.clone(), |t, va, _| {
            let y = t.sigmoid(va);
            squash(t, y)
        });
        check_two_input(a.clone(), dummy.clone(), |t, va, _| {
            let y = t.gelu(va);
            squash(t, y)
        });
        check_two_input(a, dummy, |t, va, _| {
            let y = t.one_minus(va);
            let y = t.scale(y, 0.7);
            squash(t, y)
        });
    }

    #[test]
    fn softmax_layernorm_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = randn(&mut rng, 4, 4);
        let dummy = Array2::zeros((1, 1));
        check_two_input(a.clone(), dummy.clone(), |t, va, _| {
            let y = t.softmax(va, None, false).unwrap();
            squash(t, y)
        });
        check_two_input(a.clone(), dummy.clone(), |t, va, _| {
            let mask = [true, true, false, true];
            let y = t.softmax(va, Some(&mask), false).unwrap();
            squash(t, y)
        });
        check_two_input(a.clone(), dummy.clone(), |t, va, _| {
            let y = t.softmax(va, None, true).unwrap();
            squash(t, y)
        });
        check_two_input(a, dummy, |t, va, _| {
            let y = t.layer_norm(va);
            squash(t, y)
        });
    }

    #[test]
    fn structural_op_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = randn(&mut rng, 4, 3);
        let b = randn(&mut rng, 4, 2);
        check_two_input(a.clone(), b.clone(), |t, va, vb| {
            let y = t.concat_cols(&[va, vb]);
            squash(t, y)
        });
        let b2 = randn(&mut rng, 2, 3);
        check_two_input(a.clone(), b2, |t, va, vb| {
            let y = t.concat_rows(&[va, vb]);
            squash(t, y)
        });
        let dummy = Array2::zeros((1, 1));
        check_two_input(a.clone(), dummy.clone(), |t, va, _| {
            let y = t.slice_rows(va, 1, 3);
            squash(t, y)
        });
        check_two_input(a.clone(), dummy.clone(), |t, va, _| {
            let y = t.slice_cols(va, 0, 2);
            squash(t, y)
        });
        check_two_input(a.clone(), dummy.clone(), |t, va, _| {
            let y = t.mean_rows(va);
            squash(t, y)
        });
        check_two_input(a, dummy, |t, va, _| {
            let y = t.transpose(va);
            squash(t, y)
        });
    }

    #[test]
    fn gather_accumulates_repeated_ids() {
        let table0 = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let dummy = Array2::zeros((1, 1));
        check_two_input(table0.clone(), dummy, |t, vt, _| {
            let y = t.gather_rows(vt, &[0, 2, 0]);
            squash(t, y)
        });
        // direct check that repeated rows sum
        let mut tape = Tape::new();
        let vt = tape.leaf(table0);
        let y = tape.gather_rows(vt, &[1, 1]);
        let m = tape.mean_rows(y);
        let w = tape.leaf(array![[1.0], [1.0]]);
        let loss = tape.matmul(m, w);
        let grads = tape.backward(loss);
        let gt = grads.get(vt, &tape);
        assert_eq!(gt[[1, 0]], 1.0); // 2 gathers * 1/2 mean * 1.0
        assert_eq!(gt[[0, 0]], 0.0);
    }

    #[test]
    fn cross_entropy_matches_hand_values() {
        // uniform logits over 5 classes, unit weight -> ln 5
        let mut tape = Tape::new();
        let logits = tape.leaf(Array2::zeros((1, 5)));
        let loss = tape.cross_entropy(logits, &[2], &[1.0]);
        assert!((tape.scalar(loss) - 5.0_f64.ln()).abs() < 1e-12);

        // weight scales linearly
        let mut tape = Tape::new();
        let logits = tape.leaf(Array2::zeros((1, 5)));
        let loss = tape.cross_entropy(logits, &[2], &[2.0]);
        assert!((tape.scalar(loss) - 2.0 * 5.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_grad_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let logits0 = randn(&mut rng, 3, 5);
        let targets = [0usize, 3, 1];
        let weights = [1.0, 0.5, 2.0];

        let mut tape = Tape::new();
        let l = tape.leaf(logits0.clone());
        let loss = tape.cross_entropy(l, &targets, &weights);
        let grads = tape.backward(loss);
        let gl = grads.get(l, &tape);

        let mut l_mut = logits0.clone();
        let err = finite_diff_rel_error(&mut l_mut, &gl, 1e-6, |lv| {
            let mut t = Tape::new();
            let v = t.leaf(lv.clone());
            let loss = t.cross_entropy(v, &targets, &weights);
            t.scalar(loss)
        });
        assert!(err < 1e-7, "cross entropy grad rel err {err}");
    }

    #[test]
    fn cross_entropy_clamps_underflow() {
        let mut tape = Tape::new();
        let mut logits = Array2::zeros((1, 2));
        logits[[0, 0]] = 800.0; // target prob e^-800 underflows the floor
        let l = tape.leaf(logits);
        let loss = tape.cross_entropy(l, &[1], &[1.0]);
        assert!((tape.scalar(loss) - -(1e-12_f64.ln()) * 1.0).abs() < 1e-9);
        assert_eq!(tape.clamp_count(), 1);
        // clamped row contributes zero gradient
        let grads = tape.backward(loss);
        assert_eq!(grads.get(l, &tape).mapv(f64::abs).sum(), 0.0);
    }

    #[test]
    fn softmax_all_masked_row_errors() {
        let mut tape = Tape::new();
        let x = tape.leaf(Array2::zeros((2, 2)));
        let mask = [false, false];
        assert!(tape.softmax(x, Some(&mask), false).is_err());
    }

    #[test]
    fn grad_through_shared_leaf_accumulates() {
        // y = x*x summed two ways; gradient must combine both uses of x
        let mut tape = Tape::new();
        let x = tape.leaf(array![[2.0]]);
        let y = tape.mul(x, x);
        let z = tape.add(y, x);
        let grads = tape.backward(z);
        assert_eq!(grads.get(x, &tape)[[0, 0]], 5.0); // 2x + 1 at x=2
    }
}
