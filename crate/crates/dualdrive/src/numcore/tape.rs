//! Reverse-mode automatic differentiation over [`Array`] values.
//!
//! A [`Tape`] records primitive operations during the forward pass; calling
//! [`Tape::backward`] on a scalar output replays the record in reverse and
//! accumulates gradients into every `requires_grad` leaf. Nodes downstream
//! of a stop-gradient contribute nothing upstream. A tape is confined to the
//! thread that built it.

use std::cell::RefCell;

use super::array::{Array, NumError};
use super::math;
use super::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    StopGrad(#[allow(dead_code)] usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    AddScalar(usize, #[allow(dead_code)] f64),
    MulScalar(usize, f64),
    Matmul(usize, usize),
    AddRow(usize, usize),
    RepeatRowsEach(usize, usize),
    Tanh(usize),
    Sigmoid(usize),
    Silu(usize),
    Ln(usize),
    Exp(usize),
    ClampMin(usize, f64),
    SoftmaxRows(usize, usize),
    ConcatCols(Vec<usize>),
    SliceCols {
        a: usize,
        start: usize,
        len: usize,
    },
    Reshape(usize),
    Sum(usize),
    Mean(usize),
    SumRows(usize),
    OneHotStRows(usize),
    BernNllLogits {
        logits: usize,
        target: Vec<f64>,
    },
}

struct Node {
    value: Array,
    needs_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Gradient buffers produced by [`Tape::backward`], indexed by tape node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the backward output with respect to `v`. Leaves the graph
    /// never touched come back as zeros of the right shape.
    pub fn wrt(&self, v: Var) -> Array {
        match &self.grads[v.0] {
            Some(g) => Array::from_vec(self.shapes[v.0].clone(), g.clone()).unwrap(),
            None => Array::zeros(self.shapes[v.0].clone()),
        }
    }

    pub fn is_zero(&self, v: Var) -> bool {
        match &self.grads[v.0] {
            Some(g) => g.iter().all(|&x| x == 0.0),
            None => true,
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Array, needs_grad: bool, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            needs_grad,
            op,
        });
        Var(nodes.len() - 1)
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    /// Register a leaf; gradient participation follows `arr.requires_grad`.
    pub fn leaf(&self, arr: &Array) -> Var {
        let needs = arr.requires_grad;
        self.push(arr.clone(), needs, Op::Leaf)
    }

    pub fn constant(&self, arr: Array) -> Var {
        self.push(arr, false, Op::Leaf)
    }

    pub fn constant_scalar(&self, v: f64) -> Var {
        self.constant(Array::scalar(v))
    }

    pub fn value(&self, v: Var) -> Array {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn item(&self, v: Var) -> f64 {
        let nodes = self.nodes.borrow();
        nodes[v.0].value.data()[0]
    }

    pub fn rows(&self, v: Var) -> usize {
        self.nodes.borrow()[v.0].value.rows()
    }

    pub fn cols(&self, v: Var) -> usize {
        self.nodes.borrow()[v.0].value.cols()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    fn with_value<R>(&self, v: Var, f: impl FnOnce(&Array) -> R) -> R {
        f(&self.nodes.borrow()[v.0].value)
    }

    pub fn stop_grad(&self, a: Var) -> Var {
        let value = self.value(a);
        self.push(value, false, Op::StopGrad(a.0))
    }

    fn zip_elementwise(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, name: &str) -> Array {
        let nodes = self.nodes.borrow();
        let av = &nodes[a.0].value;
        let bv = &nodes[b.0].value;
        assert_eq!(
            av.len(),
            bv.len(),
            "{name}: shape mismatch {:?} vs {:?}",
            av.shape(),
            bv.shape()
        );
        let data = av
            .data()
            .iter()
            .zip(bv.data().iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Array::from_vec(av.shape().to_vec(), data).unwrap()
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let out = self.zip_elementwise(a, b, |x, y| x + y, "add");
        self.push(out, self.needs(a.0) || self.needs(b.0), Op::Add(a.0, b.0))
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let out = self.zip_elementwise(a, b, |x, y| x - y, "sub");
        self.push(out, self.needs(a.0) || self.needs(b.0), Op::Sub(a.0, b.0))
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let out = self.zip_elementwise(a, b, |x, y| x * y, "mul");
        self.push(out, self.needs(a.0) || self.needs(b.0), Op::Mul(a.0, b.0))
    }

    pub fn neg(&self, a: Var) -> Var {
        let out = self.map_elementwise(a, |x| -x);
        self.push(out, self.needs(a.0), Op::Neg(a.0))
    }

    fn map_elementwise(&self, a: Var, f: impl Fn(f64) -> f64) -> Array {
        let nodes = self.nodes.borrow();
        let av = &nodes[a.0].value;
        let data = av.data().iter().map(|&x| f(x)).collect();
        Array::from_vec(av.shape().to_vec(), data).unwrap()
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Var {
        let out = self.map_elementwise(a, |x| x + c);
        self.push(out, self.needs(a.0), Op::AddScalar(a.0, c))
    }

    pub fn mul_scalar(&self, a: Var, c: f64) -> Var {
        let out = self.map_elementwise(a, |x| x * c);
        self.push(out, self.needs(a.0), Op::MulScalar(a.0, c))
    }

    pub fn tanh(&self, a: Var) -> Var {
        let out = self.map_elementwise(a, f64::tanh);
        self.push(out, self.needs(a.0), Op::Tanh(a.0))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let out = self.map_elementwise(a, sigmoid);
        self.push(out, self.needs(a.0), Op::Sigmoid(a.0))
    }

    pub fn silu(&self, a: Var) -> Var {
        let out = self.map_elementwise(a, |x| x * sigmoid(x));
        self.push(out, self.needs(a.0), Op::Silu(a.0))
    }

    pub fn ln(&self, a: Var) -> Var {
        let out = self.map_elementwise(a, f64::ln);
        self.push(out, self.needs(a.0), Op::Ln(a.0))
    }

    pub fn exp(&self, a: Var) -> Var {
        let out = self.map_elementwise(a, f64::exp);
        self.push(out, self.needs(a.0), Op::Exp(a.0))
    }

    pub fn clamp_min(&self, a: Var, min: f64) -> Var {
        let out = self.map_elementwise(a, |x| x.max(min));
        self.push(out, self.needs(a.0), Op::ClampMin(a.0, min))
    }

    /// `a[m,k] * b[k,n]`, 2-D only.
    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let out = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.0].value;
            let bv = &nodes[b.0].value;
            let (m, k) = (av.rows(), av.cols());
            let (k2, n) = (bv.rows(), bv.cols());
            assert_eq!(k, k2, "matmul: inner dims {k} vs {k2}");
            Array::from_vec(vec![m, n], math::matmul(av.data(), bv.data(), m, k, n)).unwrap()
        };
        self.push(out, self.needs(a.0) || self.needs(b.0), Op::Matmul(a.0, b.0))
    }

    /// `[m,n] + [n]` row-broadcast bias add.
    pub fn add_row(&self, a: Var, bias: Var) -> Var {
        let out = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.0].value;
            let bv = &nodes[bias.0].value;
            let n = av.cols();
            assert_eq!(bv.len(), n, "add_row: bias len {} vs cols {n}", bv.len());
            let mut data = av.data().to_vec();
            for row in data.chunks_exact_mut(n) {
                for (o, &b) in row.iter_mut().zip(bv.data().iter()) {
                    *o += b;
                }
            }
            Array::from_vec(av.shape().to_vec(), data).unwrap()
        };
        self.push(
            out,
            self.needs(a.0) || self.needs(bias.0),
            Op::AddRow(a.0, bias.0),
        )
    }

    /// Repeat each row of `a` `times` consecutive times: `[m,n] -> [m*times,n]`.
    pub fn repeat_rows_each(&self, a: Var, times: usize) -> Var {
        let out = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.0].value;
            let n = av.cols();
            let mut data = Vec::with_capacity(av.len() * times);
            for row in av.data().chunks_exact(n) {
                for _ in 0..times {
                    data.extend_from_slice(row);
                }
            }
            Array::from_vec(vec![av.rows() * times, n], data).unwrap()
        };
        self.push(out, self.needs(a.0), Op::RepeatRowsEach(a.0, times))
    }

    pub fn linear(&self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_row(y, b)
    }

    /// Row-wise softmax over segments of `width` columns.
    pub fn softmax_rows(&self, a: Var, width: usize) -> Var {
        let out = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.0].value;
            assert_eq!(av.len() % width, 0, "softmax_rows: width {width}");
            let mut data = av.data().to_vec();
            for row in data.chunks_exact_mut(width) {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                for v in row.iter_mut() {
                    *v /= sum;
                }
            }
            Array::from_vec(av.shape().to_vec(), data).unwrap()
        };
        self.push(out, self.needs(a.0), Op::SoftmaxRows(a.0, width))
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let out = {
            let nodes = self.nodes.borrow();
            let m = nodes[parts[0].0].value.rows();
            let widths: Vec<usize> = parts.iter().map(|p| nodes[p.0].value.cols()).collect();
            for p in parts {
                assert_eq!(nodes[p.0].value.rows(), m, "concat_cols: row mismatch");
            }
            let total: usize = widths.iter().sum();
            let mut data = Vec::with_capacity(m * total);
            for r in 0..m {
                for (p, &w) in parts.iter().zip(widths.iter()) {
                    let src = nodes[p.0].value.data();
                    data.extend_from_slice(&src[r * w..(r + 1) * w]);
                }
            }
            Array::from_vec(vec![m, total], data).unwrap()
        };
        let needs = parts.iter().any(|p| self.needs(p.0));
        self.push(out, needs, Op::ConcatCols(parts.iter().map(|p| p.0).collect()))
    }

    pub fn slice_cols(&self, a: Var, start: usize, len: usize) -> Var {
        let out = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.0].value;
            let n = av.cols();
            assert!(start + len <= n, "slice_cols: {start}+{len} > {n}");
            let m = av.rows();
            let mut data = Vec::with_capacity(m * len);
            for row in av.data().chunks_exact(n) {
                data.extend_from_slice(&row[start..start + len]);
            }
            Array::from_vec(vec![m, len], data).unwrap()
        };
        self.push(out, self.needs(a.0), Op::SliceCols { a: a.0, start, len })
    }

    pub fn reshape(&self, a: Var, shape: Vec<usize>) -> Var {
        let out = {
            let nodes = self.nodes.borrow();
            nodes[a.0].value.clone().reshaped(shape).expect("reshape")
        };
        self.push(out, self.needs(a.0), Op::Reshape(a.0))
    }

    pub fn sum(&self, a: Var) -> Var {
        let total = self.with_value(a, |v| v.data().iter().sum());
        self.push(Array::scalar(total), self.needs(a.0), Op::Sum(a.0))
    }

    pub fn mean(&self, a: Var) -> Var {
        let total = self.with_value(a, |v| v.data().iter().sum::<f64>() / v.len() as f64);
        self.push(Array::scalar(total), self.needs(a.0), Op::Mean(a.0))
    }

    /// `[m,n] -> [m,1]`, summing over columns.
    pub fn sum_rows(&self, a: Var) -> Var {
        let out = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.0].value;
            let n = av.cols();
            let data: Vec<f64> = av
                .data()
                .chunks_exact(n)
                .map(|row| row.iter().sum())
                .collect();
            Array::from_vec(vec![av.rows(), 1], data).unwrap()
        };
        self.push(out, self.needs(a.0), Op::SumRows(a.0))
    }

    /// One-hot sample per row with straight-through gradient to the
    /// probability input. Consumes exactly one rng draw per row.
    pub fn one_hot_st_rows(&self, probs: Var, rng: &mut Rng) -> Var {
        let out = {
            let nodes = self.nodes.borrow();
            let pv = &nodes[probs.0].value;
            let n = pv.cols();
            let mut data = vec![0.0; pv.len()];
            for (r, row) in pv.data().chunks_exact(n).enumerate() {
                let idx = rng.categorical(row);
                data[r * n + idx] = 1.0;
            }
            Array::from_vec(pv.shape().to_vec(), data).unwrap()
        };
        self.push(out, self.needs(probs.0), Op::OneHotStRows(probs.0))
    }

    /// Elementwise Bernoulli negative log-likelihood from logits against a
    /// constant 0/1 target: `softplus(x) - x*t`, numerically stable.
    pub fn bern_nll_logits(&self, logits: Var, target: &Array) -> Var {
        let out = {
            let nodes = self.nodes.borrow();
            let lv = &nodes[logits.0].value;
            assert_eq!(lv.len(), target.len(), "bern_nll_logits target len");
            let data = lv
                .data()
                .iter()
                .zip(target.data().iter())
                .map(|(&x, &t)| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p())
                .collect();
            Array::from_vec(lv.shape().to_vec(), data).unwrap()
        };
        self.push(
            out,
            self.needs(logits.0),
            Op::BernNllLogits {
                logits: logits.0,
                target: target.data().to_vec(),
            },
        )
    }

    /// Mean squared error between two same-shape vars, as a scalar.
    pub fn mse(&self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let sq = self.mul(d, d);
        self.mean(sq)
    }

    /// Backpropagate from a scalar output; returns per-node gradients.
    pub fn backward(&self, output: Var) -> Result<Gradients, NumError> {
        let nodes = self.nodes.borrow();
        if nodes[output.0].value.len() != 1 {
            return Err(NumError::NotScalar(nodes[output.0].value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[output.0] = Some(vec![1.0]);

        for id in (0..=output.0).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(go) = grads[id].take() else {
                continue;
            };
            let mut acc = |tgt: usize, contrib: &mut dyn FnMut(&mut [f64])| {
                if !nodes[tgt].needs_grad {
                    return;
                }
                let slot =
                    grads[tgt].get_or_insert_with(|| vec![0.0; nodes[tgt].value.len()]);
                contrib(slot);
            };
            match &node.op {
                Op::Leaf | Op::StopGrad(_) => {
                    grads[id] = Some(go);
                    continue;
                }
                Op::Add(a, b) => {
                    acc(*a, &mut |g| add_assign(g, &go));
                    acc(*b, &mut |g| add_assign(g, &go));
                }
                Op::Sub(a, b) => {
                    acc(*a, &mut |g| add_assign(g, &go));
                    acc(*b, &mut |g| sub_assign(g, &go));
                }
                Op::Mul(a, b) => {
                    let av = nodes[*a].value.data();
                    let bv = nodes[*b].value.data();
                    acc(*a, &mut |g| mul_add_assign(g, &go, bv));
                    acc(*b, &mut |g| mul_add_assign(g, &go, av));
                }
                Op::Neg(a) => acc(*a, &mut |g| sub_assign(g, &go)),
                Op::AddScalar(a, _) => acc(*a, &mut |g| add_assign(g, &go)),
                Op::MulScalar(a, c) => {
                    let c = *c;
                    acc(*a, &mut |g| {
                        for (gi, &gg) in g.iter_mut().zip(go.iter()) {
                            *gi += gg * c;
                        }
                    });
                }
                Op::Matmul(a, b) => {
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    acc(*a, &mut |g| math::matmul_nt_acc(&go, bv.data(), m, n, k, g));
                    acc(*b, &mut |g| math::matmul_tn_acc(av.data(), &go, m, k, n, g));
                }
                Op::AddRow(a, bias) => {
                    let n = nodes[*bias].value.len();
                    acc(*a, &mut |g| add_assign(g, &go));
                    acc(*bias, &mut |g| {
                        for row in go.chunks_exact(n) {
                            add_assign(g, row);
                        }
                    });
                }
                Op::RepeatRowsEach(a, times) => {
                    let n = nodes[*a].value.cols();
                    let times = *times;
                    acc(*a, &mut |g| {
                        for (r, row) in go.chunks_exact(n).enumerate() {
                            let src_row = r / times;
                            add_assign(&mut g[src_row * n..(src_row + 1) * n], row);
                        }
                    });
                }
                Op::Tanh(a) => {
                    let yv = node.value.data();
                    acc(*a, &mut |g| {
                        for ((gi, &gg), &y) in g.iter_mut().zip(go.iter()).zip(yv.iter()) {
                            *gi += gg * (1.0 - y * y);
                        }
                    });
                }
                Op::Sigmoid(a) => {
                    let yv = node.value.data();
                    acc(*a, &mut |g| {
                        for ((gi, &gg), &y) in g.iter_mut().zip(go.iter()).zip(yv.iter()) {
                            *gi += gg * y * (1.0 - y);
                        }
                    });
                }
                Op::Silu(a) => {
                    let xv = nodes[*a].value.data();
                    acc(*a, &mut |g| {
                        for ((gi, &gg), &x) in g.iter_mut().zip(go.iter()).zip(xv.iter()) {
                            let s = sigmoid(x);
                            *gi += gg * s * (1.0 + x * (1.0 - s));
                        }
                    });
                }
                Op::Ln(a) => {
                    let xv = nodes[*a].value.data();
                    acc(*a, &mut |g| {
                        for ((gi, &gg), &x) in g.iter_mut().zip(go.iter()).zip(xv.iter()) {
                            *gi += gg / x;
                        }
                    });
                }
                Op::Exp(a) => {
                    let yv = node.value.data();
                    acc(*a, &mut |g| {
                        for ((gi, &gg), &y) in g.iter_mut().zip(go.iter()).zip(yv.iter()) {
                            *gi += gg * y;
                        }
                    });
                }
                Op::ClampMin(a, min) => {
                    let xv = nodes[*a].value.data();
                    let min = *min;
                    acc(*a, &mut |g| {
                        for ((gi, &gg), &x) in g.iter_mut().zip(go.iter()).zip(xv.iter()) {
                            if x > min {
                                *gi += gg;
                            }
                        }
                    });
                }
                Op::SoftmaxRows(a, width) => {
                    let yv = node.value.data();
                    let width = *width;
                    acc(*a, &mut |g| {
                        for ((grow, gorow), yrow) in g
                            .chunks_exact_mut(width)
                            .zip(go.chunks_exact(width))
                            .zip(yv.chunks_exact(width))
                        {
                            let dot: f64 =
                                gorow.iter().zip(yrow.iter()).map(|(&a, &b)| a * b).sum();
                            for ((gi, &gg), &y) in
                                grow.iter_mut().zip(gorow.iter()).zip(yrow.iter())
                            {
                                *gi += y * (gg - dot);
                            }
                        }
                    });
                }
                Op::ConcatCols(parts) => {
                    let widths: Vec<usize> =
                        parts.iter().map(|&p| nodes[p].value.cols()).collect();
                    let total: usize = widths.iter().sum();
                    let mut offset = 0;
                    for (&p, &w) in parts.iter().zip(widths.iter()) {
                        let off = offset;
                        acc(p, &mut |g| {
                            for (r, row) in go.chunks_exact(total).enumerate() {
                                add_assign(&mut g[r * w..(r + 1) * w], &row[off..off + w]);
                            }
                        });
                        offset += w;
                    }
                }
                Op::SliceCols { a, start, len } => {
                    let n = nodes[*a].value.cols();
                    let (start, len) = (*start, *len);
                    acc(*a, &mut |g| {
                        for (r, row) in go.chunks_exact(len).enumerate() {
                            add_assign(&mut g[r * n + start..r * n + start + len], row);
                        }
                    });
                }
                Op::Reshape(a) => acc(*a, &mut |g| add_assign(g, &go)),
                Op::Sum(a) => {
                    let gg = go[0];
                    acc(*a, &mut |g| {
                        for gi in g.iter_mut() {
                            *gi += gg;
                        }
                    });
                }
                Op::Mean(a) => {
                    let gg = go[0] / nodes[*a].value.len() as f64;
                    acc(*a, &mut |g| {
                        for gi in g.iter_mut() {
                            *gi += gg;
                        }
                    });
                }
                Op::SumRows(a) => {
                    let n = nodes[*a].value.cols();
                    acc(*a, &mut |g| {
                        for (r, grow) in g.chunks_exact_mut(n).enumerate() {
                            for gi in grow.iter_mut() {
                                *gi += go[r];
                            }
                        }
                    });
                }
                Op::OneHotStRows(probs) => {
                    // Straight-through: gradient passes unchanged to probs.
                    acc(*probs, &mut |g| add_assign(g, &go));
                }
                Op::BernNllLogits { logits, target } => {
                    let xv = nodes[*logits].value.data();
                    acc(*logits, &mut |g| {
                        for (((gi, &gg), &x), &t) in g
                            .iter_mut()
                            .zip(go.iter())
                            .zip(xv.iter())
                            .zip(target.iter())
                        {
                            *gi += gg * (sigmoid(x) - t);
                        }
                    });
                }
            }
            grads[id] = Some(go);
        }

        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn add_assign(g: &mut [f64], src: &[f64]) {
    for (gi, &s) in g.iter_mut().zip(src.iter()) {
        *gi += s;
    }
}

fn sub_assign(g: &mut [f64], src: &[f64]) {
    for (gi, &s) in g.iter_mut().zip(src.iter()) {
        *gi -= s;
    }
}

fn mul_add_assign(g: &mut [f64], go: &[f64], other: &[f64]) {
    for ((gi, &gg), &o) in g.iter_mut().zip(go.iter()).zip(other.iter()) {
        *gi += gg * o;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var(t: &Tape, vals: &[f64]) -> Var {
        t.leaf(&Array::from_vec(vec![vals.len()], vals.to_vec()).unwrap().with_grad())
    }

    #[test]
    fn square_gradient() {
        // f(x) = x^2 at x = 3 -> df/dx = 6
        let t = Tape::new();
        let x = var(&t, &[3.0]);
        let y = t.mul(x, x);
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(x).data(), &[6.0]);
    }

    #[test]
    fn stop_grad_blocks_one_factor() {
        // f(x) = sg(x) * x at x = 2 -> df/dx = sg(x) = 2
        let t = Tape::new();
        let x = var(&t, &[2.0]);
        let sx = t.stop_grad(x);
        let y = t.mul(sx, x);
        let g = t.backward(y).unwrap();
        assert_eq!(t.item(y), 4.0);
        assert_eq!(g.wrt(x).data(), &[2.0]);
    }

    #[test]
    fn stop_grad_value_passthrough() {
        let t = Tape::new();
        let x = var(&t, &[1.5, -2.0]);
        let sx = t.stop_grad(x);
        assert_eq!(t.value(sx).data(), &[1.5, -2.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let t = Tape::new();
        let x = var(&t, &[1.0, 2.0]);
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn untouched_leaf_gets_zero_gradient() {
        let t = Tape::new();
        let x = var(&t, &[1.0]);
        let unused = var(&t, &[5.0, 6.0]);
        let y = t.mul(x, x);
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(unused).data(), &[0.0, 0.0]);
    }

    #[test]
    fn matmul_forward_and_grads() {
        let t = Tape::new();
        let a = t.leaf(
            &Array::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0])
                .unwrap()
                .with_grad(),
        );
        let b = t.leaf(
            &Array::from_vec(vec![2, 2], vec![5.0, 6.0, 7.0, 8.0])
                .unwrap()
                .with_grad(),
        );
        let c = t.matmul(a, b);
        assert_eq!(t.value(c).data(), &[19.0, 22.0, 43.0, 50.0]);
        let s = t.sum(c);
        let g = t.backward(s).unwrap();
        // d(sum)/dA = ones * B^T
        assert_eq!(g.wrt(a).data(), &[11.0, 15.0, 11.0, 15.0]);
        assert_eq!(g.wrt(b).data(), &[4.0, 4.0, 6.0, 6.0]);
    }

    #[test]
    fn softmax_rows_sums_to_one_and_grad_is_centered() {
        let t = Tape::new();
        let x = var(&t, &[1.0, 2.0, 3.0, -1.0, 0.0, 1.0]);
        let x2 = t.reshape(x, vec![2, 3]);
        let p = t.softmax_rows(x2, 3);
        let pv = t.value(p);
        for row in pv.data().chunks_exact(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        // Sum of probs is constant 1 per row, so gradient w.r.t. logits is 0.
        let s = t.sum(p);
        let g = t.backward(s).unwrap();
        for &v in g.wrt(x).data() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn one_hot_straight_through_gradient_matches_probs_path() {
        // grad of sum(w * onehot(p)) w.r.t. logits equals grad of sum(w * p).
        let logits = [0.3, -0.7, 1.1];
        let w = [2.0, -1.0, 0.5];
        let grad_with_sample = {
            let t = Tape::new();
            let x = var(&t, &logits);
            let x2 = t.reshape(x, vec![1, 3]);
            let p = t.softmax_rows(x2, 3);
            let mut rng = Rng::new(0);
            let oh = t.one_hot_st_rows(p, &mut rng);
            let wv = t.constant(Array::from_vec(vec![1, 3], w.to_vec()).unwrap());
            let y = t.sum(t.mul(oh, wv));
            t.backward(y).unwrap().wrt(x)
        };
        let grad_probs_path = {
            let t = Tape::new();
            let x = var(&t, &logits);
            let x2 = t.reshape(x, vec![1, 3]);
            let p = t.softmax_rows(x2, 3);
            let wv = t.constant(Array::from_vec(vec![1, 3], w.to_vec()).unwrap());
            let y = t.sum(t.mul(p, wv));
            t.backward(y).unwrap().wrt(x)
        };
        for (a, b) in grad_with_sample.data().iter().zip(grad_probs_path.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn bern_nll_perfect_prediction_is_zero() {
        let t = Tape::new();
        let x = t.constant(Array::from_vec(vec![2], vec![60.0, -60.0]).unwrap());
        let target = Array::from_vec(vec![2], vec![1.0, 0.0]).unwrap();
        let nll = t.bern_nll_logits(x, &target);
        for &v in t.value(nll).data() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn concat_slice_roundtrip_grads() {
        let t = Tape::new();
        let a = var(&t, &[1.0, 2.0]);
        let b = var(&t, &[3.0]);
        let a2 = t.reshape(a, vec![1, 2]);
        let b2 = t.reshape(b, vec![1, 1]);
        let c = t.concat_cols(&[a2, b2]);
        assert_eq!(t.value(c).data(), &[1.0, 2.0, 3.0]);
        let right = t.slice_cols(c, 1, 2);
        let s = t.sum(right);
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(a).data(), &[0.0, 1.0]);
        assert_eq!(g.wrt(b).data(), &[1.0]);
    }

    #[test]
    fn repeat_rows_each_grad_sums_repeats() {
        let t = Tape::new();
        let a = t.leaf(
            &Array::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0])
                .unwrap()
                .with_grad(),
        );
        let r = t.repeat_rows_each(a, 3);
        assert_eq!(t.rows(r), 6);
        let s = t.sum(r);
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(a).data(), &[3.0, 3.0, 3.0, 3.0]);
    }

    #[test]
    fn perceptron_matches_finite_differences() {
        // Random 3-layer perceptron, ~200 params; relative error <= 1e-4.
        let mut rng = Rng::new(2024);
        let dims = [6, 13, 8, 1];
        let mut params: Vec<Array> = Vec::new();
        for w in dims.windows(2) {
            let (i, o) = (w[0], w[1]);
            let scale = 1.0 / (i as f64).sqrt();
            let data: Vec<f64> = (0..i * o).map(|_| rng.normal() * scale).collect();
            params.push(Array::from_vec(vec![i, o], data).unwrap().with_grad());
            params.push(Array::zeros(vec![o]).with_grad());
        }
        let input: Vec<f64> = (0..2 * 6).map(|_| rng.normal()).collect();
        let target: Vec<f64> = (0..2).map(|_| rng.normal()).collect();

        let eval = |params: &[Array]| -> (f64, Vec<Array>) {
            let t = Tape::new();
            let vars: Vec<Var> = params.iter().map(|p| t.leaf(p)).collect();
            let x = t.constant(Array::from_vec(vec![2, 6], input.clone()).unwrap());
            let mut h = x;
            for layer in 0..3 {
                h = t.linear(h, vars[2 * layer], vars[2 * layer + 1]);
                if layer < 2 {
                    h = t.tanh(h);
                }
            }
            let tv = t.constant(Array::from_vec(vec![2, 1], target.clone()).unwrap());
            let loss = t.mse(h, tv);
            let val = t.item(loss);
            let g = t.backward(loss).unwrap();
            (val, vars.iter().map(|&v| g.wrt(v)).collect())
        };

        let (_, analytic) = eval(&params);
        let eps = 1e-5;
        let total: usize = params.iter().map(|p| p.len()).sum();
        assert!(total >= 200, "want >= 200 params, have {total}");
        for (pi, p) in params.iter().enumerate() {
            for i in 0..p.len() {
                let mut plus = params.clone();
                plus[pi].data_mut()[i] += eps;
                let mut minus = params.clone();
                minus[pi].data_mut()[i] -= eps;
                let fd = (eval(&plus).0 - eval(&minus).0) / (2.0 * eps);
                let an = analytic[pi].data()[i];
                let denom = an.abs().max(fd.abs()).max(1e-6);
                assert!(
                    (an - fd).abs() / denom <= 1e-4,
                    "param {pi}[{i}]: analytic {an} vs fd {fd}"
                );
            }
        }
    }
}
