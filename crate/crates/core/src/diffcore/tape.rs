use std::borrow::Cow;

use super::kernels::gemm;
use super::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Sigmoid,
    Tanh,
    Relu,
    Scale(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, trans_b: bool },
    Binary(Binary, Var, Var),
    Unary(Unary, Var),
    AddBias { x: Var, bias: Var },
    ScaleRows { x: Var, s: Var },
    SumCols(Var),
    Sum(Var),
    Mean(Var),
    Concat { a: Var, b: Var, outer: usize, a_inner: usize, b_inner: usize },
    Column { x: Var, col: usize },
    Softmax(Var),
    NormalizeRows(Var),
    Dropout { x: Var, mask: Vec<f64> },
    StopGradient,
    SmoothL1 { pred: Var, target: Vec<f64>, beta: f64, literal: bool },
}

struct Node<'p> {
    shape: Vec<usize>,
    value: Cow<'p, [f64]>,
    op: Op,
    tracked: bool,
}

/// Ordered record of every operation of one forward pass.
///
/// Nodes are appended in execution order, so the record is topologically
/// sorted by construction and [`Tape::backward`] is a single reverse sweep.
/// Leaves may borrow their values (`'p`), which keeps binding a large
/// parameter set free of copies.
#[derive(Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
}

/// Gradients from one backward sweep, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    lens: Vec<usize>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, zeros when no path reaches it.
    pub fn wrt(&self, v: Var) -> Vec<f64> {
        self.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; self.lens[v.0]])
    }
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (1, *n),
        [r, c] => (*r, *c),
        _ => (shape[..shape.len() - 1].iter().product(), shape[shape.len() - 1]),
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], i: usize, len: usize) -> &mut Vec<f64> {
    grads[i].get_or_insert_with(|| vec![0.0; len])
}

/// Elementwise smooth-L1 on a residual `d`: `(loss, dloss/dd)`.
///
/// Default form is the continuous Huber curve with knee at `beta`. The
/// `literal` form keeps a fixed 0.5 threshold without dividing by `beta`,
/// which is discontinuous at `|d| = 0.5`.
pub fn smooth_l1_elem(d: f64, beta: f64, literal: bool) -> (f64, f64) {
    if literal {
        if d.abs() < 0.5 {
            (0.5 * d * d, d)
        } else {
            (d.abs() - 0.5, d.signum())
        }
    } else if d.abs() < beta {
        (0.5 * d * d / beta, d / beta)
    } else {
        (d.abs() - 0.5 * beta, d.signum())
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>, op: Op, tracked: bool) -> Result<Var> {
        // x * 0 is NaN exactly when x is not finite; the sum vectorizes
        if !data.iter().fold(0.0, |acc, x| acc + x * 0.0).is_finite() {
            let bad = data.iter().position(|x| !x.is_finite()).unwrap_or(0);
            return Err(Error::NonFinite(format!("{name} (element {bad} = {})", data[bad])));
        }
        self.nodes.push(Node { shape, value: Cow::Owned(data), op, tracked });
        Ok(Var(self.nodes.len() - 1))
    }

    fn node(&self, v: Var) -> &Node<'p> {
        &self.nodes[v.0]
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracked)
    }

    /// Differentiable leaf borrowing its value.
    pub fn leaf(&mut self, t: &'p Tensor) -> Var {
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: Cow::Borrowed(t.data()),
            op: Op::Leaf,
            tracked: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf_owned(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.nodes.push(Node { shape, value: Cow::Owned(t.into_data()), op: Op::Leaf, tracked: true });
        Var(self.nodes.len() - 1)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.nodes.push(Node { shape, value: Cow::Owned(t.into_data()), op: Op::Leaf, tracked: false });
        Var(self.nodes.len() - 1)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        self.constant(Tensor::zeros(shape))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.to_vec()).expect("tape node shape is consistent")
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::shape(op, format!("expected a matrix, got {s:?}"))),
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    /// `a · b` for `a: m×k`, `b: k×n`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("{m}x{k} · {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), false, 0.0, &mut out);
        let tracked = self.tracked(&[a, b]);
        self.push("matmul", vec![m, n], out, Op::MatMul { a, b, trans_b: false }, tracked)
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k` (weights stored output-major).
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2("matmul_t", a)?;
        let (n, k2) = self.dims2("matmul_t", b)?;
        if k != k2 {
            return Err(Error::shape("matmul_t", format!("{m}x{k} · ({n}x{k2})ᵀ")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), true, 0.0, &mut out);
        let tracked = self.tracked(&[a, b]);
        self.push("matmul_t", vec![m, n], out, Op::MatMul { a, b, trans_b: true }, tracked)
    }

    pub fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        self.same_shape("elementwise", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let out: Vec<f64> = match kind {
            Binary::Add => x.iter().zip(y).map(|(p, q)| p + q).collect(),
            Binary::Sub => x.iter().zip(y).map(|(p, q)| p - q).collect(),
            Binary::Mul => x.iter().zip(y).map(|(p, q)| p * q).collect(),
        };
        let shape = self.shape(a).to_vec();
        let tracked = self.tracked(&[a, b]);
        self.push("elementwise", shape, out, Op::Binary(kind, a, b), tracked)
    }

    pub fn unary(&mut self, kind: Unary, x: Var) -> Result<Var> {
        let v = self.value(x);
        let out: Vec<f64> = match kind {
            Unary::Sigmoid => v.iter().map(|&z| sigmoid(z)).collect(),
            Unary::Tanh => v.iter().map(|z| z.tanh()).collect(),
            Unary::Relu => v.iter().map(|&z| if z > 0.0 { z } else { 0.0 }).collect(),
            Unary::Scale(c) => v.iter().map(|z| z * c).collect(),
        };
        let shape = self.shape(x).to_vec();
        let tracked = self.tracked(&[x]);
        self.push("elementwise", shape, out, Op::Unary(kind, x), tracked)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Tanh, x)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Relu, x)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(Unary::Scale(c), x)
    }

    /// Adds a length-`n` bias (shape `[n]` or `[1, n]`) to every row of `x: m×n`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims2("add_bias", x)?;
        if self.value(bias).len() != n {
            return Err(Error::shape("add_bias", format!("bias {:?} for {m}x{n}", self.shape(bias))));
        }
        let (v, b) = (self.value(x), self.value(bias));
        let out: Vec<f64> = v.iter().enumerate().map(|(i, z)| z + b[i % n]).collect();
        let tracked = self.tracked(&[x, bias]);
        self.push("add_bias", vec![m, n], out, Op::AddBias { x, bias }, tracked)
    }

    /// `x · wᵀ + b`, the usual dense layer with output-major weights.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul_t(x, w)?;
        match b {
            Some(b) => self.add_bias(y, b),
            None => Ok(y),
        }
    }

    /// Multiplies row `r` of `x: m×n` by `s[r]`, `s: m×1`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (m, n) = self.dims2("scale_rows", x)?;
        if self.shape(s) != [m, 1] {
            return Err(Error::shape("scale_rows", format!("scales {:?} for {m}x{n}", self.shape(s))));
        }
        let (v, f) = (self.value(x), self.value(s));
        let out: Vec<f64> = v.iter().enumerate().map(|(i, z)| z * f[i / n.max(1)]).collect();
        let tracked = self.tracked(&[x, s]);
        self.push("scale_rows", vec![m, n], out, Op::ScaleRows { x, s }, tracked)
    }

    /// Row sums, `m×n -> m×1`.
    pub fn sum_cols(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2("sum_cols", x)?;
        let v = self.value(x);
        let out: Vec<f64> = (0..m).map(|r| v[r * n..(r + 1) * n].iter().sum()).collect();
        let tracked = self.tracked(&[x]);
        self.push("sum_cols", vec![m, 1], out, Op::SumCols(x), tracked)
    }

    /// Row-wise inner product of two `m×n` matrices, `m×1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        self.sum_cols(p)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().sum();
        let tracked = self.tracked(&[x]);
        self.push("sum", vec![1], vec![s], Op::Sum(x), tracked)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.is_empty() {
            return Err(Error::InvalidArgument("mean of an empty tensor".into()));
        }
        let s = v.iter().sum::<f64>() / v.len() as f64;
        let tracked = self.tracked(&[x]);
        self.push("mean", vec![1], vec![s], Op::Mean(x), tracked)
    }

    /// Joins `a` and `b` along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if axis >= sa.len() {
            return Err(Error::shape("concat", format!("axis {axis} out of range for {sa:?}")));
        }
        let agree = sa.len() == sb.len() && sa.iter().zip(&sb).enumerate().all(|(i, (p, q))| i == axis || p == q);
        if !agree {
            return Err(Error::shape("concat", format!("{sa:?} vs {sb:?} on axis {axis}")));
        }
        let outer: usize = sa[..axis].iter().product();
        let a_inner: usize = sa[axis..].iter().product();
        let b_inner: usize = sb[axis..].iter().product();
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(va.len() + vb.len());
        for o in 0..outer {
            out.extend_from_slice(&va[o * a_inner..(o + 1) * a_inner]);
            out.extend_from_slice(&vb[o * b_inner..(o + 1) * b_inner]);
        }
        let mut shape = sa;
        shape[axis] += sb[axis];
        let tracked = self.tracked(&[a, b]);
        self.push("concat", shape, out, Op::Concat { a, b, outer, a_inner, b_inner }, tracked)
    }

    /// Column `col` of `x: m×n` as an `m×1` matrix.
    pub fn column(&mut self, x: Var, col: usize) -> Result<Var> {
        let (m, n) = self.dims2("column", x)?;
        if col >= n {
            return Err(Error::shape("column", format!("column {col} of {m}x{n}")));
        }
        let v = self.value(x);
        let out: Vec<f64> = (0..m).map(|r| v[r * n + col]).collect();
        let tracked = self.tracked(&[x]);
        self.push("column", vec![m, 1], out, Op::Column { x, col }, tracked)
    }

    /// Max-shifted softmax of a vector, or of every row of a matrix.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (m, n) = rows_cols(self.shape(x));
        if n == 0 {
            return Err(Error::InvalidArgument("softmax of an empty vector".into()));
        }
        let v = self.value(x);
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            softmax_into(&v[r * n..(r + 1) * n], &mut out[r * n..(r + 1) * n]);
        }
        let shape = self.shape(x).to_vec();
        let tracked = self.tracked(&[x]);
        self.push("softmax", shape, out, Op::Softmax(x), tracked)
    }

    /// Divides every row by its sum (no exponentiation, no sign guard).
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = rows_cols(self.shape(x));
        let v = self.value(x);
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let s: f64 = v[r * n..(r + 1) * n].iter().sum();
            for c in 0..n {
                out[r * n + c] = v[r * n + c] / s;
            }
        }
        let shape = self.shape(x).to_vec();
        let tracked = self.tracked(&[x]);
        self.push("normalize_rows", shape, out, Op::NormalizeRows(x), tracked)
    }

    /// Inverted dropout: in training, each element is zeroed with
    /// probability `rate` and survivors are scaled by `1 / (1 - rate)`.
    /// Outside training (or with `rate == 0`) this returns `x` unchanged.
    pub fn dropout(&mut self, x: Var, rate: f64, training: bool, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> =
            (0..self.value(x).len()).map(|_| if rng.uniform() < rate { 0.0 } else { keep }).collect();
        let out: Vec<f64> = self.value(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = self.shape(x).to_vec();
        let tracked = self.tracked(&[x]);
        self.push("dropout", shape, out, Op::Dropout { x, mask }, tracked)
    }

    /// Forward identity that blocks gradient flow into `x`.
    pub fn stop_gradient(&mut self, x: Var) -> Result<Var> {
        if !self.node(x).tracked {
            return Ok(x);
        }
        let shape = self.shape(x).to_vec();
        let out = self.value(x).to_vec();
        self.push("stop_gradient", shape, out, Op::StopGradient, false)
    }

    /// Mean smooth-L1 between `pred` and a constant `target` of equal length.
    pub fn smooth_l1(&mut self, pred: Var, target: &[f64], beta: f64, literal: bool) -> Result<Var> {
        let p = self.value(pred);
        if p.len() != target.len() {
            return Err(Error::shape("smooth_l1", format!("{} predictions vs {} targets", p.len(), target.len())));
        }
        if !(beta > 0.0) {
            return Err(Error::InvalidArgument(format!("smooth_l1 beta must be positive, got {beta}")));
        }
        if p.is_empty() {
            return Err(Error::InvalidArgument("smooth_l1 of empty vectors".into()));
        }
        let loss = p.iter().zip(target).map(|(yh, y)| smooth_l1_elem(y - yh, beta, literal).0).sum::<f64>()
            / p.len() as f64;
        let tracked = self.tracked(&[pred]);
        let op = Op::SmoothL1 { pred, target: target.to_vec(), beta, literal };
        self.push("smooth_l1", vec![1], vec![loss], op, tracked)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward", format!("loss must be scalar, got {:?}", self.shape(loss))));
        }
        let lens: Vec<usize> = self.nodes.iter().map(|n| n.value.len()).collect();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads, &lens);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads, lens })
    }

    fn propagate(&self, node: &Node<'p>, g: &[f64], grads: &mut [Option<Vec<f64>>], lens: &[usize]) {
        let want = |v: Var| self.nodes[v.0].tracked;
        let val = |v: Var| self.value(v);
        match &node.op {
            Op::Leaf | Op::StopGradient => {}
            Op::MatMul { a, b, trans_b } => {
                let (m, k) = rows_cols(&self.nodes[a.0].shape);
                let n = node.shape[1];
                if want(*a) {
                    let da = slot(grads, a.0, lens[a.0]);
                    // dA = dC·Bᵀ, or dC·B when C = A·Bᵀ
                    gemm(m, n, k, g, false, val(*b), !trans_b, 1.0, da);
                }
                if want(*b) {
                    let db = slot(grads, b.0, lens[b.0]);
                    if *trans_b {
                        gemm(n, m, k, g, true, val(*a), false, 1.0, db);
                    } else {
                        gemm(k, m, n, val(*a), true, g, false, 1.0, db);
                    }
                }
            }
            Op::Binary(kind, a, b) => {
                let (a, b) = (*a, *b);
                if want(a) {
                    let da = slot(grads, a.0, lens[a.0]);
                    match kind {
                        Binary::Mul => da.iter_mut().zip(g).zip(val(b)).for_each(|((d, g), y)| *d += g * y),
                        _ => da.iter_mut().zip(g).for_each(|(d, g)| *d += g),
                    }
                }
                if want(b) {
                    let db = slot(grads, b.0, lens[b.0]);
                    match kind {
                        Binary::Mul => db.iter_mut().zip(g).zip(val(a)).for_each(|((d, g), x)| *d += g * x),
                        Binary::Sub => db.iter_mut().zip(g).for_each(|(d, g)| *d -= g),
                        Binary::Add => db.iter_mut().zip(g).for_each(|(d, g)| *d += g),
                    }
                }
            }
            Op::Unary(kind, x) => {
                if !want(*x) {
                    return;
                }
                let y = &node.value;
                let dx = slot(grads, x.0, lens[x.0]);
                match kind {
                    Unary::Sigmoid => dx.iter_mut().zip(g).zip(y.iter()).for_each(|((d, g), y)| *d += g * y * (1.0 - y)),
                    Unary::Tanh => dx.iter_mut().zip(g).zip(y.iter()).for_each(|((d, g), y)| *d += g * (1.0 - y * y)),
                    Unary::Relu => dx.iter_mut().zip(g).zip(y.iter()).for_each(|((d, g), y)| {
                        if *y > 0.0 {
                            *d += g
                        }
                    }),
                    Unary::Scale(c) => dx.iter_mut().zip(g).for_each(|(d, g)| *d += g * c),
                }
            }
            Op::AddBias { x, bias } => {
                let n = node.shape[1];
                if want(*x) {
                    slot(grads, x.0, lens[x.0]).iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
                if want(*bias) {
                    let db = slot(grads, bias.0, lens[bias.0]);
                    for (i, gi) in g.iter().enumerate() {
                        db[i % n] += gi;
                    }
                }
            }
            Op::ScaleRows { x, s } => {
                let n = node.shape[1];
                if want(*x) {
                    let f = val(*s);
                    let dx = slot(grads, x.0, lens[x.0]);
                    for (i, (d, gi)) in dx.iter_mut().zip(g).enumerate() {
                        *d += gi * f[i / n];
                    }
                }
                if want(*s) {
                    let xv = val(*x);
                    let ds = slot(grads, s.0, lens[s.0]);
                    for (i, (gi, xi)) in g.iter().zip(xv).enumerate() {
                        ds[i / n] += gi * xi;
                    }
                }
            }
            Op::SumCols(x) => {
                if want(*x) {
                    let n = self.nodes[x.0].shape[1];
                    let dx = slot(grads, x.0, lens[x.0]);
                    for (i, d) in dx.iter_mut().enumerate() {
                        *d += g[i / n];
                    }
                }
            }
            Op::Sum(x) => {
                if want(*x) {
                    slot(grads, x.0, lens[x.0]).iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(x) => {
                if want(*x) {
                    let scale = g[0] / lens[x.0] as f64;
                    slot(grads, x.0, lens[x.0]).iter_mut().for_each(|d| *d += scale);
                }
            }
            Op::Concat { a, b, outer, a_inner, b_inner } => {
                let row = a_inner + b_inner;
                if want(*a) {
                    let da = slot(grads, a.0, lens[a.0]);
                    for o in 0..*outer {
                        for j in 0..*a_inner {
                            da[o * a_inner + j] += g[o * row + j];
                        }
                    }
                }
                if want(*b) {
                    let db = slot(grads, b.0, lens[b.0]);
                    for o in 0..*outer {
                        for j in 0..*b_inner {
                            db[o * b_inner + j] += g[o * row + a_inner + j];
                        }
                    }
                }
            }
            Op::Column { x, col } => {
                if want(*x) {
                    let n = self.nodes[x.0].shape[1];
                    let dx = slot(grads, x.0, lens[x.0]);
                    for (r, gi) in g.iter().enumerate() {
                        dx[r * n + col] += gi;
                    }
                }
            }
            Op::Softmax(x) | Op::NormalizeRows(x) => {
                if !want(*x) {
                    return;
                }
                let (m, n) = rows_cols(&node.shape);
                let y = &node.value;
                let is_softmax = matches!(node.op, Op::Softmax(_));
                let xv = val(*x);
                let dx = slot(grads, x.0, lens[x.0]);
                for r in 0..m {
                    let (yr, gr) = (&y[r * n..(r + 1) * n], &g[r * n..(r + 1) * n]);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    if is_softmax {
                        for c in 0..n {
                            dx[r * n + c] += yr[c] * (gr[c] - dot);
                        }
                    } else {
                        let s: f64 = xv[r * n..(r + 1) * n].iter().sum();
                        for c in 0..n {
                            dx[r * n + c] += (gr[c] - dot) / s;
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if want(*x) {
                    slot(grads, x.0, lens[x.0]).iter_mut().zip(g).zip(mask).for_each(|((d, g), m)| *d += g * m);
                }
            }
            Op::SmoothL1 { pred, target, beta, literal } => {
                if want(*pred) {
                    let p = val(*pred);
                    let scale = g[0] / p.len() as f64;
                    let dp = slot(grads, pred.0, lens[pred.0]);
                    for ((d, yh), y) in dp.iter_mut().zip(p).zip(target) {
                        // loss depends on y - ŷ
                        *d -= scale * smooth_l1_elem(y - yh, *beta, *literal).1;
                    }
                }
            }
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted softmax of `x` written into `out`.
pub fn softmax_into(x: &[f64], out: &mut [f64]) {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}
