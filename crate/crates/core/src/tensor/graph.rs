use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{SparseMatrix, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// ELU with α = 1.
    Elu,
    Sigmoid,
    Tanh,
    /// LeakyReLU with slope 0.01.
    LeakyRelu,
}

pub(crate) const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    AddConst(Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    Neg(Var),
    Spmm(Rc<SparseMatrix>, Var),
    Act(Var, Activation),
    Abs(Var),
    LogSigmoid(Var),
    Softmax(Var),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    Stack(Vec<Var>),
    Index(Var, usize),
    Broadcast(Var),
    RowDot(Var, Var),
    GatherRows(Var, Rc<[usize]>),
    ConcatRows(Vec<Var>),
    StackLast(Vec<Var>),
    SliceLast(Var, usize),
    Reshape(Var),
    NllSum(Var, Rc<[usize]>),
    SegmentSoftmax(Var, Rc<[usize]>),
    ScatterWeighted(Var, Var, Rc<[(usize, usize)]>),
    CausalAttention(Var, Var, Var, Rc<Vec<f64>>),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    tracked: bool,
}

/// Append-only computation tape.
///
/// Inputs are always recorded before the operations that consume them, so
/// the append order is a topological order and [`Graph::backward`] is a
/// single reverse sweep.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    check_finite: bool,
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Dimension(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    /// A tape that rejects every non-finite intermediate value.
    pub fn with_finite_checks() -> Self {
        Graph {
            nodes: Vec::new(),
            check_finite: true,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf; it is tracked when the tensor requires grad.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let tracked = t.requires_grad();
        self.nodes.push(Node {
            op: Op::Leaf,
            value: t,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a non-differentiable leaf.
    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.set_requires_grad(false);
        self.leaf(t)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn item(&self, v: Var) -> Result<f64> {
        self.value(v).item()
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    /// Clears every accumulated leaf gradient.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    fn push(&mut self, op: Op, value: Tensor, inputs: &[Var]) -> Result<Var> {
        if self.check_finite && !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "operation #{} produced a non-finite value",
                self.nodes.len()
            )));
        }
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        self.nodes.push(Node { op, value, tracked });
        Ok(Var(self.nodes.len() - 1))
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    // ---- forward operations ------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", &sa, &sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.data(a), self.data(b), m, k, n);
        let t = Tensor::new(vec![m, n], out)?;
        self.push(Op::MatMul(a, b), t, &[a, b])
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(op, sa, sb));
        }
        Ok(sa.to_vec())
    }

    fn zip_with(&mut self, op: Op, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let shape = self.same_shape("elementwise", a, b)?;
        let out = self.data(a).iter().zip(self.data(b)).map(|(x, y)| f(*x, *y)).collect();
        self.push(op, Tensor::new(shape, out)?, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(Op::Sub(a, b), a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    /// Adds a vector along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x).to_vec(), self.shape(b).to_vec());
        let width = sb.iter().product::<usize>();
        if sb.len() != 1 || sx.last() != Some(&width) {
            return Err(shape_err("add_bias", &sx, &sb));
        }
        let bias = self.data(b);
        let out = self
            .data(x)
            .chunks(width.max(1))
            .flat_map(|row| row.iter().zip(bias).map(|(v, c)| v + c))
            .collect();
        self.push(Op::AddBias(x, b), Tensor::new(sx, out)?, &[x, b])
    }

    fn map(&mut self, op: Op, x: Var, f: impl Fn(f64) -> f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let out = self.data(x).iter().map(|v| f(*v)).collect();
        self.push(op, Tensor::new(shape, out)?, &[x])
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Result<Var> {
        self.map(Op::AddConst(x), x, |v| v + c)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.map(Op::Scale(x, c), x, |v| v * c)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.map(Op::Neg(x), x, |v| -v)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.map(Op::Abs(x), x, f64::abs)
    }

    /// `log σ(x)`, evaluated without overflow for large `|x|`.
    pub fn log_sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map(Op::LogSigmoid(x), x, log_sigmoid)
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        self.map(Op::Act(x, kind), x, |v| activate(kind, v))
    }

    pub fn elu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Elu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Tanh)
    }

    /// Multiplies every entry of `x` by the scalar `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.item(s)?;
        let shape = self.shape(x).to_vec();
        let out = self.data(x).iter().map(|v| v * sv).collect();
        self.push(Op::ScaleBy(x, s), Tensor::new(shape, out)?, &[x, s])
    }

    /// Sparse-dense product `adj · x` with a constant adjacency.
    pub fn spmm(&mut self, adj: &Rc<SparseMatrix>, x: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 2 || sx[0] != adj.cols() {
            return Err(shape_err("spmm", &[adj.rows(), adj.cols()], &sx));
        }
        let out = adj.mul_dense(self.data(x), sx[1]);
        let t = Tensor::new(vec![adj.rows(), sx[1]], out)?;
        self.push(Op::Spmm(Rc::clone(adj), x), t, &[x])
    }

    /// Numerically stable softmax of a non-empty vector.
    pub fn softmax(&mut self, v: Var) -> Result<Var> {
        let s = self.shape(v).to_vec();
        if s.len() != 1 || s[0] == 0 {
            return Err(Error::Dimension(format!("softmax needs a non-empty vector, got {s:?}")));
        }
        let out = softmax_raw(self.data(v));
        self.push(Op::Softmax(v), Tensor::new(s, out)?, &[v])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.data(x).iter().sum();
        self.push(Op::Sum(x), Tensor::scalar(s), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        if n == 0 {
            return Err(Error::Dimension("mean of an empty tensor".into()));
        }
        let s = self.data(x).iter().sum::<f64>() / n as f64;
        self.push(Op::Mean(x), Tensor::scalar(s), &[x])
    }

    /// Column means of a matrix: `[n, d] -> [d]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || s[0] == 0 {
            return Err(Error::Dimension(format!("mean_rows needs a non-empty matrix, got {s:?}")));
        }
        let (n, d) = (s[0], s[1]);
        let mut out = vec![0.0; d];
        for row in self.data(x).chunks(d.max(1)) {
            out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= n as f64);
        self.push(Op::MeanRows(x), Tensor::vector(out), &[x])
    }

    /// Stacks scalars into a vector.
    pub fn stack(&mut self, xs: &[Var]) -> Result<Var> {
        let mut out = Vec::with_capacity(xs.len());
        for &x in xs {
            out.push(self.item(x)?);
        }
        self.push(Op::Stack(xs.to_vec()), Tensor::vector(out), xs)
    }

    /// Flat element `i` of `x` as a scalar.
    pub fn index(&mut self, x: Var, i: usize) -> Result<Var> {
        let n = self.value(x).numel();
        if i >= n {
            return Err(Error::Index(format!("index {i} into tensor of {n} elements")));
        }
        let v = self.data(x)[i];
        self.push(Op::Index(x, i), Tensor::scalar(v), &[x])
    }

    /// Repeats a scalar over `shape`.
    pub fn broadcast(&mut self, s: Var, shape: &[usize]) -> Result<Var> {
        let v = self.item(s)?;
        let n = shape.iter().product();
        self.push(Op::Broadcast(s), Tensor::new(shape.to_vec(), vec![v; n])?, &[s])
    }

    /// Row-wise dot products of two equal-shape matrices: `[m, n] -> [m]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = self.same_shape("row_dot", a, b)?;
        if s.len() != 2 {
            return Err(shape_err("row_dot", &s, &s));
        }
        let d = s[1];
        let out = self
            .data(a)
            .chunks(d.max(1))
            .zip(self.data(b).chunks(d.max(1)))
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum())
            .take(s[0])
            .collect();
        self.push(Op::RowDot(a, b), Tensor::vector(out), &[a, b])
    }

    /// Selects rows (or entries of a vector) by index, repeats allowed.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.is_empty() || s.len() > 2 {
            return Err(Error::Dimension(format!("gather_rows on shape {s:?}")));
        }
        let width = if s.len() == 2 { s[1] } else { 1 };
        let src = self.data(x);
        let mut out = Vec::with_capacity(idx.len() * width);
        for &i in idx {
            if i >= s[0] {
                return Err(Error::Index(format!("row {i} of tensor with {} rows", s[0])));
            }
            out.extend_from_slice(&src[i * width..(i + 1) * width]);
        }
        let shape = if s.len() == 2 { vec![idx.len(), width] } else { vec![idx.len()] };
        self.push(Op::GatherRows(x, idx.into()), Tensor::new(shape, out)?, &[x])
    }

    /// Vertical concatenation of matrices with equal column counts.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::Dimension("concat_rows of nothing".into()))?;
        let cols = self.value(*first).cols();
        let mut rows = 0;
        let mut out = Vec::new();
        for &x in xs {
            let s = self.shape(x);
            if s.len() != 2 || s[1] != cols {
                return Err(shape_err("concat_rows", self.shape(*first), s));
            }
            rows += s[0];
            out.extend_from_slice(self.data(x));
        }
        self.push(Op::ConcatRows(xs.to_vec()), Tensor::new(vec![rows, cols], out)?, xs)
    }

    /// Stacks equal-shape matrices along a new trailing axis: `T × [n, d] -> [n, d, T]`.
    pub fn stack_last(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::Dimension("stack_last of nothing".into()))?;
        let s0 = self.shape(*first).to_vec();
        if s0.len() != 2 {
            return Err(Error::Dimension(format!("stack_last needs matrices, got {s0:?}")));
        }
        let t = xs.len();
        let p = s0[0] * s0[1];
        let mut out = vec![0.0; p * t];
        for (k, &x) in xs.iter().enumerate() {
            if self.shape(x) != s0.as_slice() {
                return Err(shape_err("stack_last", &s0, self.shape(x)));
            }
            for (i, v) in self.data(x).iter().enumerate() {
                out[i * t + k] = *v;
            }
        }
        self.push(
            Op::StackLast(xs.to_vec()),
            Tensor::new(vec![s0[0], s0[1], t], out)?,
            xs,
        )
    }

    /// Slice `k` of the trailing axis of a 3-D tensor.
    pub fn slice_last(&mut self, z: Var, k: usize) -> Result<Var> {
        let s = self.shape(z).to_vec();
        if s.len() != 3 || k >= s[2] {
            return Err(Error::Dimension(format!("slice_last({k}) on shape {s:?}")));
        }
        let t = s[2];
        let out = self.data(z).chunks(t).map(|c| c[k]).collect();
        self.push(Op::SliceLast(z, k), Tensor::new(vec![s[0], s[1]], out)?, &[z])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(x).numel() {
            return Err(shape_err("reshape", self.shape(x), shape));
        }
        let data = self.data(x).to_vec();
        self.push(Op::Reshape(x), Tensor::new(shape.to_vec(), data)?, &[x])
    }

    /// Summed negative log-likelihood of `labels` under row-wise softmax of `logits`.
    pub fn nll_sum(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::Dimension(format!(
                "nll_sum: logits {s:?} vs {} labels",
                labels.len()
            )));
        }
        let c = s[1];
        let mut total = 0.0;
        for (row, &y) in self.data(logits).chunks(c.max(1)).zip(labels) {
            if y >= c {
                return Err(Error::Index(format!("label {y} with {c} classes")));
            }
            total += log_sum_exp(row) - row[y];
        }
        self.push(Op::NllSum(logits, labels.into()), Tensor::scalar(total), &[logits])
    }

    /// Softmax over groups of entries sharing a segment id.
    pub fn segment_softmax(&mut self, scores: Var, segments: &[usize]) -> Result<Var> {
        let s = self.shape(scores).to_vec();
        if s.len() != 1 || s[0] != segments.len() {
            return Err(Error::Dimension(format!(
                "segment_softmax: scores {s:?} vs {} segment ids",
                segments.len()
            )));
        }
        let out = segment_softmax_raw(self.data(scores), segments);
        self.push(
            Op::SegmentSoftmax(scores, segments.into()),
            Tensor::vector(out),
            &[scores],
        )
    }

    /// `out[dst] += w[e] · x[src]` over edges `e = (dst, src)`.
    pub fn scatter_weighted(
        &mut self,
        weights: Var,
        x: Var,
        edges: &[(usize, usize)],
        n_dst: usize,
    ) -> Result<Var> {
        let (sw, sx) = (self.shape(weights).to_vec(), self.shape(x).to_vec());
        if sw.len() != 1 || sw[0] != edges.len() || sx.len() != 2 {
            return Err(shape_err("scatter_weighted", &sw, &sx));
        }
        let d = sx[1];
        let mut out = vec![0.0; n_dst * d];
        let (w, xv) = (self.data(weights), self.data(x));
        for (e, &(dst, src)) in edges.iter().enumerate() {
            if dst >= n_dst || src >= sx[0] {
                return Err(Error::Index(format!("edge ({dst}, {src}) out of range")));
            }
            let row = &xv[src * d..(src + 1) * d];
            out[dst * d..(dst + 1) * d]
                .iter_mut()
                .zip(row)
                .for_each(|(o, v)| *o += w[e] * v);
        }
        let t = Tensor::new(vec![n_dst, d], out)?;
        self.push(Op::ScatterWeighted(weights, x, edges.into()), t, &[weights, x])
    }

    /// Batched causal scaled dot-product attention.
    ///
    /// `q, k: [b, t, dk]`, `v: [b, t, dv]`; position `i` attends to `j ≤ i`
    /// with scores `q_i · k_j / √dk`.
    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var> {
        let (sq, sk, sv) = (
            self.shape(q).to_vec(),
            self.shape(k).to_vec(),
            self.shape(v).to_vec(),
        );
        if sq.len() != 3 || sq != sk || sv.len() != 3 || sv[..2] != sq[..2] {
            return Err(shape_err("causal_attention", &sq, &sv));
        }
        let (b, t, dk, dv) = (sq[0], sq[1], sq[2], sv[2]);
        let scale = 1.0 / (dk.max(1) as f64).sqrt();
        let (qd, kd, vd) = (self.data(q), self.data(k), self.data(v));
        let mut probs = vec![0.0; b * t * t];
        let mut out = vec![0.0; b * t * dv];
        for n in 0..b {
            for i in 0..t {
                let qi = &qd[(n * t + i) * dk..(n * t + i + 1) * dk];
                let p = &mut probs[(n * t + i) * t..(n * t + i) * t + i + 1];
                for (j, pj) in p.iter_mut().enumerate() {
                    let kj = &kd[(n * t + j) * dk..(n * t + j + 1) * dk];
                    *pj = qi.iter().zip(kj).map(|(a, c)| a * c).sum::<f64>() * scale;
                }
                let sm = softmax_raw(p);
                p.copy_from_slice(&sm);
                let o = &mut out[(n * t + i) * dv..(n * t + i + 1) * dv];
                for (j, pj) in p.iter().enumerate() {
                    let vj = &vd[(n * t + j) * dv..(n * t + j + 1) * dv];
                    o.iter_mut().zip(vj).for_each(|(a, c)| *a += pj * c);
                }
            }
        }
        let tensor = Tensor::new(vec![b, t, dv], out)?;
        self.push(Op::CausalAttention(q, k, v, Rc::new(probs)), tensor, &[q, k, v])
    }

    // ---- reverse pass ------------------------------------------------------

    /// Back-propagates from a scalar `loss`, accumulating into leaf gradients.
    ///
    /// Repeated calls add to the existing gradients; call
    /// [`Graph::zero_grad`] to reset them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Autodiff(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.nodes[loss.0].tracked {
            return Err(Error::Autodiff(
                "backward on a value that does not depend on any tracked tensor".into(),
            ));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].tracked {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                self.nodes[i].value.accumulate_grad(&g);
                continue;
            }
            self.propagate(i, &g, &mut adj);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let mut send = |v: Var, contrib: Vec<f64>| {
            if !self.nodes[v.0].tracked {
                return;
            }
            match &mut adj[v.0] {
                Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                slot @ None => *slot = Some(contrib),
            }
        };
        let tracked = |v: Var| self.nodes[v.0].tracked;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if tracked(*a) {
                    // ga = g · bᵀ
                    let bd = self.data(*b);
                    let mut ga = vec![0.0; m * k];
                    for r in 0..m {
                        let gr = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let br = &bd[p * n..(p + 1) * n];
                            ga[r * k + p] = gr.iter().zip(br).map(|(x, y)| x * y).sum();
                        }
                    }
                    send(*a, ga);
                }
                if tracked(*b) {
                    // gb = aᵀ · g
                    let ad = self.data(*a);
                    let mut gb = vec![0.0; k * n];
                    for r in 0..m {
                        let gr = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let coef = ad[r * k + p];
                            if coef != 0.0 {
                                gb[p * n..(p + 1) * n]
                                    .iter_mut()
                                    .zip(gr)
                                    .for_each(|(o, x)| *o += coef * x);
                            }
                        }
                    }
                    send(*b, gb);
                }
            }
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                send(*a, g.iter().zip(bd).map(|(x, y)| x * y).collect());
                send(*b, g.iter().zip(ad).map(|(x, y)| x * y).collect());
            }
            Op::AddBias(x, b) => {
                send(*x, g.to_vec());
                if tracked(*b) {
                    let w = self.value(*b).numel();
                    let mut gb = vec![0.0; w];
                    for row in g.chunks(w.max(1)) {
                        gb.iter_mut().zip(row).for_each(|(o, v)| *o += v);
                    }
                    send(*b, gb);
                }
            }
            Op::AddConst(x) | Op::Reshape(x) => send(*x, g.to_vec()),
            Op::Scale(x, c) => send(*x, g.iter().map(|v| v * c).collect()),
            Op::Neg(x) => send(*x, g.iter().map(|v| -v).collect()),
            Op::ScaleBy(x, s) => {
                let sv = self.data(*s)[0];
                let xd = self.data(*x);
                send(*x, g.iter().map(|v| v * sv).collect());
                send(*s, vec![g.iter().zip(xd).map(|(a, b)| a * b).sum()]);
            }
            Op::Spmm(adj_m, x) => {
                let width = self.value(*x).cols();
                let mut gx = vec![0.0; self.value(*x).numel()];
                adj_m.mul_transpose_acc(g, width, &mut gx);
                send(*x, gx);
            }
            Op::Act(x, kind) => {
                let xd = self.data(*x);
                let gx = g
                    .iter()
                    .zip(xd)
                    .zip(out)
                    .map(|((gv, xv), yv)| gv * activation_grad(*kind, *xv, *yv))
                    .collect();
                send(*x, gx);
            }
            Op::Abs(x) => {
                let xd = self.data(*x);
                send(*x, g.iter().zip(xd).map(|(gv, xv)| gv * sign(*xv)).collect());
            }
            Op::LogSigmoid(x) => {
                let xd = self.data(*x);
                send(*x, g.iter().zip(xd).map(|(gv, xv)| gv * sigmoid(-xv)).collect());
            }
            Op::Softmax(v) => {
                let dot: f64 = g.iter().zip(out).map(|(a, b)| a * b).sum();
                send(*v, out.iter().zip(g).map(|(y, gv)| y * (gv - dot)).collect());
            }
            Op::Sum(x) => send(*x, vec![g[0]; self.value(*x).numel()]),
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                send(*x, vec![g[0] / n as f64; n]);
            }
            Op::MeanRows(x) => {
                let n = self.value(*x).rows();
                let scaled: Vec<f64> = g.iter().map(|v| v / n as f64).collect();
                send(*x, scaled.repeat(n));
            }
            Op::Stack(xs) => {
                for (x, gv) in xs.iter().zip(g) {
                    send(*x, vec![*gv]);
                }
            }
            Op::Index(x, k) => {
                let mut gx = vec![0.0; self.value(*x).numel()];
                gx[*k] = g[0];
                send(*x, gx);
            }
            Op::Broadcast(s) => send(*s, vec![g.iter().sum()]),
            Op::RowDot(a, b) => {
                let d = self.value(*a).cols();
                let (ad, bd) = (self.data(*a), self.data(*b));
                let spread = |other: &[f64]| -> Vec<f64> {
                    other
                        .chunks(d.max(1))
                        .zip(g)
                        .flat_map(|(row, gv)| row.iter().map(move |v| v * gv))
                        .collect()
                };
                if tracked(*a) {
                    send(*a, spread(bd));
                }
                if tracked(*b) {
                    send(*b, spread(ad));
                }
            }
            Op::GatherRows(x, idx) => {
                let width = if self.value(*x).ndim() == 2 { self.value(*x).cols() } else { 1 };
                let mut gx = vec![0.0; self.value(*x).numel()];
                for (r, &src) in idx.iter().enumerate() {
                    gx[src * width..(src + 1) * width]
                        .iter_mut()
                        .zip(&g[r * width..(r + 1) * width])
                        .for_each(|(o, v)| *o += v);
                }
                send(*x, gx);
            }
            Op::ConcatRows(xs) => {
                let mut offset = 0;
                for x in xs {
                    let n = self.value(*x).numel();
                    send(*x, g[offset..offset + n].to_vec());
                    offset += n;
                }
            }
            Op::StackLast(xs) => {
                let t = xs.len();
                for (k, x) in xs.iter().enumerate() {
                    send(*x, g.iter().skip(k).step_by(t).copied().collect());
                }
            }
            Op::SliceLast(z, k) => {
                let t = self.shape(*z)[2];
                let mut gz = vec![0.0; self.value(*z).numel()];
                for (p, gv) in g.iter().enumerate() {
                    gz[p * t + k] = *gv;
                }
                send(*z, gz);
            }
            Op::NllSum(logits, labels) => {
                let c = self.value(*logits).cols();
                let mut gl = Vec::with_capacity(self.value(*logits).numel());
                for (row, &y) in self.data(*logits).chunks(c.max(1)).zip(labels.iter()) {
                    let p = softmax_raw(row);
                    gl.extend(p.iter().enumerate().map(|(j, pj)| {
                        g[0] * (pj - if j == y { 1.0 } else { 0.0 })
                    }));
                }
                send(*logits, gl);
            }
            Op::SegmentSoftmax(scores, segs) => {
                let n_seg = segs.iter().max().map_or(0, |m| m + 1);
                let mut dots = vec![0.0; n_seg];
                for ((s, y), gv) in segs.iter().zip(out).zip(g) {
                    dots[*s] += y * gv;
                }
                let gs = segs
                    .iter()
                    .zip(out)
                    .zip(g)
                    .map(|((s, y), gv)| y * (gv - dots[*s]))
                    .collect();
                send(*scores, gs);
            }
            Op::ScatterWeighted(w, x, edges) => {
                let d = self.value(*x).cols();
                let (wd, xd) = (self.data(*w), self.data(*x));
                if tracked(*w) {
                    let gw = edges
                        .iter()
                        .map(|&(dst, src)| {
                            g[dst * d..(dst + 1) * d]
                                .iter()
                                .zip(&xd[src * d..(src + 1) * d])
                                .map(|(a, b)| a * b)
                                .sum()
                        })
                        .collect();
                    send(*w, gw);
                }
                if tracked(*x) {
                    let mut gx = vec![0.0; xd.len()];
                    for (e, &(dst, src)) in edges.iter().enumerate() {
                        gx[src * d..(src + 1) * d]
                            .iter_mut()
                            .zip(&g[dst * d..(dst + 1) * d])
                            .for_each(|(o, v)| *o += wd[e] * v);
                    }
                    send(*x, gx);
                }
            }
            Op::CausalAttention(q, k, v, probs) => {
                let s = self.shape(*q);
                let (b, t, dk) = (s[0], s[1], s[2]);
                let dv = self.shape(*v)[2];
                let scale = 1.0 / (dk.max(1) as f64).sqrt();
                let (qd, kd, vd) = (self.data(*q), self.data(*k), self.data(*v));
                let mut gq = vec![0.0; qd.len()];
                let mut gk = vec![0.0; kd.len()];
                let mut gv = vec![0.0; vd.len()];
                let mut gp = vec![0.0; t];
                for n in 0..b {
                    for i in 0..t {
                        let p = &probs[(n * t + i) * t..(n * t + i) * t + i + 1];
                        let go = &g[(n * t + i) * dv..(n * t + i + 1) * dv];
                        for (j, pj) in p.iter().enumerate() {
                            let vj = &vd[(n * t + j) * dv..(n * t + j + 1) * dv];
                            gp[j] = go.iter().zip(vj).map(|(a, c)| a * c).sum();
                            gv[(n * t + j) * dv..(n * t + j + 1) * dv]
                                .iter_mut()
                                .zip(go)
                                .for_each(|(o, a)| *o += pj * a);
                        }
                        let dot: f64 = p.iter().zip(&gp).map(|(a, c)| a * c).sum();
                        let qi = &qd[(n * t + i) * dk..(n * t + i + 1) * dk];
                        for (j, pj) in p.iter().enumerate() {
                            let gs = pj * (gp[j] - dot) * scale;
                            let kj = &kd[(n * t + j) * dk..(n * t + j + 1) * dk];
                            gq[(n * t + i) * dk..(n * t + i + 1) * dk]
                                .iter_mut()
                                .zip(kj)
                                .for_each(|(o, c)| *o += gs * c);
                            gk[(n * t + j) * dk..(n * t + j + 1) * dk]
                                .iter_mut()
                                .zip(qi)
                                .for_each(|(o, c)| *o += gs * c);
                        }
                    }
                }
                send(*q, gq);
                send(*k, gk);
                send(*v, gv);
            }
        }
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let coef = a[i * k + p];
            if coef == 0.0 {
                continue;
            }
            row.iter_mut()
                .zip(&b[p * n..(p + 1) * n])
                .for_each(|(o, x)| *o += coef * x);
        }
    }
    out
}

pub(crate) fn softmax_raw(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn segment_softmax_raw(scores: &[f64], segs: &[usize]) -> Vec<f64> {
    let n_seg = segs.iter().max().map_or(0, |m| m + 1);
    let mut max = vec![f64::NEG_INFINITY; n_seg];
    for (s, x) in segs.iter().zip(scores) {
        max[*s] = max[*s].max(*x);
    }
    let exps: Vec<f64> = segs.iter().zip(scores).map(|(s, x)| (x - max[*s]).exp()).collect();
    let mut totals = vec![0.0; n_seg];
    for (s, e) in segs.iter().zip(&exps) {
        totals[*s] += e;
    }
    segs.iter().zip(exps).map(|(s, e)| e / totals[*s]).collect()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn activate(kind: Activation, x: f64) -> f64 {
    match kind {
        Activation::Elu => {
            if x >= 0.0 {
                x
            } else {
                x.exp_m1()
            }
        }
        Activation::Sigmoid => sigmoid(x),
        Activation::Tanh => x.tanh(),
        Activation::LeakyRelu => {
            if x >= 0.0 {
                x
            } else {
                LEAKY_SLOPE * x
            }
        }
    }
}

fn activation_grad(kind: Activation, x: f64, y: f64) -> f64 {
    match kind {
        Activation::Elu => {
            if x >= 0.0 {
                1.0
            } else {
                y + 1.0
            }
        }
        Activation::Sigmoid => y * (1.0 - y),
        Activation::Tanh => 1.0 - y * y,
        Activation::LeakyRelu => {
            if x >= 0.0 {
                1.0
            } else {
                LEAKY_SLOPE
            }
        }
    }
}
