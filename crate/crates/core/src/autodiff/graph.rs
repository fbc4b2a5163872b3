//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation as a node in creation order, which is
//! also a topological order; [`Graph::backward`] walks the tape in reverse.
//! Most operations treat their operands as matrices whose trailing axis holds
//! channels and whose leading axes are flattened into rows.

use rand::Rng;
use rayon::prelude::*;

use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-channel batch statistics from a training-mode batch norm; `var` is the
/// unbiased estimate used for running averages.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

enum Op<T> {
    Leaf,
    Reshape { x: Var },
    Dense { x: Var, w: Var, b: Option<Var> },
    MatMulNt { a: Var, b: Var },
    Transpose { x: Var },
    Relu { x: Var },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, train: bool },
    GatherRows { x: Var, idx: Vec<usize> },
    Concat { parts: Vec<Var> },
    MaxReduce { x: Var, argmax: Vec<usize> },
    WeightedGather { x: Var, idx: Vec<usize>, w: Vec<T>, k: usize },
    LinComb { a: Var, b: Var, alpha: T, beta: T },
    Scale { x: Var, c: T },
    ScaleBy { x: Var, s: Var },
    Mul { a: Var, b: Var },
    Exp { x: Var },
    Sum { x: Var },
    SoftmaxCe { logits: Var, targets: Vec<usize>, item_w: Vec<T>, probs: Vec<T>, norm: T },
    L2Normalize { x: Var, norms: Vec<T> },
    Dropout { x: Var, mask: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients produced by one backward pass.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, zeros when it received none.
    pub fn get_or_zeros(&self, v: Var, numel: usize) -> Vec<T> {
        self.get(v).map(<[T]>::to_vec).unwrap_or_else(|| vec![T::zero(); numel])
    }
}

/// Rows per work unit for parallel kernels; fixed so that reductions are
/// summed in the same order whatever the thread count.
const ROW_BLOCK: usize = 128;
const PAR_THRESHOLD: usize = 1 << 16;

#[derive(Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

fn shape_err(msg: String) -> Error {
    Error::Shape(msg)
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient flows into it.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(t, Op::Reshape { x }, &[x]))
    }

    /// `x W + b` along the trailing axis.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xt, wt) = (self.value(x), self.value(w));
        if wt.shape().len() != 2 || wt.shape()[0] != xt.cols() {
            return Err(shape_err(format!("dense: input {:?} vs weight {:?}", xt.shape(), wt.shape())));
        }
        let (cin, cout) = (wt.shape()[0], wt.shape()[1]);
        let bias = match b {
            Some(b) => {
                let bt = self.value(b);
                if bt.numel() != cout {
                    return Err(shape_err(format!("dense: bias {:?} vs {cout} outputs", bt.shape())));
                }
                Some(bt.data())
            }
            None => None,
        };
        let rows = xt.rows();
        let mut out = vec![T::zero(); rows * cout];
        let xd = xt.data();
        let wd = wt.data();
        let kernel = |(orow, xrow): (&mut [T], &[T])| {
            if let Some(bd) = bias {
                orow.copy_from_slice(bd);
            }
            for (i, &xi) in xrow.iter().enumerate() {
                if xi == T::zero() {
                    continue;
                }
                for (o, &wv) in orow.iter_mut().zip(&wd[i * cout..(i + 1) * cout]) {
                    *o += xi * wv;
                }
            }
        };
        if rows * cin * cout >= PAR_THRESHOLD {
            out.par_chunks_mut(cout).zip(xd.par_chunks(cin)).for_each(kernel);
        } else {
            out.chunks_mut(cout).zip(xd.chunks(cin)).for_each(kernel);
        }
        let mut shape = xt.shape().to_vec();
        *shape.last_mut().unwrap() = cout;
        let parents: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(Tensor::new(shape, out)?, Op::Dense { x, w, b }, &parents))
    }

    /// `a b^T` for matrices `a: [m, k]`, `b: [n, k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.cols() != bt.cols() {
            return Err(shape_err(format!("matmul_nt: {:?} vs {:?}", at.shape(), bt.shape())));
        }
        let (m, n, k) = (at.rows(), bt.rows(), at.cols());
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let ar = &at.data()[i * k..(i + 1) * k];
            for j in 0..n {
                let br = &bt.data()[j * k..(j + 1) * k];
                out[i * n + j] = ar.iter().zip(br).map(|(&x, &y)| x * y).sum();
            }
        }
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulNt { a, b }, &[a, b]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = (t.rows(), t.cols());
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = t.data()[i * c + j];
            }
        }
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose { x }, &[x]))
    }

    /// `max(x, 0)`; NaN passes through.
    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out: Vec<T> = t.data().iter().map(|&v| if v <= T::zero() { T::zero() } else { v }).collect();
        let t = Tensor::new(t.shape().to_vec(), out).unwrap();
        self.push(t, Op::Relu { x }, &[x])
    }

    /// Training-mode batch normalization over all rows, per channel.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<(Var, BatchStats<T>)> {
        let xt = self.value(x);
        let (rows, c) = (xt.rows(), xt.cols());
        if rows < 2 {
            return Err(Error::invalid(format!("batch norm in training mode needs at least 2 rows, got {rows}")));
        }
        self.check_channels("batch_norm gamma", gamma, c)?;
        self.check_channels("batch_norm beta", beta, c)?;
        let xd = xt.data();
        let rn = T::from_usize(rows).unwrap();
        let mut mean = vec![T::zero(); c];
        for row in xd.chunks(c) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rn);
        let mut var = vec![T::zero(); c];
        for row in xd.chunks(c) {
            for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
        let inv_std: Vec<T> = var.iter().map(|&s| T::one() / (s / rn + eps).sqrt()).collect();
        let unbiased: Vec<T> = var.iter().map(|&s| s / (rn - T::one())).collect();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for ((orow, hrow), xrow) in out.chunks_mut(c).zip(xhat.chunks_mut(c)).zip(xd.chunks(c)) {
            for j in 0..c {
                let h = (xrow[j] - mean[j]) * inv_std[j];
                hrow[j] = h;
                orow[j] = gd[j] * h + bd[j];
            }
        }
        let t = Tensor::new(xt.shape().to_vec(), out)?;
        let stats = BatchStats { mean, var: unbiased };
        Ok((self.push(t, Op::BatchNorm { x, gamma, beta, xhat, inv_std, train: true }, &[x, gamma, beta]), stats))
    }

    /// Evaluation-mode batch normalization with fixed statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[T], var: &[T], eps: T) -> Result<Var> {
        let xt = self.value(x);
        let c = xt.cols();
        self.check_channels("batch_norm gamma", gamma, c)?;
        self.check_channels("batch_norm beta", beta, c)?;
        if mean.len() != c || var.len() != c {
            return Err(shape_err(format!("batch_norm running stats have {} channels, input {c}", mean.len())));
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); xt.numel()];
        let mut out = vec![T::zero(); xt.numel()];
        for ((orow, hrow), xrow) in out.chunks_mut(c).zip(xhat.chunks_mut(c)).zip(xt.data().chunks(c)) {
            for j in 0..c {
                let h = (xrow[j] - mean[j]) * inv_std[j];
                hrow[j] = h;
                orow[j] = gd[j] * h + bd[j];
            }
        }
        let t = Tensor::new(xt.shape().to_vec(), out)?;
        Ok(self.push(t, Op::BatchNorm { x, gamma, beta, xhat, inv_std, train: false }, &[x, gamma, beta]))
    }

    fn check_channels(&self, what: &str, v: Var, c: usize) -> Result<()> {
        let n = self.value(v).numel();
        if n != c {
            return Err(shape_err(format!("{what} has {n} channels, input has {c}")));
        }
        Ok(())
    }

    /// Selects rows of `x` (as a matrix) by index; repeats allowed.
    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        let t = self.value(x);
        let (rows, c) = (t.rows(), t.cols());
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(shape_err(format!("gather_rows: index {bad} out of {rows} rows")));
        }
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in &idx {
            out.extend_from_slice(&t.data()[i * c..(i + 1) * c]);
        }
        let t = Tensor::new(vec![idx.len(), c], out)?;
        Ok(self.push(t, Op::GatherRows { x, idx }, &[x]))
    }

    /// Concatenation along the channel axis of equally many rows.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        if let Some(&p) = parts.iter().find(|&&p| self.value(p).rows() != rows) {
            return Err(shape_err(format!("concat: {:?} vs {rows} rows", self.shape(p))));
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![T::zero(); rows * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..rows {
                out[r * total + off..r * total + off + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let t = Tensor::new(vec![rows, total], out)?;
        Ok(self.push(t, Op::Concat { parts: parts.to_vec() }, parts))
    }

    /// Max over groups of `k` consecutive rows: `[m*k, c] -> [m, c]`. Ties
    /// resolve to the lowest row.
    pub fn max_reduce(&mut self, x: Var, k: usize) -> Result<Var> {
        let t = self.value(x);
        let (rows, c) = (t.rows(), t.cols());
        if k == 0 || rows % k != 0 {
            return Err(shape_err(format!("max_reduce: {rows} rows not divisible into groups of {k}")));
        }
        let m = rows / k;
        let d = t.data();
        let mut out = vec![T::zero(); m * c];
        let mut argmax = vec![0usize; m * c];
        for g in 0..m {
            let base = g * k;
            out[g * c..(g + 1) * c].copy_from_slice(&d[base * c..(base + 1) * c]);
            argmax[g * c..(g + 1) * c].iter_mut().for_each(|a| *a = base);
            for r in base + 1..base + k {
                let row = &d[r * c..(r + 1) * c];
                for j in 0..c {
                    // a NaN anywhere in the group wins, so it is never hidden
                    if row[j] > out[g * c + j] || (row[j].is_nan() && !out[g * c + j].is_nan()) {
                        out[g * c + j] = row[j];
                        argmax[g * c + j] = r;
                    }
                }
            }
        }
        let t = Tensor::new(vec![m, c], out)?;
        Ok(self.push(t, Op::MaxReduce { x, argmax }, &[x]))
    }

    /// `out[t] = sum_s w[t*k+s] * x[idx[t*k+s]]` over rows of `x`.
    pub fn weighted_gather(&mut self, x: Var, idx: Vec<usize>, w: Vec<T>, k: usize) -> Result<Var> {
        let t = self.value(x);
        let (rows, c) = (t.rows(), t.cols());
        if k == 0 || idx.len() != w.len() || idx.len() % k != 0 {
            return Err(shape_err("weighted_gather: index/weight layout mismatch".into()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(shape_err(format!("weighted_gather: index {bad} out of {rows} rows")));
        }
        let n = idx.len() / k;
        let mut out = vec![T::zero(); n * c];
        for (ti, orow) in out.chunks_mut(c).enumerate() {
            for s in ti * k..(ti + 1) * k {
                let (j, wv) = (idx[s], w[s]);
                for (o, &v) in orow.iter_mut().zip(&t.data()[j * c..(j + 1) * c]) {
                    *o += wv * v;
                }
            }
        }
        let t = Tensor::new(vec![n, c], out)?;
        Ok(self.push(t, Op::WeightedGather { x, idx, w, k }, &[x]))
    }

    /// `alpha a + beta b` for equally shaped operands.
    pub fn lincomb(&mut self, a: Var, alpha: T, b: Var, beta: T) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape() != bt.shape() {
            return Err(shape_err(format!("lincomb: {:?} vs {:?}", at.shape(), bt.shape())));
        }
        let out = at.data().iter().zip(bt.data()).map(|(&x, &y)| alpha * x + beta * y).collect();
        let t = Tensor::new(at.shape().to_vec(), out)?;
        Ok(self.push(t, Op::LinComb { a, b, alpha, beta }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.lincomb(a, T::one(), b, T::one())
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let t = self.value(x);
        let out = t.data().iter().map(|&v| v * c).collect();
        let t = Tensor::new(t.shape().to_vec(), out).unwrap();
        self.push(t, Op::Scale { x, c }, &[x])
    }

    /// Multiplies every element of `x` by the single element of `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(shape_err(format!("scale_by expects a scalar, got {:?}", self.shape(s))));
        }
        let sv = self.value(s).item();
        let t = self.value(x);
        let out = t.data().iter().map(|&v| v * sv).collect();
        let t = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(t, Op::ScaleBy { x, s }, &[x, s]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.numel() != bt.numel() {
            return Err(shape_err(format!("mul: {:?} vs {:?}", at.shape(), bt.shape())));
        }
        let out = at.data().iter().zip(bt.data()).map(|(&x, &y)| x * y).collect();
        let t = Tensor::new(at.shape().to_vec(), out)?;
        Ok(self.push(t, Op::Mul { a, b }, &[a, b]))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = t.data().iter().map(|&v| v.exp()).collect();
        let t = Tensor::new(t.shape().to_vec(), out).unwrap();
        self.push(t, Op::Exp { x }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum { x }, &[x])
    }

    /// Weighted softmax cross-entropy over rows of `logits: [b, c]`:
    /// `sum_i w[t_i] * -log softmax(z_i)[t_i] / sum_i w[t_i]`, skipping items
    /// whose target equals `ignore_index`.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        class_weights: Option<&[T]>,
        ignore_index: Option<usize>,
    ) -> Result<Var> {
        let lt = self.value(logits);
        let (b, c) = (lt.rows(), lt.cols());
        if targets.len() != b {
            return Err(shape_err(format!("cross entropy: {} targets for {b} rows", targets.len())));
        }
        if let Some(w) = class_weights {
            if w.len() != c {
                return Err(shape_err(format!("cross entropy: {} class weights for {c} classes", w.len())));
            }
        }
        let mut probs = vec![T::zero(); b * c];
        let mut item_w = vec![T::zero(); b];
        let mut total = T::zero();
        let mut norm = T::zero();
        let mut any = false;
        for i in 0..b {
            let t = targets[i];
            if Some(t) == ignore_index {
                continue;
            }
            if t >= c {
                return Err(Error::invalid(format!("cross entropy target {t} outside {c} classes")));
            }
            any = true;
            let row = &lt.data()[i * c..(i + 1) * c];
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for (p, &v) in probs[i * c..(i + 1) * c].iter_mut().zip(row) {
                *p = (v - mx).exp();
                z += *p;
            }
            probs[i * c..(i + 1) * c].iter_mut().for_each(|p| *p /= z);
            let w = class_weights.map_or(T::one(), |cw| cw[t]);
            item_w[i] = w;
            norm += w;
            total += w * (z.ln() + mx - row[t]);
        }
        if !any {
            return Err(Error::invalid("cross entropy: every item is ignored"));
        }
        if !(norm > T::zero()) {
            return Err(Error::invalid("cross entropy: total weight is not positive"));
        }
        let loss = Tensor::scalar(total / norm);
        let op = Op::SoftmaxCe { logits, targets: targets.to_vec(), item_w, probs, norm };
        Ok(self.push(loss, op, &[logits]))
    }

    /// Scales each row to unit Euclidean norm.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let c = t.cols();
        let tiny = T::of(1e-12);
        let mut norms = Vec::with_capacity(t.rows());
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(c) {
            let n = row.iter().map(|&v| v * v).sum::<T>().sqrt().max(tiny);
            row.iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        let t = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(t, Op::L2Normalize { x, norms }, &[x]))
    }

    /// Inverted dropout; identity when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!("dropout probability {p} outside [0, 1)")));
        }
        let t = self.value(x);
        let keep = T::of(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..t.numel())
            .map(|_| if p > 0.0 && rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let out = t.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let t = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(t, Op::Dropout { x, mask }, &[x]))
    }

    /// Reverse pass from a single-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        if self.value(output).numel() != 1 {
            return Err(shape_err(format!("backward needs a scalar output, got {:?}", self.shape(output))));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(vec![T::one()]);
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.needs_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accum<'a>(&self, grads: &'a mut [Option<Vec<T>>], v: Var) -> Option<&'a mut [T]> {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); node.value.numel()]).as_mut_slice())
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Reshape { x } => {
                if let Some(dx) = self.accum(grads, *x) {
                    add_into(dx, g);
                }
            }
            Op::Dense { x, w, b } => self.dense_backward(*x, *w, *b, g, grads),
            Op::MatMulNt { a, b } => {
                let (at, bt) = (self.value(*a), self.value(*b));
                let (m, n, k) = (at.rows(), bt.rows(), at.cols());
                if let Some(da) = self.accum(grads, *a) {
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            for (d, &bv) in da[i * k..(i + 1) * k].iter_mut().zip(&bt.data()[j * k..(j + 1) * k]) {
                                *d += gij * bv;
                            }
                        }
                    }
                }
                if let Some(db) = self.accum(grads, *b) {
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            for (d, &av) in db[j * k..(j + 1) * k].iter_mut().zip(&at.data()[i * k..(i + 1) * k]) {
                                *d += gij * av;
                            }
                        }
                    }
                }
            }
            Op::Transpose { x } => {
                let t = self.value(*x);
                let (r, c) = (t.rows(), t.cols());
                if let Some(dx) = self.accum(grads, *x) {
                    for i in 0..r {
                        for j in 0..c {
                            dx[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::Relu { x } => {
                let xv = self.value(*x).data();
                if let Some(dx) = self.accum(grads, *x) {
                    for ((d, &gv), &v) in dx.iter_mut().zip(g).zip(xv) {
                        if v > T::zero() {
                            *d += gv;
                        }
                    }
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                let c = self.value(*x).cols();
                let rows = xhat.len() / c;
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gh = vec![T::zero(); c];
                for (grow, hrow) in g.chunks(c).zip(xhat.chunks(c)) {
                    for j in 0..c {
                        sum_g[j] += grow[j];
                        sum_gh[j] += grow[j] * hrow[j];
                    }
                }
                if let Some(db) = self.accum(grads, *beta) {
                    add_into(db, &sum_g);
                }
                if let Some(dgm) = self.accum(grads, *gamma) {
                    add_into(dgm, &sum_gh);
                }
                let gd = self.value(*gamma).data().to_vec();
                if let Some(dx) = self.accum(grads, *x) {
                    if !train {
                        for (drow, grow) in dx.chunks_mut(c).zip(g.chunks(c)) {
                            for j in 0..c {
                                drow[j] += grow[j] * gd[j] * inv_std[j];
                            }
                        }
                    } else {
                        let rn = T::from_usize(rows).unwrap();
                        for ((drow, grow), hrow) in dx.chunks_mut(c).zip(g.chunks(c)).zip(xhat.chunks(c)) {
                            for j in 0..c {
                                let s = gd[j] * inv_std[j] / rn;
                                drow[j] += s * (rn * grow[j] - sum_g[j] - hrow[j] * sum_gh[j]);
                            }
                        }
                    }
                }
            }
            Op::GatherRows { x, idx } => {
                let c = self.value(*x).cols();
                if let Some(dx) = self.accum(grads, *x) {
                    for (r, &i) in idx.iter().enumerate() {
                        add_into(&mut dx[i * c..(i + 1) * c], &g[r * c..(r + 1) * c]);
                    }
                }
            }
            Op::Concat { parts } => {
                let total = node.value.cols();
                let rows = node.value.rows();
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if let Some(dp) = self.accum(grads, p) {
                        for r in 0..rows {
                            add_into(&mut dp[r * w..(r + 1) * w], &g[r * total + off..r * total + off + w]);
                        }
                    }
                    off += w;
                }
            }
            Op::MaxReduce { x, argmax } => {
                let c = node.value.cols();
                if let Some(dx) = self.accum(grads, *x) {
                    for (e, (&src, &gv)) in argmax.iter().zip(g).enumerate() {
                        dx[src * c + e % c] += gv;
                    }
                }
            }
            Op::WeightedGather { x, idx, w, k } => {
                let c = self.value(*x).cols();
                if let Some(dx) = self.accum(grads, *x) {
                    for (s, (&j, &wv)) in idx.iter().zip(w).enumerate() {
                        let t = s / k;
                        for (d, &gv) in dx[j * c..(j + 1) * c].iter_mut().zip(&g[t * c..(t + 1) * c]) {
                            *d += wv * gv;
                        }
                    }
                }
            }
            Op::LinComb { a, b, alpha, beta } => {
                if let Some(da) = self.accum(grads, *a) {
                    da.iter_mut().zip(g).for_each(|(d, &gv)| *d += *alpha * gv);
                }
                if let Some(db) = self.accum(grads, *b) {
                    db.iter_mut().zip(g).for_each(|(d, &gv)| *d += *beta * gv);
                }
            }
            Op::Scale { x, c } => {
                if let Some(dx) = self.accum(grads, *x) {
                    dx.iter_mut().zip(g).for_each(|(d, &gv)| *d += *c * gv);
                }
            }
            Op::ScaleBy { x, s } => {
                let sv = self.value(*s).item();
                let xv = self.value(*x).data();
                let ds_val: T = g.iter().zip(xv).map(|(&gv, &v)| gv * v).sum();
                if let Some(dx) = self.accum(grads, *x) {
                    dx.iter_mut().zip(g).for_each(|(d, &gv)| *d += sv * gv);
                }
                if let Some(ds) = self.accum(grads, *s) {
                    ds[0] += ds_val;
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a).data().to_vec(), self.value(*b).data().to_vec());
                if let Some(da) = self.accum(grads, *a) {
                    for ((d, &gv), &y) in da.iter_mut().zip(g).zip(&bv) {
                        *d += gv * y;
                    }
                }
                if let Some(db) = self.accum(grads, *b) {
                    for ((d, &gv), &y) in db.iter_mut().zip(g).zip(&av) {
                        *d += gv * y;
                    }
                }
            }
            Op::Exp { x } => {
                let y = node.value.data();
                if let Some(dx) = self.accum(grads, *x) {
                    for ((d, &gv), &yv) in dx.iter_mut().zip(g).zip(y) {
                        *d += gv * yv;
                    }
                }
            }
            Op::Sum { x } => {
                if let Some(dx) = self.accum(grads, *x) {
                    dx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::SoftmaxCe { logits, targets, item_w, probs, norm } => {
                let c = self.value(*logits).cols();
                if let Some(dl) = self.accum(grads, *logits) {
                    for (i, (&t, &w)) in targets.iter().zip(item_w).enumerate() {
                        if w == T::zero() {
                            continue;
                        }
                        let s = g[0] * w / *norm;
                        for j in 0..c {
                            let onehot = if j == t { T::one() } else { T::zero() };
                            dl[i * c + j] += s * (probs[i * c + j] - onehot);
                        }
                    }
                }
            }
            Op::L2Normalize { x, norms } => {
                let y = node.value.data();
                let c = node.value.cols();
                if let Some(dx) = self.accum(grads, *x) {
                    for (r, &n) in norms.iter().enumerate() {
                        let yr = &y[r * c..(r + 1) * c];
                        let gr = &g[r * c..(r + 1) * c];
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for j in 0..c {
                            dx[r * c + j] += (gr[j] - yr[j] * dot) / n;
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(dx) = self.accum(grads, *x) {
                    for ((d, &gv), &m) in dx.iter_mut().zip(g).zip(mask) {
                        *d += gv * m;
                    }
                }
            }
        }
    }

    fn dense_backward(&self, x: Var, w: Var, b: Option<Var>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let (xt, wt) = (self.value(x), self.value(w));
        let (cin, cout) = (wt.shape()[0], wt.shape()[1]);
        let rows = xt.rows();
        let xd = xt.data();
        let wd = wt.data();
        let par = rows * cin * cout >= PAR_THRESHOLD;
        if let Some(db) = b.and_then(|b| self.accum(grads, b)) {
            for grow in g.chunks(cout) {
                add_into(db, grow);
            }
        }
        if let Some(dw) = self.accum(grads, w) {
            let block = |(xb, gb): (&[T], &[T])| {
                let mut part = vec![T::zero(); cin * cout];
                for (xrow, grow) in xb.chunks(cin).zip(gb.chunks(cout)) {
                    for (i, &xi) in xrow.iter().enumerate() {
                        if xi == T::zero() {
                            continue;
                        }
                        for (p, &gv) in part[i * cout..(i + 1) * cout].iter_mut().zip(grow) {
                            *p += xi * gv;
                        }
                    }
                }
                part
            };
            let partials: Vec<Vec<T>> = if par {
                xd.par_chunks(ROW_BLOCK * cin).zip(g.par_chunks(ROW_BLOCK * cout)).map(block).collect()
            } else {
                xd.chunks(ROW_BLOCK * cin).zip(g.chunks(ROW_BLOCK * cout)).map(block).collect()
            };
            for p in &partials {
                add_into(dw, p);
            }
        }
        if let Some(dx) = self.accum(grads, x) {
            let kernel = |(drow, grow): (&mut [T], &[T])| {
                for (i, d) in drow.iter_mut().enumerate() {
                    let wrow = &wd[i * cout..(i + 1) * cout];
                    *d += wrow.iter().zip(grow).map(|(&a, &b)| a * b).sum::<T>();
                }
            };
            if par {
                dx.par_chunks_mut(cin).zip(g.par_chunks(cout)).for_each(kernel);
            } else {
                dx.chunks_mut(cin).zip(g.chunks(cout)).for_each(kernel);
            }
        }
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
