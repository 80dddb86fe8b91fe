//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every primitive in creation order, so the node list is
//! already topologically sorted; [`Graph::backward`] walks it in reverse.

use std::sync::Arc;

use crate::error::{shape_err, Result, TensorError};
use crate::fft;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
    },
    MatMulConst {
        a: Var,
        b: Arc<Tensor>,
    },
    BatchMatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        s: f64,
    },
    Gelu {
        a: Var,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Softmax {
        a: Var,
    },
    Permute {
        a: Var,
        perm: Vec<usize>,
    },
    Reshape {
        a: Var,
    },
    Slice {
        a: Var,
        axis: usize,
        start: usize,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Sum {
        a: Var,
    },
    Mean {
        a: Var,
    },
    Mse {
        pred: Var,
        target: Arc<Tensor>,
    },
}

#[derive(Debug)]
struct Node {
    value: Arc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that needed one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// `c = op(a) * op(b) + beta * c` with `op(a)` of shape `m x k`, `op(b)` of shape `k x n`.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, c: &mut [f64], beta: f64) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: slice lengths cover every index addressed by the given strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2)) + x * pdf
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * shape[d + 1];
    }
    s
}

fn permute_data(data: &[f64], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    // trailing axes that stay in place move as contiguous blocks
    let mut keep = perm.len();
    while keep > 0 && perm[keep - 1] == keep - 1 {
        keep -= 1;
    }
    let block: usize = shape[keep..].iter().product();
    if data.is_empty() || block == 0 {
        return (out_shape, Vec::new());
    }
    let in_strides = strides(shape);
    let src: Vec<usize> = perm[..keep].iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; keep];
    let mut off = 0usize;
    for _ in 0..data.len() / block {
        out.extend_from_slice(&data[off..off + block]);
        for d in (0..keep).rev() {
            idx[d] += 1;
            off += src[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= src[d] * idx[d];
            idx[d] = 0;
        }
    }
    (out_shape, out)
}

/// `(outer, dim, inner)` view of `shape` around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn leaf(&mut self, value: Arc<Tensor>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient is tracked.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.leaf(Arc::new(t), false)
    }

    /// Shared constant input.
    pub fn input_shared(&mut self, t: Arc<Tensor>) -> Var {
        self.leaf(t, false)
    }

    /// Trainable leaf; receives a gradient in [`Graph::backward`].
    pub fn param(&mut self, t: Arc<Tensor>) -> Var {
        self.leaf(t, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, deps: &[Var]) -> Var {
        let needs_grad = deps.iter().any(|d| self.nodes[d.0].needs_grad);
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// `a [.., k] x b [k, m] -> [.., m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if tb.rank() != 2 || ta.rank() == 0 || ta.last_dim() != tb.shape()[0] {
            return shape_err("matmul", format!("{:?} x {:?}", ta.shape(), tb.shape()));
        }
        let (k, m) = (tb.shape()[0], tb.shape()[1]);
        let rows = ta.numel() / k.max(1);
        let mut shape = ta.shape().to_vec();
        *shape.last_mut().unwrap() = m;
        let mut out = vec![0.0; rows * m];
        gemm(rows, k, m, ta.data(), false, tb.data(), false, &mut out, 0.0);
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::MatMul { a, b }, &[a, b]))
    }

    /// `a [.., k]` times a constant `[k, m]` matrix.
    pub fn matmul_const(&mut self, a: Var, b: Arc<Tensor>) -> Result<Var> {
        let ta = self.value(a);
        if b.rank() != 2 || ta.rank() == 0 || ta.last_dim() != b.shape()[0] {
            return shape_err("matmul", format!("{:?} x {:?}", ta.shape(), b.shape()));
        }
        let (k, m) = (b.shape()[0], b.shape()[1]);
        let rows = ta.numel() / k.max(1);
        let mut shape = ta.shape().to_vec();
        *shape.last_mut().unwrap() = m;
        let mut out = vec![0.0; rows * m];
        gemm(rows, k, m, ta.data(), false, b.data(), false, &mut out, 0.0);
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::MatMulConst { a, b }, &[a]))
    }

    /// Batched product over matching leading dims: `[.., n, k] x [.., k, m]`,
    /// or `[.., n, k] x [.., m, k]^T` when `trans_b`.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (ra, rb) = (ta.rank(), tb.rank());
        let bad = || {
            shape_err(
                "bmm",
                format!("{:?} x {:?} (trans_b = {trans_b})", ta.shape(), tb.shape()),
            )
        };
        if ra < 2 || ra != rb || ta.shape()[..ra - 2] != tb.shape()[..rb - 2] {
            return bad();
        }
        let (n, k) = (ta.shape()[ra - 2], ta.shape()[ra - 1]);
        let (kb, m) = if trans_b {
            (tb.shape()[rb - 1], tb.shape()[rb - 2])
        } else {
            (tb.shape()[rb - 2], tb.shape()[rb - 1])
        };
        if k != kb {
            return bad();
        }
        let batch: usize = ta.shape()[..ra - 2].iter().product();
        let mut out = vec![0.0; batch * n * m];
        for i in 0..batch {
            gemm(
                n,
                k,
                m,
                &ta.data()[i * n * k..],
                false,
                &tb.data()[i * k * m..],
                trans_b,
                &mut out[i * n * m..],
                0.0,
            );
        }
        let mut shape = ta.shape().to_vec();
        shape[ra - 1] = m;
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::BatchMatMul { a, b, trans_b }, &[a, b]))
    }

    /// `a + b` where `b`'s shape equals `a`'s trailing dims (broadcast over the rest).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (ra, rb) = (ta.rank(), tb.rank());
        if rb > ra || ta.shape()[ra - rb..] != *tb.shape() {
            return shape_err("add", format!("{:?} + {:?}", ta.shape(), tb.shape()));
        }
        let nb = tb.numel();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + tb.data()[i % nb])
            .collect();
        let value = Tensor::new(ta.shape(), data)?;
        Ok(self.push(value, Op::Add { a, b }, &[a, b]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x - y).collect();
        let value = Tensor::new(ta.shape(), data)?;
        Ok(self.push(value, Op::Sub { a, b }, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(ta.shape(), data)?;
        Ok(self.push(value, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|v| v * s);
        self.push(value, Op::Scale { a, s }, &[a])
    }

    /// Exact (erf) GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(gelu);
        self.push(value, Op::Gelu { a }, &[a])
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta` of that size.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let d = tx.last_dim();
        if tx.rank() == 0 || tg.shape() != [d] || tb.shape() != [d] {
            return shape_err(
                "layer_norm",
                format!("x {:?}, gamma {:?}, beta {:?}", tx.shape(), tg.shape(), tb.shape()),
            );
        }
        let rows = tx.numel() / d;
        let mut xhat = vec![0.0; tx.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; tx.numel()];
        for r in 0..rows {
            let row = &tx.data()[r * d..(r + 1) * d];
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = inv;
            for j in 0..d {
                let h = (row[j] - mu) * inv;
                xhat[r * d + j] = h;
                out[r * d + j] = h * tg.data()[j] + tb.data()[j];
            }
        }
        let value = Tensor::new(tx.shape(), out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let d = ta.last_dim();
        let mut out = ta.data().to_vec();
        for row in out.chunks_mut(d.max(1)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            row.iter_mut().for_each(|v| *v /= sum);
        }
        let value = Tensor::new(ta.shape(), out).expect("shape preserved");
        self.push(value, Op::Softmax { a }, &[a])
    }

    /// Axis permutation: output axis `d` is input axis `perm[d]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        let mut seen = perm.to_vec();
        seen.sort_unstable();
        if perm.len() != ta.rank() || seen.iter().enumerate().any(|(i, p)| i != *p) {
            return shape_err("permute", format!("{:?} by {perm:?}", ta.shape()));
        }
        let (shape, data) = permute_data(ta.data(), ta.shape(), perm);
        let value = Tensor::new(&shape, data)?;
        Ok(self.push(value, Op::Permute { a, perm: perm.to_vec() }, &[a]))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let r = self.value(a).rank();
        if r < 2 {
            return shape_err("transpose", format!("{:?}", self.shape(a)));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(a, &perm)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshaped(shape).map_err(|_| TensorError::Shape {
            op: "reshape",
            detail: format!("{:?} to {shape:?}", self.shape(a)),
        })?;
        Ok(self.push(value, Op::Reshape { a }, &[a]))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        if axis >= ta.rank() || start + len > ta.shape()[axis] {
            return shape_err(
                "slice",
                format!("{:?} axis {axis} [{start}, {})", ta.shape(), start + len),
            );
        }
        let (outer, dim, inner) = split_axis(ta.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * dim * inner + start * inner;
            data.extend_from_slice(&ta.data()[base..base + len * inner]);
        }
        let mut shape = ta.shape().to_vec();
        shape[axis] = len;
        let value = Tensor::new(&shape, data)?;
        Ok(self.push(value, Op::Slice { a, axis, start }, &[a]))
    }

    /// Concatenation along `axis`; all other dims must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(TensorError::Argument {
                op: "concat",
                detail: "no inputs".into(),
            });
        };
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return shape_err("concat", format!("axis {axis} for {base:?}"));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return shape_err("concat", format!("{base:?} with {s:?} on axis {axis}"));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let t = self.value(*p);
                let dim = t.shape()[axis];
                data.extend_from_slice(&t.data()[o * dim * inner..(o + 1) * dim * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(&shape, data)?;
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum { a }, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor::scalar(t.sum() / t.numel().max(1) as f64);
        self.push(value, Op::Mean { a }, &[a])
    }

    /// Mean squared difference to a constant target.
    pub fn mse(&mut self, pred: Var, target: Arc<Tensor>) -> Result<Var> {
        let tp = self.value(pred);
        if tp.shape() != target.shape() {
            return shape_err("mse", format!("{:?} vs {:?}", tp.shape(), target.shape()));
        }
        let n = tp.numel().max(1) as f64;
        let s: f64 = tp
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        Ok(self.push(Tensor::scalar(s / n), Op::Mse { pred, target }, &[pred]))
    }

    /// `x [.., k] w [k, m] + b [m]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add(y, b)
    }

    /// Real DFT modes `0..r` of the last axis, packed as `2r` interleaved `(re, im)` channels.
    pub fn rfft_truncate(&mut self, x: Var, r: usize) -> Result<Var> {
        let n = self.value(x).last_dim();
        let basis = Arc::new(fft::forward_basis(n, r)?);
        self.matmul_const(x, basis)
    }

    /// Inverse real DFT of `2r` packed channels onto `n` points, higher modes zero.
    pub fn irfft_pad(&mut self, modes: Var, n: usize) -> Result<Var> {
        let c = self.value(modes).last_dim();
        if !c.is_multiple_of(2) {
            return Err(TensorError::Argument {
                op: "irfft_pad",
                detail: format!("odd channel count {c}"),
            });
        }
        let basis = Arc::new(fft::inverse_basis(c / 2, n)?);
        self.matmul_const(modes, basis)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(TensorError::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lt.shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.wants(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (k, m) = (tb.shape()[0], tb.shape()[1]);
                let rows = ta.numel() / k.max(1);
                if self.wants(*a) {
                    let mut da = vec![0.0; ta.numel()];
                    gemm(rows, m, k, g.data(), false, tb.data(), true, &mut da, 0.0);
                    self.accumulate(grads, *a, Tensor::new(ta.shape(), da).unwrap());
                }
                if self.wants(*b) {
                    let mut db = vec![0.0; tb.numel()];
                    gemm(k, rows, m, ta.data(), true, g.data(), false, &mut db, 0.0);
                    self.accumulate(grads, *b, Tensor::new(tb.shape(), db).unwrap());
                }
            }
            Op::MatMulConst { a, b } => {
                let ta = self.value(*a);
                let (k, m) = (b.shape()[0], b.shape()[1]);
                let rows = ta.numel() / k.max(1);
                let mut da = vec![0.0; ta.numel()];
                gemm(rows, m, k, g.data(), false, b.data(), true, &mut da, 0.0);
                self.accumulate(grads, *a, Tensor::new(ta.shape(), da).unwrap());
            }
            Op::BatchMatMul { a, b, trans_b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let r = ta.rank();
                let (n, k) = (ta.shape()[r - 2], ta.shape()[r - 1]);
                let m = out.shape()[r - 1];
                let batch: usize = ta.shape()[..r - 2].iter().product();
                if self.wants(*a) {
                    let mut da = vec![0.0; ta.numel()];
                    for i in 0..batch {
                        // dA = dC op(B)^T
                        gemm(
                            n,
                            m,
                            k,
                            &g.data()[i * n * m..],
                            false,
                            &tb.data()[i * k * m..],
                            !trans_b,
                            &mut da[i * n * k..],
                            0.0,
                        );
                    }
                    self.accumulate(grads, *a, Tensor::new(ta.shape(), da).unwrap());
                }
                if self.wants(*b) {
                    let mut db = vec![0.0; tb.numel()];
                    for i in 0..batch {
                        if *trans_b {
                            // B is [m, k]: dB = dC^T A
                            gemm(
                                m,
                                n,
                                k,
                                &g.data()[i * n * m..],
                                true,
                                &ta.data()[i * n * k..],
                                false,
                                &mut db[i * m * k..],
                                0.0,
                            );
                        } else {
                            gemm(
                                k,
                                n,
                                m,
                                &ta.data()[i * n * k..],
                                true,
                                &g.data()[i * n * m..],
                                false,
                                &mut db[i * k * m..],
                                0.0,
                            );
                        }
                    }
                    self.accumulate(grads, *b, Tensor::new(tb.shape(), db).unwrap());
                }
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, g.clone());
                if self.wants(*b) {
                    let tb = self.value(*b);
                    let nb = tb.numel();
                    let mut db = vec![0.0; nb];
                    for (i, v) in g.data().iter().enumerate() {
                        db[i % nb] += v;
                    }
                    self.accumulate(grads, *b, Tensor::new(tb.shape(), db).unwrap());
                }
            }
            Op::Sub { a, b } => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let d = g.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *a, Tensor::new(ta.shape(), d).unwrap());
                }
                if self.wants(*b) {
                    let d = g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *b, Tensor::new(tb.shape(), d).unwrap());
                }
            }
            Op::Scale { a, s } => self.accumulate(grads, *a, g.map(|v| v * s)),
            Op::Gelu { a } => {
                let ta = self.value(*a);
                let d = g
                    .data()
                    .iter()
                    .zip(ta.data())
                    .map(|(gv, x)| gv * gelu_grad(*x))
                    .collect();
                self.accumulate(grads, *a, Tensor::new(ta.shape(), d).unwrap());
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let tg = self.value(*gamma);
                let d = tg.numel();
                let rows = xhat.len() / d;
                if self.wants(*gamma) || self.wants(*beta) {
                    let mut dg = vec![0.0; d];
                    let mut db = vec![0.0; d];
                    for r in 0..rows {
                        for j in 0..d {
                            dg[j] += g.data()[r * d + j] * xhat[r * d + j];
                            db[j] += g.data()[r * d + j];
                        }
                    }
                    self.accumulate(grads, *gamma, Tensor::new(&[d], dg).unwrap());
                    self.accumulate(grads, *beta, Tensor::new(&[d], db).unwrap());
                }
                if self.wants(*x) {
                    let mut dx = vec![0.0; xhat.len()];
                    let dn = d as f64;
                    for r in 0..rows {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..d {
                            let dh = g.data()[r * d + j] * tg.data()[j];
                            s1 += dh;
                            s2 += dh * xhat[r * d + j];
                        }
                        for j in 0..d {
                            let dh = g.data()[r * d + j] * tg.data()[j];
                            dx[r * d + j] = inv_std[r] / dn * (dn * dh - s1 - xhat[r * d + j] * s2);
                        }
                    }
                    self.accumulate(grads, *x, Tensor::new(out.shape(), dx).unwrap());
                }
            }
            Op::Softmax { a } => {
                let d = out.last_dim().max(1);
                let mut dx = vec![0.0; out.numel()];
                for ((y, gy), dxr) in out.data().chunks(d).zip(g.data().chunks(d)).zip(dx.chunks_mut(d)) {
                    let dot: f64 = y.iter().zip(gy).map(|(p, q)| p * q).sum();
                    for j in 0..d {
                        dxr[j] = y[j] * (gy[j] - dot);
                    }
                }
                self.accumulate(grads, *a, Tensor::new(out.shape(), dx).unwrap());
            }
            Op::Permute { a, perm } => {
                let mut inv = vec![0; perm.len()];
                for (d, p) in perm.iter().enumerate() {
                    inv[*p] = d;
                }
                let (shape, data) = permute_data(g.data(), g.shape(), &inv);
                self.accumulate(grads, *a, Tensor::new(&shape, data).unwrap());
            }
            Op::Reshape { a } => {
                let shape = self.shape(*a).to_vec();
                self.accumulate(grads, *a, g.reshaped(&shape).unwrap());
            }
            Op::Slice { a, axis, start } => {
                let ta = self.value(*a);
                let (outer, dim, inner) = split_axis(ta.shape(), *axis);
                let len = out.shape()[*axis];
                let mut da = vec![0.0; ta.numel()];
                for o in 0..outer {
                    let dst = o * dim * inner + start * inner;
                    da[dst..dst + len * inner].copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                self.accumulate(grads, *a, Tensor::new(ta.shape(), da).unwrap());
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(out.shape(), *axis);
                let mut offset = 0;
                for p in parts {
                    let tp = self.value(*p);
                    let dim = tp.shape()[*axis];
                    if self.wants(*p) {
                        let mut dp = Vec::with_capacity(tp.numel());
                        for o in 0..outer {
                            let src = o * total * inner + offset * inner;
                            dp.extend_from_slice(&g.data()[src..src + dim * inner]);
                        }
                        self.accumulate(grads, *p, Tensor::new(tp.shape(), dp).unwrap());
                    }
                    offset += dim;
                }
            }
            Op::Sum { a } => {
                let shape = self.shape(*a).to_vec();
                self.accumulate(grads, *a, Tensor::full(&shape, g.item()));
            }
            Op::Mean { a } => {
                let t = self.value(*a);
                let v = g.item() / t.numel().max(1) as f64;
                self.accumulate(grads, *a, Tensor::full(t.shape(), v));
            }
            Op::Mse { pred, target } => {
                let tp = self.value(*pred);
                let s = 2.0 * g.item() / tp.numel().max(1) as f64;
                let d = tp.data().iter().zip(target.data()).map(|(p, t)| s * (p - t)).collect();
                self.accumulate(grads, *pred, Tensor::new(tp.shape(), d).unwrap());
            }
        }
    }
}
