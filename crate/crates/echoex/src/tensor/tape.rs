//! Gradient tape: eager op recording, reverse-order backward.

use std::rc::Rc;

use crate::error::{Error, Result};

use super::conv::{self, ConvSpec};
use super::lstm::{self, LstmSaved};
use super::{broadcast_zip, reduce_to_shape, strides_of, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Clone)]
pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    Conv1d { x: Var, w: Var, b: Option<Var>, spec: ConvSpec },
    ConvTranspose1d { x: Var, w: Var, b: Option<Var>, stride: usize },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Sqrt(Var),
    Recip(Var),
    Ln(Var),
    PRelu { x: Var, slope: Var },
    Scale(Var, f64),
    AddScalar(Var),
    SumAxis { x: Var },
    MeanAxis { x: Var, axis: usize },
    SumAll(Var),
    MeanAll(Var),
    CumSum { x: Var, axis: usize },
    Concat { xs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Permute { x: Var, perm: Vec<usize> },
    Reshape(Var),
    Chunk { x: Var, size: usize, hop: usize },
    Unchunk { x: Var, hop: usize },
    LstmSeq {
        x: Var,
        w_ih: Var,
        w_hh: Var,
        bias: Var,
        reverse: bool,
        saved: Option<Rc<LstmSaved>>,
    },
}


/// Ordered record of primitive ops with their values and gradients.
///
/// Single-threaded by construction; run one tape per worker for batch
/// parallelism. Backward visits the record in reverse creation order, so
/// gradient accumulation order is fixed and results are bit-reproducible.
pub struct Tape {
    values: Vec<Tensor>,
    grads: Vec<Option<Tensor>>,
    ops: Vec<Op>,
    requires: Vec<bool>,
    backward_done: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape { values: Vec::new(), grads: Vec::new(), ops: Vec::new(), requires: Vec::new(), backward_done: false }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    /// Gradient accumulated for `v` by the last [`Tape::backward`] call.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    fn push(&mut self, value: Tensor, op: Op, requires: bool) -> Var {
        self.values.push(value);
        self.grads.push(None);
        self.ops.push(op);
        self.requires.push(requires);
        Var(self.values.len() - 1)
    }

    fn any_requires(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.requires[v.0])
    }

    /// Registers an input tensor.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Registers a constant (no gradient).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = broadcast_zip("add", self.value(a), self.value(b), |x, y| x + y)?;
        let req = self.any_requires(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), req))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = broadcast_zip("sub", self.value(a), self.value(b), |x, y| x - y)?;
        let req = self.any_requires(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), req))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = broadcast_zip("mul", self.value(a), self.value(b), |x, y| x * y)?;
        let req = self.any_requires(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), req))
    }

    /// 2-D matrix product `(m,k) x (k,n) -> (m,n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch { op: "matmul", details: format!("{sa:?} x {sb:?}") });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let v = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let req = self.any_requires(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], v), Op::MatMul(a, b), req))
    }

    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let v = conv::conv1d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), &spec)?;
        let mut ps = vec![x, w];
        if let Some(b) = b {
            ps.push(b);
        }
        let req = self.any_requires(&ps);
        Ok(self.push(v, Op::Conv1d { x, w, b, spec }, req))
    }

    pub fn conv_transpose1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let v = conv::conv_transpose1d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            stride,
        )?;
        let mut ps = vec![x, w];
        if let Some(b) = b {
            ps.push(b);
        }
        let req = self.any_requires(&ps);
        Ok(self.push(v, Op::ConvTranspose1d { x, w, b, stride }, req))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|v| v.max(0.0));
        let req = self.requires[x.0];
        self.push(v, Op::Relu(x), req)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|v| 1.0 / (1.0 + (-v).exp()));
        let req = self.requires[x.0];
        self.push(v, Op::Sigmoid(x), req)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::tanh);
        let req = self.requires[x.0];
        self.push(v, Op::Tanh(x), req)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::sqrt);
        let req = self.requires[x.0];
        self.push(v, Op::Sqrt(x), req)
    }

    pub fn recip(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::recip);
        let req = self.requires[x.0];
        self.push(v, Op::Recip(x), req)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::ln);
        let req = self.requires[x.0];
        self.push(v, Op::Ln(x), req)
    }

    /// Parametric ReLU with a single learned slope (one-element tensor).
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        if self.value(slope).numel() != 1 {
            return Err(Error::ShapeMismatch {
                op: "prelu",
                details: format!("slope must be one element, got {:?}", self.shape(slope)),
            });
        }
        let a = self.value(slope).item();
        let v = self.value(x).map(|v| if v > 0.0 { v } else { a * v });
        let req = self.any_requires(&[x, slope]);
        Ok(self.push(v, Op::PRelu { x, slope }, req))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x).map(|v| v * c);
        let req = self.requires[x.0];
        self.push(v, Op::Scale(x, c), req)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x).map(|v| v + c);
        let req = self.requires[x.0];
        self.push(v, Op::AddScalar(x), req)
    }

    /// Sum over `axis`, keeping it as size 1.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = reduce_axis(self.value(x), axis, false)?;
        let req = self.requires[x.0];
        Ok(self.push(v, Op::SumAxis { x }, req))
    }

    /// Mean over `axis`, keeping it as size 1.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = reduce_axis(self.value(x), axis, true)?;
        let req = self.requires[x.0];
        Ok(self.push(v, Op::MeanAxis { x, axis }, req))
    }

    /// Sum of all elements; result shape is all-ones at the input rank so
    /// it broadcasts back cleanly.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let v = Tensor::new(vec![1; t.rank()], vec![t.data().iter().sum()]);
        let req = self.requires[x.0];
        self.push(v, Op::SumAll(x), req)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = t.numel().max(1) as f64;
        let v = Tensor::new(vec![1; t.rank()], vec![t.data().iter().sum::<f64>() / n]);
        let req = self.requires[x.0];
        self.push(v, Op::MeanAll(x), req)
    }

    /// Running sum along `axis`.
    pub fn cumsum(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() {
            return Err(Error::ShapeMismatch {
                op: "cumsum",
                details: format!("axis {axis} of {:?}", t.shape()),
            });
        }
        let v = cumsum_tensor(t, axis, false);
        let req = self.requires[x.0];
        Ok(self.push(v, Op::CumSum { x, axis }, req))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::ShapeMismatch { op: "concat", details: "no inputs".into() });
        }
        let first = self.value(xs[0]).shape().to_vec();
        let mut axis_total = 0;
        for &x in xs {
            let s = self.shape(x);
            if s.len() != first.len()
                || s.iter().enumerate().any(|(d, &v)| d != axis && v != first[d])
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    details: format!("{s:?} vs {first:?} on axis {axis}"),
                });
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let mut out = Tensor::zeros(&out_shape);
        let mut offset = 0;
        for &x in xs {
            let t = self.value(x);
            copy_block(&mut out, t, axis, offset);
            offset += t.shape()[axis];
        }
        let req = self.any_requires(xs);
        Ok(self.push(out, Op::Concat { xs: xs.to_vec(), axis }, req))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() || start + len > t.shape()[axis] {
            return Err(Error::ShapeMismatch {
                op: "slice",
                details: format!("[{start}, {start}+{len}) on axis {axis} of {:?}", t.shape()),
            });
        }
        let mut out_shape = t.shape().to_vec();
        out_shape[axis] = len;
        let mut out = Tensor::zeros(&out_shape);
        extract_block(&mut out, t, axis, start);
        let req = self.requires[x.0];
        Ok(self.push(out, Op::Slice { x, axis, start }, req))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if perm.len() != t.rank() {
            return Err(Error::ShapeMismatch {
                op: "permute",
                details: format!("perm {perm:?} on {:?}", t.shape()),
            });
        }
        let v = permute_tensor(t, perm);
        let req = self.requires[x.0];
        Ok(self.push(v, Op::Permute { x, perm: perm.to_vec() }, req))
    }

    /// 2-D transpose.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.permute(x, &[1, 0])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if shape.iter().product::<usize>() != t.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                details: format!("{:?} -> {shape:?}", t.shape()),
            });
        }
        let v = t.clone().reshaped(shape.to_vec());
        let req = self.requires[x.0];
        Ok(self.push(v, Op::Reshape(x), req))
    }

    /// Splits `(C, T)` into zero-padded overlapping chunks `(C, size, S)`.
    pub fn chunk(&mut self, x: Var, size: usize, hop: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 || size == 0 || hop == 0 || hop > size {
            return Err(Error::ShapeMismatch {
                op: "chunk",
                details: format!("size {size}, hop {hop} on {:?}", t.shape()),
            });
        }
        let (c, time) = (t.shape()[0], t.shape()[1]);
        let s = if time <= size { 1 } else { (time - size).div_ceil(hop) + 1 };
        let mut out = Tensor::zeros(&[c, size, s]);
        for ci in 0..c {
            let row = &t.data()[ci * time..(ci + 1) * time];
            for si in 0..s {
                for k in 0..size {
                    let ti = si * hop + k;
                    if ti < time {
                        out.data_mut()[(ci * size + k) * s + si] = row[ti];
                    }
                }
            }
        }
        let req = self.requires[x.0];
        Ok(self.push(out, Op::Chunk { x, size, hop }, req))
    }

    /// Overlap-adds chunks `(C, K, S)` back to `(C, out_len)`.
    pub fn unchunk(&mut self, x: Var, hop: usize, out_len: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 3 {
            return Err(Error::ShapeMismatch {
                op: "unchunk",
                details: format!("{:?}", t.shape()),
            });
        }
        let (c, k, s) = (t.shape()[0], t.shape()[1], t.shape()[2]);
        let mut out = Tensor::zeros(&[c, out_len]);
        for ci in 0..c {
            for ki in 0..k {
                for si in 0..s {
                    let ti = si * hop + ki;
                    if ti < out_len {
                        out.data_mut()[ci * out_len + ti] += t.data()[(ci * k + ki) * s + si];
                    }
                }
            }
        }
        let req = self.requires[x.0];
        Ok(self.push(out, Op::Unchunk { x, hop }, req))
    }

    /// Fused LSTM over a sequence: `x (T, B, I) -> h (T, B, H)` with zero
    /// initial state. `reverse` runs the recurrence back-to-front while
    /// keeping outputs at their original positions.
    pub fn lstm_seq(
        &mut self,
        x: Var,
        w_ih: Var,
        w_hh: Var,
        bias: Var,
        reverse: bool,
    ) -> Result<Var> {
        let req = self.any_requires(&[x, w_ih, w_hh, bias]);
        let (h, saved) = lstm::lstm_forward(
            self.value(x),
            self.value(w_ih),
            self.value(w_hh),
            self.value(bias),
            reverse,
            req,
        )?;
        Ok(self.push(h, Op::LstmSeq { x, w_ih, w_hh, bias, reverse, saved: saved.map(Rc::new) }, req))
    }

    /// Reverse-mode gradients of a scalar `loss` for every recorded node
    /// that requires them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.backward_done = true;
        self.grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));

        for i in (0..=loss.0).rev() {
            if !self.requires[i] || self.grads[i].is_none() {
                continue;
            }
            let op = self.ops[i].clone();
            let gout = self.grads[i].take().unwrap();
            self.propagate(&op, i, &gout)?;
            self.grads[i] = Some(gout);
        }
        Ok(())
    }

    fn accum(&mut self, v: Var, delta: Tensor) {
        if !self.requires[v.0] {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => {
                debug_assert_eq!(g.shape(), delta.shape());
                for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&mut self, op: &Op, node: usize, gout: &Tensor) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let ga = reduce_to_shape(gout, self.shape(*a));
                let gb = reduce_to_shape(gout, self.shape(*b));
                self.accum(*a, ga);
                self.accum(*b, gb);
            }
            Op::Sub(a, b) => {
                let ga = reduce_to_shape(gout, self.shape(*a));
                let mut gb = reduce_to_shape(gout, self.shape(*b));
                for v in gb.data_mut() {
                    *v = -*v;
                }
                self.accum(*a, ga);
                self.accum(*b, gb);
            }
            Op::Mul(a, b) => {
                let da = broadcast_zip("mul", gout, self.value(*b), |g, y| g * y)?;
                let db = broadcast_zip("mul", gout, self.value(*a), |g, x| g * x)?;
                let ga = reduce_to_shape(&da, self.shape(*a));
                let gb = reduce_to_shape(&db, self.shape(*b));
                self.accum(*a, ga);
                self.accum(*b, gb);
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a).to_vec(), self.shape(*b).to_vec());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                // gA = g . B^T, gB = A^T . g
                let bt = permute_tensor(self.value(*b), &[1, 0]);
                let at = permute_tensor(self.value(*a), &[1, 0]);
                let ga = matmul_raw(gout.data(), bt.data(), m, n, k);
                let gb = matmul_raw(at.data(), gout.data(), k, m, n);
                self.accum(*a, Tensor::new(vec![m, k], ga));
                self.accum(*b, Tensor::new(vec![k, n], gb));
            }
            Op::Conv1d { x, w, b, spec } => {
                let (gx, gw, gb) =
                    conv::conv1d_backward(self.value(*x), self.value(*w), gout, spec);
                self.accum(*x, gx);
                self.accum(*w, gw);
                if let Some(b) = b {
                    self.accum(*b, gb);
                }
            }
            Op::ConvTranspose1d { x, w, b, stride } => {
                let (gx, gw, gb) =
                    conv::conv_transpose1d_backward(self.value(*x), self.value(*w), gout, *stride);
                self.accum(*x, gx);
                self.accum(*w, gw);
                if let Some(b) = b {
                    self.accum(*b, gb);
                }
            }
            Op::Relu(x) => {
                let y = &self.values[node];
                let g = zip3(gout, y, |g, y| if y > 0.0 { g } else { 0.0 });
                self.accum(*x, g);
            }
            Op::Sigmoid(x) => {
                let y = &self.values[node];
                let g = zip3(gout, y, |g, y| g * y * (1.0 - y));
                self.accum(*x, g);
            }
            Op::Tanh(x) => {
                let y = &self.values[node];
                let g = zip3(gout, y, |g, y| g * (1.0 - y * y));
                self.accum(*x, g);
            }
            Op::Sqrt(x) => {
                let y = &self.values[node];
                let g = zip3(gout, y, |g, y| g * 0.5 / y);
                self.accum(*x, g);
            }
            Op::Recip(x) => {
                let y = &self.values[node];
                let g = zip3(gout, y, |g, y| -g * y * y);
                self.accum(*x, g);
            }
            Op::Ln(x) => {
                let g = zip3(gout, self.value(*x), |g, x| g / x);
                self.accum(*x, g);
            }
            Op::PRelu { x, slope } => {
                let a = self.value(*slope).item();
                let xv = self.value(*x);
                let gx = zip3(gout, xv, |g, x| if x > 0.0 { g } else { g * a });
                let ga: f64 = gout
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(&g, &x)| if x > 0.0 { 0.0 } else { g * x })
                    .sum();
                self.accum(*x, gx);
                self.accum(*slope, Tensor::new(self.shape(*slope).to_vec(), vec![ga]));
            }
            Op::Scale(x, c) => {
                let g = gout.map(|g| g * c);
                self.accum(*x, g);
            }
            Op::AddScalar(x) => {
                self.accum(*x, gout.clone());
            }
            Op::SumAxis { x } => {
                let target = self.shape(*x).to_vec();
                let g = broadcast_zip("sum_axis", gout, &Tensor::zeros(&target), |g, _| g)?;
                self.accum(*x, g);
            }
            Op::MeanAxis { x, axis } => {
                let target = self.shape(*x).to_vec();
                let n = target[*axis] as f64;
                let g = broadcast_zip("mean_axis", gout, &Tensor::zeros(&target), |g, _| g / n)?;
                self.accum(*x, g);
            }
            Op::SumAll(x) => {
                let g = Tensor::full(self.shape(*x), gout.item());
                self.accum(*x, g);
            }
            Op::MeanAll(x) => {
                let n = self.value(*x).numel() as f64;
                let g = Tensor::full(self.shape(*x), gout.item() / n);
                self.accum(*x, g);
            }
            Op::CumSum { x, axis } => {
                let g = cumsum_tensor(gout, *axis, true);
                self.accum(*x, g);
            }
            Op::Concat { xs, axis } => {
                let mut offset = 0;
                for &x in xs {
                    let shape = self.shape(x).to_vec();
                    let mut g = Tensor::zeros(&shape);
                    extract_block(&mut g, gout, *axis, offset);
                    offset += shape[*axis];
                    self.accum(x, g);
                }
            }
            Op::Slice { x, axis, start } => {
                let mut g = Tensor::zeros(self.shape(*x));
                copy_block(&mut g, gout, *axis, *start);
                self.accum(*x, g);
            }
            Op::Permute { x, perm } => {
                let mut inv = vec![0usize; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let g = permute_tensor(gout, &inv);
                self.accum(*x, g);
            }
            Op::Reshape(x) => {
                let g = gout.clone().reshaped(self.shape(*x).to_vec());
                self.accum(*x, g);
            }
            Op::Chunk { x, size, hop } => {
                let (c, time) = (self.shape(*x)[0], self.shape(*x)[1]);
                let s = gout.shape()[2];
                let mut g = Tensor::zeros(&[c, time]);
                for ci in 0..c {
                    for si in 0..s {
                        for k in 0..*size {
                            let ti = si * hop + k;
                            if ti < time {
                                g.data_mut()[ci * time + ti] +=
                                    gout.data()[(ci * size + k) * s + si];
                            }
                        }
                    }
                }
                self.accum(*x, g);
            }
            Op::Unchunk { x, hop } => {
                let shape = self.shape(*x).to_vec();
                let (c, k, s) = (shape[0], shape[1], shape[2]);
                let out_len = gout.shape()[1];
                let mut g = Tensor::zeros(&shape);
                for ci in 0..c {
                    for ki in 0..k {
                        for si in 0..s {
                            let ti = si * hop + ki;
                            if ti < out_len {
                                g.data_mut()[(ci * k + ki) * s + si] +=
                                    gout.data()[ci * out_len + ti];
                            }
                        }
                    }
                }
                self.accum(*x, g);
            }
            Op::LstmSeq { x, w_ih, w_hh, bias, reverse, saved } => {
                let saved = saved.as_ref().expect("lstm backward without saved state");
                let h = &self.values[node];
                let grads = lstm::lstm_backward(
                    self.value(*x),
                    self.value(*w_ih),
                    self.value(*w_hh),
                    h,
                    gout,
                    saved,
                    *reverse,
                );
                self.accum(*x, grads.gx);
                self.accum(*w_ih, grads.gw_ih);
                self.accum(*w_hh, grads.gw_hh);
                self.accum(*bias, grads.gbias);
            }
        }
        Ok(())
    }
}

fn zip3(g: &Tensor, y: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(g.shape(), y.shape());
    Tensor::new(
        g.shape().to_vec(),
        g.data().iter().zip(y.data()).map(|(&a, &b)| f(a, b)).collect(),
    )
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    out
}

fn reduce_axis(t: &Tensor, axis: usize, mean: bool) -> Result<Tensor> {
    if axis >= t.rank() {
        return Err(Error::ShapeMismatch {
            op: "reduce",
            details: format!("axis {axis} of {:?}", t.shape()),
        });
    }
    let mut out_shape = t.shape().to_vec();
    let n = out_shape[axis];
    out_shape[axis] = 1;
    let mut out = Tensor::zeros(&out_shape);
    let strides = strides_of(t.shape());
    let outer: usize = t.shape()[..axis].iter().product();
    let inner: usize = t.shape()[axis + 1..].iter().product();
    for o in 0..outer {
        for i in 0..inner {
            let mut acc = 0.0;
            for j in 0..n {
                acc += t.data()[o * strides[axis] * n + j * strides[axis] + i];
            }
            out.data_mut()[o * inner + i] = if mean { acc / n as f64 } else { acc };
        }
    }
    Ok(out)
}

fn cumsum_tensor(t: &Tensor, axis: usize, reverse: bool) -> Tensor {
    let mut out = t.clone();
    let strides = strides_of(t.shape());
    let n = t.shape()[axis];
    let outer: usize = t.shape()[..axis].iter().product();
    let inner: usize = t.shape()[axis + 1..].iter().product();
    for o in 0..outer {
        for i in 0..inner {
            let base = o * strides[axis] * n + i;
            let mut acc = 0.0;
            if reverse {
                for j in (0..n).rev() {
                    acc += t.data()[base + j * strides[axis]];
                    out.data_mut()[base + j * strides[axis]] = acc;
                }
            } else {
                for j in 0..n {
                    acc += t.data()[base + j * strides[axis]];
                    out.data_mut()[base + j * strides[axis]] = acc;
                }
            }
        }
    }
    out
}

/// Copies `src` into `dst` at `offset` along `axis` (dst larger on axis).
fn copy_block(dst: &mut Tensor, src: &Tensor, axis: usize, offset: usize) {
    let n = src.shape()[axis];
    let outer: usize = src.shape()[..axis].iter().product();
    let inner: usize = src.shape()[axis + 1..].iter().product();
    let dst_n = dst.shape()[axis];
    for o in 0..outer {
        for j in 0..n {
            let s = (o * n + j) * inner;
            let d = (o * dst_n + offset + j) * inner;
            dst.data_mut()[d..d + inner].copy_from_slice(&src.data()[s..s + inner]);
        }
    }
}

/// Copies the block at `offset` along `axis` of `src` into `dst` (dst
/// smaller on axis).
fn extract_block(dst: &mut Tensor, src: &Tensor, axis: usize, offset: usize) {
    let n = dst.shape()[axis];
    let outer: usize = dst.shape()[..axis].iter().product();
    let inner: usize = dst.shape()[axis + 1..].iter().product();
    let src_n = src.shape()[axis];
    for o in 0..outer {
        for j in 0..n {
            let d = (o * n + j) * inner;
            let s = (o * src_n + offset + j) * inner;
            dst.data_mut()[d..d + inner].copy_from_slice(&src.data()[s..s + inner]);
        }
    }
}

fn permute_tensor(t: &Tensor, perm: &[usize]) -> Tensor {
    let in_shape = t.shape();
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let in_strides = strides_of(in_shape);
    let mut out = Tensor::zeros(&out_shape);
    let rank = perm.len();
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    for slot in out.data_mut().iter_mut() {
        *slot = t.data()[src];
        for d in (0..rank).rev() {
            idx[d] += 1;
            src += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
            src -= src_strides[d] * out_shape[d];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_forward_backward() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_vec(vec![-1.0, 2.0]), true);
        let y = t.relu(x);
        assert_eq!(t.value(y).data(), &[0.0, 2.0]);
        let loss = t.sum_all(y);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn matmul_hand_oracle() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]), false);
        let b = t.leaf(Tensor::new(vec![3, 2], vec![7., 8., 9., 10., 11., 12.]), false);
        let c = t.matmul(a, b).unwrap();
        // [1 2 3; 4 5 6] x [7 8; 9 10; 11 12] = [58 64; 139 154]
        assert_eq!(t.value(c).data(), &[58., 64., 139., 154.]);
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_vec(vec![1., 2., 3.]), true);
        let loss = t.sum_all(x);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[1., 1., 1.]);
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_vec(vec![1., 2.]), true);
        let sq = t.mul(x, x).unwrap();
        let loss = t.sum_all(sq);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[2., 4.]);
    }

    #[test]
    fn backward_twice_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(1.0), true);
        let loss = t.scale(x, 2.0);
        t.backward(loss).unwrap();
        assert!(matches!(t.backward(loss), Err(Error::BackwardTwice)));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_vec(vec![1., 2.]), true);
        assert!(matches!(t.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn identity_conv_returns_input() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(vec![1, 5], vec![1., 2., 3., 4., 5.]), false);
        let w = t.leaf(Tensor::new(vec![1, 1, 1], vec![1.0]), false);
        let y = t.conv1d(x, w, None, ConvSpec::plain(1)).unwrap();
        assert_eq!(t.value(y).data(), &[1., 2., 3., 4., 5.]);
    }

    #[test]
    fn chunk_unchunk_shapes() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(vec![1, 7], vec![1., 2., 3., 4., 5., 6., 7.]), false);
        let ch = t.chunk(x, 4, 2).unwrap();
        // S = ceil((7-4)/2)+1 = 3
        assert_eq!(t.shape(ch), &[1, 4, 3]);
        let back = t.unchunk(ch, 2, 7).unwrap();
        // interior positions are covered twice
        let v = t.value(back).data();
        assert_eq!(v[0], 1.0);
        assert_eq!(v[2], 2.0 * 3.0);
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::new(vec![2, 2], vec![1., 2., 3., 4.]), false);
        let b = t.leaf(Tensor::new(vec![2, 1], vec![9., 10.]), false);
        let c = t.concat(&[a, b], 1).unwrap();
        assert_eq!(t.value(c).data(), &[1., 2., 9., 3., 4., 10.]);
        let s = t.slice(c, 1, 2, 1).unwrap();
        assert_eq!(t.value(s).data(), &[9., 10.]);
    }

    #[test]
    fn chunk_count_at_full_scale() {
        // T=3999 frames, chunk 30, hop 15: ceil((3999-30)/15)+1 = 266
        let mut t = Tape::new();
        let x = t.leaf(Tensor::zeros(&[1, 3999]), false);
        let ch = t.chunk(x, 30, 15).unwrap();
        assert_eq!(t.shape(ch), &[1, 30, 266]);
    }

    #[test]
    fn cumsum_values() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::new(vec![1, 4], vec![1., 2., 3., 4.]), false);
        let c = t.cumsum(x, 1).unwrap();
        assert_eq!(t.value(c).data(), &[1., 3., 6., 10.]);
    }

    #[test]
    fn shape_mismatch_names_op() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::zeros(&[2, 3]), false);
        let b = t.leaf(Tensor::zeros(&[2, 2]), false);
        let err = t.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
    }
}
