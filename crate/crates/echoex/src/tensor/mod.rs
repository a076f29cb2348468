//! Minimal dense-tensor engine with reverse-mode differentiation.
//!
//! Values are double-precision, row-major and at most rank 3. A [`Tape`]
//! records primitive ops eagerly; [`Tape::backward`] walks the record in
//! reverse exactly once. Parameters enter a tape as leaves and read their
//! gradients back after the pass.

mod conv;
mod gradcheck;
mod lstm;
mod tape;

pub use conv::ConvSpec;
pub use gradcheck::{grad_check, grad_check_multi};
pub use lstm::{lstm_cell, LstmParams};
pub use tape::{Tape, Var};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major tensor of `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match {} values",
            data.len()
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Tensor { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor { shape: vec![1], data: vec![value] }
    }

    pub fn from_vec(data: Vec<f64>) -> Tensor {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on shape {:?}", self.shape);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Tensor {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape;
        self
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

/// Row-major strides of a shape.
pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Result shape of broadcasting `a` against `b` (right-aligned; a size-1
/// axis repeats).
pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return Err(Error::ShapeMismatch { op, details: format!("{a:?} vs {b:?}") });
        };
    }
    Ok(out)
}

/// Strides for reading a tensor of `shape` as if it had `out_shape`
/// (stride 0 along broadcast axes).
pub(crate) fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let strides = strides_of(shape);
    let offset = out_shape.len() - shape.len();
    let mut out = vec![0; out_shape.len()];
    for i in 0..shape.len() {
        out[offset + i] = if shape[i] == 1 { 0 } else { strides[i] };
    }
    out
}

/// Elementwise combine with broadcasting.
pub(crate) fn broadcast_zip(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape == b.shape {
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor { shape: a.shape.clone(), data });
    }
    let out_shape = broadcast_shape(op, &a.shape, &b.shape)?;
    let sa = broadcast_strides(&a.shape, &out_shape);
    let sb = broadcast_strides(&b.shape, &out_shape);
    let numel: usize = out_shape.iter().product();
    let mut data = vec![0.0; numel];
    let mut idx = vec![0usize; out_shape.len()];
    let (mut oa, mut ob) = (0usize, 0usize);
    for slot in data.iter_mut() {
        *slot = f(a.data[oa], b.data[ob]);
        // advance the multi-index odometer
        for d in (0..out_shape.len()).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
            oa -= sa[d] * out_shape[d];
            ob -= sb[d] * out_shape[d];
        }
    }
    Ok(Tensor { shape: out_shape, data })
}

/// Sum-reduces `grad` (shaped like the broadcast output) back to `shape`.
pub(crate) fn reduce_to_shape(grad: &Tensor, shape: &[usize]) -> Tensor {
    if grad.shape() == shape {
        return grad.clone();
    }
    let out_rank = grad.rank();
    let offset = out_rank - shape.len();
    let target_strides = strides_of(shape);
    let mut out = Tensor::zeros(shape);
    let mut idx = vec![0usize; out_rank];
    let mut to = 0usize;
    // stride-0 axes of the target receive the sum over that axis
    let eff: Vec<usize> = (0..out_rank)
        .map(|d| {
            if d < offset || shape[d - offset] == 1 {
                0
            } else {
                target_strides[d - offset]
            }
        })
        .collect();
    for &g in grad.data.iter() {
        out.data[to] += g;
        for d in (0..out_rank).rev() {
            idx[d] += 1;
            to += eff[d];
            if idx[d] < grad.shape[d] {
                break;
            }
            idx[d] = 0;
            to -= eff[d] * grad.shape[d];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_channel_vector() {
        let a = Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]);
        let b = Tensor::new(vec![2, 1], vec![10., 100.]);
        let out = broadcast_zip("mul", &a, &b, |x, y| x * y).unwrap();
        assert_eq!(out.shape(), &[2, 3]);
        assert_eq!(out.data(), &[10., 20., 30., 400., 500., 600.]);
    }

    #[test]
    fn broadcast_rank_promotion() {
        let a = Tensor::new(vec![2, 2], vec![1., 2., 3., 4.]);
        let s = Tensor::scalar(2.0);
        let out = broadcast_zip("mul", &a, &s, |x, y| x * y).unwrap();
        assert_eq!(out.data(), &[2., 4., 6., 8.]);
    }

    #[test]
    fn broadcast_shape_mismatch_errors() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 3]);
        assert!(broadcast_zip("add", &a, &b, |x, y| x + y).is_err());
    }

    #[test]
    fn reduce_sums_broadcast_axes() {
        let g = Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]);
        let r = reduce_to_shape(&g, &[2, 1]);
        assert_eq!(r.data(), &[6., 15.]);
        let r2 = reduce_to_shape(&g, &[1]);
        assert_eq!(r2.data(), &[21.]);
    }

    #[test]
    fn tensor_json_dump_format() {
        let t = Tensor::new(vec![2, 2], vec![1., 2., 3., 4.]);
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(s, r#"{"shape":[2,2],"data":[1.0,2.0,3.0,4.0]}"#);
        let back: Tensor = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
    }
}
