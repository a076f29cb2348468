//! 1-D convolution kernels (grouped, dilated, explicit padding) and their
//! adjoints.

use crate::error::{Error, Result};

use super::Tensor;

/// Geometry of a [`conv1d`](super::Tape::conv1d) application.
///
/// Padding is explicit left/right so causal stacks can pad left only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub dilation: usize,
    pub groups: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl ConvSpec {
    pub fn plain(stride: usize) -> ConvSpec {
        ConvSpec { stride, dilation: 1, groups: 1, pad_left: 0, pad_right: 0 }
    }

    pub fn output_len(&self, input_len: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input_len + self.pad_left + self.pad_right;
        if padded < span {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }
}

/// `x (C_in, T) * w (C_out, C_in/groups, K) [+ b (C_out)] -> (C_out, T_out)`.
pub(crate) fn conv1d_forward(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    spec: &ConvSpec,
) -> Result<Tensor> {
    let err = |details: String| Error::ShapeMismatch { op: "conv1d", details };
    if x.rank() != 2 || w.rank() != 3 {
        return Err(err(format!("x {:?}, w {:?}", x.shape(), w.shape())));
    }
    let (c_in, t_in) = (x.shape()[0], x.shape()[1]);
    let (c_out, c_in_g, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    if spec.groups == 0
        || c_in % spec.groups != 0
        || c_out % spec.groups != 0
        || c_in_g != c_in / spec.groups
    {
        return Err(err(format!(
            "groups {} with x {:?}, w {:?}",
            spec.groups,
            x.shape(),
            w.shape()
        )));
    }
    if let Some(b) = b {
        if b.shape() != [c_out] {
            return Err(err(format!("bias {:?} for {c_out} channels", b.shape())));
        }
    }
    let t_out = spec
        .output_len(t_in, k)
        .ok_or_else(|| err(format!("input {t_in} too short for kernel {k}")))?;

    let mut out = Tensor::zeros(&[c_out, t_out]);
    let out_per_group = c_out / spec.groups;
    for oc in 0..c_out {
        let g = oc / out_per_group;
        let bias = b.map_or(0.0, |b| b.data()[oc]);
        let out_row = &mut out.data_mut()[oc * t_out..(oc + 1) * t_out];
        out_row.fill(bias);
        for icg in 0..c_in_g {
            let ic = g * c_in_g + icg;
            let x_row = &x.data()[ic * t_in..(ic + 1) * t_in];
            let w_row = &w.data()[(oc * c_in_g + icg) * k..(oc * c_in_g + icg + 1) * k];
            for (to, o) in out_row.iter_mut().enumerate() {
                let base = to * spec.stride;
                let mut acc = 0.0;
                for (kk, &wv) in w_row.iter().enumerate() {
                    let ti = base + kk * spec.dilation;
                    // position in the padded signal; skip the pad region
                    if ti >= spec.pad_left && ti - spec.pad_left < t_in {
                        acc += x_row[ti - spec.pad_left] * wv;
                    }
                }
                *o += acc;
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv1d_forward`] w.r.t. input, weights and bias.
pub(crate) fn conv1d_backward(
    x: &Tensor,
    w: &Tensor,
    gout: &Tensor,
    spec: &ConvSpec,
) -> (Tensor, Tensor, Tensor) {
    let (c_in, t_in) = (x.shape()[0], x.shape()[1]);
    let (c_out, c_in_g, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let t_out = gout.shape()[1];
    let mut gx = Tensor::zeros(&[c_in, t_in]);
    let mut gw = Tensor::zeros(&[c_out, c_in_g, k]);
    let mut gb = Tensor::zeros(&[c_out]);

    let out_per_group = c_out / spec.groups;
    for oc in 0..c_out {
        let g = oc / out_per_group;
        let g_row = &gout.data()[oc * t_out..(oc + 1) * t_out];
        gb.data_mut()[oc] = g_row.iter().sum();
        for icg in 0..c_in_g {
            let ic = g * c_in_g + icg;
            let x_row = &x.data()[ic * t_in..(ic + 1) * t_in];
            let w_off = (oc * c_in_g + icg) * k;
            for (to, &gv) in g_row.iter().enumerate() {
                if gv == 0.0 {
                    continue;
                }
                let base = to * spec.stride;
                for kk in 0..k {
                    let ti = base + kk * spec.dilation;
                    if ti >= spec.pad_left && ti - spec.pad_left < t_in {
                        let xi = ti - spec.pad_left;
                        gx.data_mut()[ic * t_in + xi] += gv * w.data()[w_off + kk];
                        gw.data_mut()[w_off + kk] += gv * x_row[xi];
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

/// `x (C_in, T) * w (C_in, C_out, K) [+ b (C_out)] -> (C_out, (T-1)*stride + K)`.
pub(crate) fn conv_transpose1d_forward(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    stride: usize,
) -> Result<Tensor> {
    let err = |details: String| Error::ShapeMismatch { op: "conv_transpose1d", details };
    if x.rank() != 2 || w.rank() != 3 || x.shape()[0] != w.shape()[0] {
        return Err(err(format!("x {:?}, w {:?}", x.shape(), w.shape())));
    }
    let (c_in, t_in) = (x.shape()[0], x.shape()[1]);
    let (c_out, k) = (w.shape()[1], w.shape()[2]);
    if let Some(b) = b {
        if b.shape() != [c_out] {
            return Err(err(format!("bias {:?} for {c_out} channels", b.shape())));
        }
    }
    let t_out = (t_in - 1) * stride + k;
    let mut out = Tensor::zeros(&[c_out, t_out]);
    for oc in 0..c_out {
        let bias = b.map_or(0.0, |b| b.data()[oc]);
        out.data_mut()[oc * t_out..(oc + 1) * t_out].fill(bias);
    }
    for ic in 0..c_in {
        let x_row = &x.data()[ic * t_in..(ic + 1) * t_in];
        for oc in 0..c_out {
            let w_row = &w.data()[(ic * c_out + oc) * k..(ic * c_out + oc + 1) * k];
            let out_row = &mut out.data_mut()[oc * t_out..(oc + 1) * t_out];
            for (t, &xv) in x_row.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let base = t * stride;
                for (kk, &wv) in w_row.iter().enumerate() {
                    out_row[base + kk] += xv * wv;
                }
            }
        }
    }
    Ok(out)
}

pub(crate) fn conv_transpose1d_backward(
    x: &Tensor,
    w: &Tensor,
    gout: &Tensor,
    stride: usize,
) -> (Tensor, Tensor, Tensor) {
    let (c_in, t_in) = (x.shape()[0], x.shape()[1]);
    let (c_out, k) = (w.shape()[1], w.shape()[2]);
    let t_out = gout.shape()[1];
    let mut gx = Tensor::zeros(&[c_in, t_in]);
    let mut gw = Tensor::zeros(&[c_in, c_out, k]);
    let mut gb = Tensor::zeros(&[c_out]);

    for oc in 0..c_out {
        gb.data_mut()[oc] = gout.data()[oc * t_out..(oc + 1) * t_out].iter().sum();
    }
    for ic in 0..c_in {
        let x_row = &x.data()[ic * t_in..(ic + 1) * t_in];
        for oc in 0..c_out {
            let g_row = &gout.data()[oc * t_out..(oc + 1) * t_out];
            let w_off = (ic * c_out + oc) * k;
            for (t, &xv) in x_row.iter().enumerate() {
                let base = t * stride;
                let mut acc = 0.0;
                for kk in 0..k {
                    acc += g_row[base + kk] * w.data()[w_off + kk];
                    gw.data_mut()[w_off + kk] += g_row[base + kk] * xv;
                }
                gx.data_mut()[ic * t_in + t] += acc;
            }
        }
    }
    (gx, gw, gb)
}
