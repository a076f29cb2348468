//! Global and cumulative layer normalization, built from tape primitives
//! so gradients come out of the generic backward pass.

use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};

const NORM_EPS: f64 = 1e-8;

/// Global layer norm: zero-mean/unit-variance over every element, then a
/// per-channel affine. `gain`/`bias` are `(C, 1)`; rank-3 inputs get them
/// reshaped to `(C, 1, 1)`.
pub fn gln(tape: &mut Tape, x: Var, gain: Var, bias: Var) -> Result<Var> {
    let (gain, bias) = reshape_affine(tape, x, gain, bias)?;
    let m = tape.mean_all(x);
    let d = tape.sub(x, m)?;
    let d2 = tape.mul(d, d)?;
    let v = tape.mean_all(d2);
    let v_eps = tape.add_scalar(v, NORM_EPS);
    let denom = tape.sqrt(v_eps);
    let inv = tape.recip(denom);
    let xhat = tape.mul(d, inv)?;
    let scaled = tape.mul(xhat, gain)?;
    tape.add(scaled, bias)
}

/// Cumulative layer norm over `(C, T)`: frame `t` is normalized with
/// statistics over channels x frames `0..=t`.
pub fn cln2d(tape: &mut Tape, x: Var, gain: Var, bias: Var) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let (c, t) = (shape[0], shape[1]);
    let inv_counts = Tensor::new(
        vec![1, t],
        (1..=t).map(|k| 1.0 / (c * k) as f64).collect(),
    );
    cumulative_norm(tape, x, gain, bias, 1, inv_counts)
}

/// Cumulative layer norm over chunked `(C, K, S)`: chunk `s` is normalized
/// with statistics over channels x chunk frames x chunks `0..=s`, keeping
/// the inter-chunk direction causal.
pub fn cln3d(tape: &mut Tape, x: Var, gain: Var, bias: Var) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let (c, k, s) = (shape[0], shape[1], shape[2]);
    let inv_counts = Tensor::new(
        vec![1, 1, s],
        (1..=s).map(|i| 1.0 / (c * k * i) as f64).collect(),
    );
    cumulative_norm(tape, x, gain, bias, 2, inv_counts)
}

fn cumulative_norm(
    tape: &mut Tape,
    x: Var,
    gain: Var,
    bias: Var,
    time_axis: usize,
    inv_counts: Tensor,
) -> Result<Var> {
    let (gain, bias) = reshape_affine(tape, x, gain, bias)?;
    let inv = tape.constant(inv_counts);

    // running first and second moments along the time axis
    let mut s1 = x;
    let mut s2 = tape.mul(x, x)?;
    for axis in 0..tape.shape(x).len() {
        if axis != time_axis {
            s1 = tape.sum_axis(s1, axis)?;
            s2 = tape.sum_axis(s2, axis)?;
        }
    }
    let s1 = tape.cumsum(s1, time_axis)?;
    let s2 = tape.cumsum(s2, time_axis)?;

    let mean = tape.mul(s1, inv)?;
    let ex2 = tape.mul(s2, inv)?;
    let mean2 = tape.mul(mean, mean)?;
    let var = tape.sub(ex2, mean2)?;
    let var_eps = tape.add_scalar(var, NORM_EPS);
    let denom = tape.sqrt(var_eps);
    let invd = tape.recip(denom);

    let centered = tape.sub(x, mean)?;
    let xhat = tape.mul(centered, invd)?;
    let scaled = tape.mul(xhat, gain)?;
    tape.add(scaled, bias)
}

fn reshape_affine(tape: &mut Tape, x: Var, gain: Var, bias: Var) -> Result<(Var, Var)> {
    if tape.shape(x).len() == 3 {
        let c = tape.shape(gain)[0];
        let g = tape.reshape(gain, &[c, 1, 1])?;
        let b = tape.reshape(bias, &[c, 1, 1])?;
        Ok((g, b))
    } else {
        Ok((gain, bias))
    }
}
