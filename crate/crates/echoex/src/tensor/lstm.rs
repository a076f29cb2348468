//! Fused LSTM sequence kernel with hand-written backward-through-time.
//!
//! The compositional [`lstm_cell`](crate::tensor::Tape) route (gates built
//! from matmul/sigmoid/tanh primitives) stays available as an independent
//! cross-check; tests verify both routes agree.

use crate::error::{Error, Result};

use super::tape::{matmul_raw, Tape, Var};
use super::Tensor;

/// Parameter bundle for one LSTM direction.
///
/// Gate order is input, forget, cell, output; `w_ih (4H, I)`,
/// `w_hh (4H, H)`, `bias (4H)`.
#[derive(Debug, Clone)]
pub struct LstmParams {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub bias: Tensor,
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> LstmParams {
        LstmParams {
            w_ih: Tensor::zeros(&[4 * hidden, input]),
            w_hh: Tensor::zeros(&[4 * hidden, hidden]),
            bias: Tensor::zeros(&[4 * hidden]),
        }
    }
}

/// Per-step activations saved for backward.
pub(crate) struct LstmSaved {
    /// sigma(i), sigma(f), tanh(g), sigma(o), c, tanh(c) per step, each (B, H).
    pub gates: Vec<[Vec<f64>; 6]>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Forward over the whole sequence; zero initial state.
pub(crate) fn lstm_forward(
    x: &Tensor,
    w_ih: &Tensor,
    w_hh: &Tensor,
    bias: &Tensor,
    reverse: bool,
    save: bool,
) -> Result<(Tensor, Option<LstmSaved>)> {
    let err = |details: String| Error::ShapeMismatch { op: "lstm_seq", details };
    if x.rank() != 3 || w_ih.rank() != 2 || w_hh.rank() != 2 || bias.rank() != 1 {
        return Err(err(format!(
            "x {:?}, w_ih {:?}, w_hh {:?}, bias {:?}",
            x.shape(),
            w_ih.shape(),
            w_hh.shape(),
            bias.shape()
        )));
    }
    let (t_len, batch, input) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let g4 = w_ih.shape()[0];
    let hidden = g4 / 4;
    if !g4.is_multiple_of(4)
        || w_ih.shape()[1] != input
        || w_hh.shape() != [g4, hidden]
        || bias.shape() != [g4]
    {
        return Err(err(format!(
            "x {:?}, w_ih {:?}, w_hh {:?}, bias {:?}",
            x.shape(),
            w_ih.shape(),
            w_hh.shape(),
            bias.shape()
        )));
    }

    // transposed weights so each step is (B,I).(I,4H) + (B,H).(H,4H)
    let w_ih_t = transpose(w_ih.data(), g4, input);
    let w_hh_t = transpose(w_hh.data(), g4, hidden);

    let mut h_out = Tensor::zeros(&[t_len, batch, hidden]);
    let mut h_prev = vec![0.0; batch * hidden];
    let mut c_prev = vec![0.0; batch * hidden];
    let mut saved = save.then(|| LstmSaved { gates: Vec::with_capacity(t_len) });

    let steps: Vec<usize> =
        if reverse { (0..t_len).rev().collect() } else { (0..t_len).collect() };
    for &t in &steps {
        let x_t = &x.data()[t * batch * input..(t + 1) * batch * input];
        let mut gates = matmul_raw(x_t, &w_ih_t, batch, input, g4);
        let rec = matmul_raw(&h_prev, &w_hh_t, batch, hidden, g4);
        for bi in 0..batch {
            let row = &mut gates[bi * g4..(bi + 1) * g4];
            for (gv, (&rv, &bv)) in
                row.iter_mut().zip(rec[bi * g4..(bi + 1) * g4].iter().zip(bias.data()))
            {
                *gv += rv + bv;
            }
        }

        let mut si = vec![0.0; batch * hidden];
        let mut sf = vec![0.0; batch * hidden];
        let mut tg = vec![0.0; batch * hidden];
        let mut so = vec![0.0; batch * hidden];
        let mut c_new = vec![0.0; batch * hidden];
        let mut tc = vec![0.0; batch * hidden];
        for bi in 0..batch {
            for hi in 0..hidden {
                let base = bi * g4;
                let idx = bi * hidden + hi;
                let i_g = sigmoid(gates[base + hi]);
                let f_g = sigmoid(gates[base + hidden + hi]);
                let g_g = gates[base + 2 * hidden + hi].tanh();
                let o_g = sigmoid(gates[base + 3 * hidden + hi]);
                let c = f_g * c_prev[idx] + i_g * g_g;
                let tch = c.tanh();
                si[idx] = i_g;
                sf[idx] = f_g;
                tg[idx] = g_g;
                so[idx] = o_g;
                c_new[idx] = c;
                tc[idx] = tch;
                h_out.data_mut()[t * batch * hidden + idx] = o_g * tch;
            }
        }
        h_prev.copy_from_slice(&h_out.data()[t * batch * hidden..(t + 1) * batch * hidden]);
        c_prev = c_new.clone();
        if let Some(s) = saved.as_mut() {
            s.gates.push([si, sf, tg, so, c_new, tc]);
        }
    }
    Ok((h_out, saved))
}

pub(crate) struct LstmGrads {
    pub gx: Tensor,
    pub gw_ih: Tensor,
    pub gw_hh: Tensor,
    pub gbias: Tensor,
}

pub(crate) fn lstm_backward(
    x: &Tensor,
    w_ih: &Tensor,
    w_hh: &Tensor,
    h_out: &Tensor,
    gout: &Tensor,
    saved: &LstmSaved,
    reverse: bool,
) -> LstmGrads {
    let (t_len, batch, input) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let g4 = w_ih.shape()[0];
    let hidden = g4 / 4;

    let mut gx = Tensor::zeros(&[t_len, batch, input]);
    let mut gw_ih = vec![0.0; g4 * input];
    let mut gw_hh = vec![0.0; g4 * hidden];
    let mut gbias = vec![0.0; g4];

    let mut dh_next = vec![0.0; batch * hidden];
    let mut dc_next = vec![0.0; batch * hidden];

    let steps: Vec<usize> =
        if reverse { (0..t_len).rev().collect() } else { (0..t_len).collect() };
    // walk the recurrence backwards: last processed step first
    for (si_idx, &t) in steps.iter().enumerate().rev() {
        let g = &saved.gates[si_idx];
        let (si, sf, tg, so, c, tc) = (&g[0], &g[1], &g[2], &g[3], &g[4], &g[5]);
        // previous step in processing order
        let prev_t = if si_idx > 0 { Some(steps[si_idx - 1]) } else { None };
        let c_prev: Option<&[f64]> = prev_t.map(|_| saved.gates[si_idx - 1][4].as_slice());
        let h_prev: Option<&[f64]> =
            prev_t.map(|pt| &h_out.data()[pt * batch * hidden..(pt + 1) * batch * hidden]);

        let mut dgates = vec![0.0; batch * g4];
        for bi in 0..batch {
            for hi in 0..hidden {
                let idx = bi * hidden + hi;
                let dh = gout.data()[t * batch * hidden + idx] + dh_next[idx];
                let do_ = dh * tc[idx];
                let mut dc = dh * so[idx] * (1.0 - tc[idx] * tc[idx]) + dc_next[idx];
                let cp = c_prev.map_or(0.0, |cp| cp[idx]);
                let di = dc * tg[idx];
                let df = dc * cp;
                let dg = dc * si[idx];
                dc *= sf[idx];
                dc_next[idx] = dc;
                let base = bi * g4;
                dgates[base + hi] = di * si[idx] * (1.0 - si[idx]);
                dgates[base + hidden + hi] = df * sf[idx] * (1.0 - sf[idx]);
                dgates[base + 2 * hidden + hi] = dg * (1.0 - tg[idx] * tg[idx]);
                dgates[base + 3 * hidden + hi] = do_ * so[idx] * (1.0 - so[idx]);
                let _ = c;
            }
        }

        // dx_t = dG . W_ih ; dh_prev = dG . W_hh
        let dx = matmul_raw(&dgates, w_ih.data(), batch, g4, input);
        gx.data_mut()[t * batch * input..(t + 1) * batch * input].copy_from_slice(&dx);
        dh_next = matmul_raw(&dgates, w_hh.data(), batch, g4, hidden);

        // gW_ih += dG^T . x_t ; gW_hh += dG^T . h_prev ; gbias += sum_B dG
        let x_t = &x.data()[t * batch * input..(t + 1) * batch * input];
        accum_outer(&mut gw_ih, &dgates, x_t, batch, g4, input);
        if let Some(hp) = h_prev {
            accum_outer(&mut gw_hh, &dgates, hp, batch, g4, hidden);
        }
        for bi in 0..batch {
            for gi in 0..g4 {
                gbias[gi] += dgates[bi * g4 + gi];
            }
        }
    }

    LstmGrads {
        gx,
        gw_ih: Tensor::new(vec![g4, input], gw_ih),
        gw_hh: Tensor::new(vec![g4, hidden], gw_hh),
        gbias: Tensor::new(vec![g4], gbias),
    }
}

/// `acc (R, C) += a^T (B, R) outer b (B, C)` accumulated over the batch.
fn accum_outer(acc: &mut [f64], a: &[f64], b: &[f64], batch: usize, r: usize, c: usize) {
    for bi in 0..batch {
        let a_row = &a[bi * r..(bi + 1) * r];
        let b_row = &b[bi * c..(bi + 1) * c];
        for (ri, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out = &mut acc[ri * c..(ri + 1) * c];
            for (o, &bv) in out.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// One LSTM step built from tape primitives: an independent route used to
/// cross-check the fused kernel.
///
/// `x (B, I)`, `h`/`c` `(B, H)`; returns `(h', c')`.
pub fn lstm_cell(
    tape: &mut Tape,
    x: Var,
    h: Var,
    c: Var,
    w_ih: Var,
    w_hh: Var,
    bias: Var,
) -> Result<(Var, Var)> {
    let hidden = tape.shape(h)[1];
    let w_ih_t = tape.transpose(w_ih)?;
    let w_hh_t = tape.transpose(w_hh)?;
    let xg = tape.matmul(x, w_ih_t)?;
    let hg = tape.matmul(h, w_hh_t)?;
    let pre = tape.add(xg, hg)?;
    let pre = tape.add(pre, bias)?;

    let i_pre = tape.slice(pre, 1, 0, hidden)?;
    let f_pre = tape.slice(pre, 1, hidden, hidden)?;
    let g_pre = tape.slice(pre, 1, 2 * hidden, hidden)?;
    let o_pre = tape.slice(pre, 1, 3 * hidden, hidden)?;

    let i_g = tape.sigmoid(i_pre);
    let f_g = tape.sigmoid(f_pre);
    let g_g = tape.tanh(g_pre);
    let o_g = tape.sigmoid(o_pre);

    let fc = tape.mul(f_g, c)?;
    let ig = tape.mul(i_g, g_g)?;
    let c_new = tape.add(fc, ig)?;
    let tc = tape.tanh(c_new);
    let h_new = tape.mul(o_g, tc)?;
    Ok((h_new, c_new))
}
