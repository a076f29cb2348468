//! The two masknet stack architectures. Each DNN block of the pipeline
//! (aux, ext-1, ext-2) is one full stack: input norm, 1x1 bottleneck, the
//! architecture core, PReLU and a 1x1 projection back to the encoder
//! width.

use crate::error::Result;
use crate::tensor::{ConvSpec, Tape, Var};

use super::config::{Arch, ModelConfig};
use super::norm::{cln2d, cln3d, gln};
use super::params::BoundParams;

/// `W (O,I) . x (I,T) + b (O,1)` - a pointwise convolution.
fn linear_1x1(tape: &mut Tape, bp: &BoundParams, name: &str, x: Var) -> Result<Var> {
    let y = tape.matmul(bp.var(&format!("{name}.w")), x)?;
    tape.add(y, bp.var(&format!("{name}.b")))
}

fn norm(tape: &mut Tape, bp: &BoundParams, name: &str, x: Var, causal: bool) -> Result<Var> {
    let gain = bp.var(&format!("{name}.gain"));
    let bias = bp.var(&format!("{name}.bias"));
    if !causal {
        gln(tape, x, gain, bias)
    } else if tape.shape(x).len() == 3 {
        cln3d(tape, x, gain, bias)
    } else {
        cln2d(tape, x, gain, bias)
    }
}

/// Runs the stack named by `prefix` on a latent `(N, T)`, returning `(N, T)`.
pub fn stack_forward(
    tape: &mut Tape,
    bp: &BoundParams,
    prefix: &str,
    x: Var,
    cfg: &ModelConfig,
) -> Result<Var> {
    let h = match cfg.arch {
        Arch::Tcn => tcn_core(tape, bp, prefix, x, cfg)?,
        Arch::Dprnn => dprnn_core(tape, bp, prefix, x, cfg)?,
    };
    let h = tape.prelu(h, bp.var(&format!("{prefix}.head.prelu")))?;
    linear_1x1(tape, bp, &format!("{prefix}.out"), h)
}

fn tcn_core(
    tape: &mut Tape,
    bp: &BoundParams,
    prefix: &str,
    x: Var,
    cfg: &ModelConfig,
) -> Result<Var> {
    let t = &cfg.tcn;
    let causal = cfg.causal;
    let h = norm(tape, bp, &format!("{prefix}.norm_in"), x, causal)?;
    let mut cur = linear_1x1(tape, bp, &format!("{prefix}.bottleneck"), h)?;

    for r in 0..t.repeats {
        for xb in 0..t.blocks {
            let b = format!("{prefix}.block{r}_{xb}");
            let dilation = 1usize << xb;
            let span = (t.kernel - 1) * dilation;
            let spec = if causal {
                ConvSpec { stride: 1, dilation, groups: t.hidden, pad_left: span, pad_right: 0 }
            } else {
                ConvSpec {
                    stride: 1,
                    dilation,
                    groups: t.hidden,
                    pad_left: span / 2,
                    pad_right: span / 2,
                }
            };
            let h = linear_1x1(tape, bp, &format!("{b}.in"), cur)?;
            let h = tape.prelu(h, bp.var(&format!("{b}.prelu1")))?;
            let h = norm(tape, bp, &format!("{b}.norm1"), h, causal)?;
            let h = tape.conv1d(h, bp.var(&format!("{b}.dw.w")), Some(bp.var(&format!("{b}.dw.b"))), spec)?;
            let h = tape.prelu(h, bp.var(&format!("{b}.prelu2")))?;
            let h = norm(tape, bp, &format!("{b}.norm2"), h, causal)?;
            let h = linear_1x1(tape, bp, &format!("{b}.out"), h)?;
            cur = tape.add(cur, h)?;
        }
    }
    Ok(cur)
}

fn dprnn_core(
    tape: &mut Tape,
    bp: &BoundParams,
    prefix: &str,
    x: Var,
    cfg: &ModelConfig,
) -> Result<Var> {
    let d = &cfg.dprnn;
    let causal = cfg.causal;
    let frames = tape.shape(x)[1];
    let hop = d.chunk / 2;

    let h = norm(tape, bp, &format!("{prefix}.norm_in"), x, causal)?;
    let h = linear_1x1(tape, bp, &format!("{prefix}.bottleneck"), h)?;
    let mut cur = tape.chunk(h, d.chunk, hop)?; // (B, K, S)

    for i in 0..d.blocks {
        let b = format!("{prefix}.block{i}");

        // intra-chunk: bidirectional over the chunk axis, chunks batched
        let seq = tape.permute(cur, &[1, 2, 0])?; // (K, S, B)
        let fwd = lstm_dir(tape, bp, &format!("{b}.intra.fwd"), seq, false)?;
        let bwd = lstm_dir(tape, bp, &format!("{b}.intra.bwd"), seq, true)?;
        let both = tape.concat(&[fwd, bwd], 2)?; // (K, S, 2H)
        let proj = project_back(tape, bp, &format!("{b}.intra.proj"), both)?;
        // (B, K*S) rows follow (k, s) order
        let shape = tape.shape(cur).to_vec();
        let proj = tape.reshape(proj, &[shape[0], shape[1], shape[2]])?;
        let normed = norm(tape, bp, &format!("{b}.intra.norm"), proj, causal)?;
        cur = tape.add(cur, normed)?;

        // inter-chunk: over the chunk index, positions batched;
        // unidirectional in the causal variant
        let seq = tape.permute(cur, &[2, 1, 0])?; // (S, K, B)
        let fwd = lstm_dir(tape, bp, &format!("{b}.inter.fwd"), seq, false)?;
        let h = if causal {
            fwd
        } else {
            let bwd = lstm_dir(tape, bp, &format!("{b}.inter.bwd"), seq, true)?;
            tape.concat(&[fwd, bwd], 2)?
        };
        let proj = project_back(tape, bp, &format!("{b}.inter.proj"), h)?;
        // (B, S*K) -> (B, S, K) -> (B, K, S)
        let proj = tape.reshape(proj, &[shape[0], shape[2], shape[1]])?;
        let proj = tape.permute(proj, &[0, 2, 1])?;
        let normed = norm(tape, bp, &format!("{b}.inter.norm"), proj, causal)?;
        cur = tape.add(cur, normed)?;
    }

    tape.unchunk(cur, hop, frames)
}

fn lstm_dir(tape: &mut Tape, bp: &BoundParams, name: &str, x: Var, reverse: bool) -> Result<Var> {
    tape.lstm_seq(
        x,
        bp.var(&format!("{name}.w_ih")),
        bp.var(&format!("{name}.w_hh")),
        bp.var(&format!("{name}.bias")),
        reverse,
    )
}

/// Applies a `(B_out, H)` linear to a `(T, B, H)` sequence, returning
/// `(B_out, T*B)` for the caller to reshape.
fn project_back(tape: &mut Tape, bp: &BoundParams, name: &str, x: Var) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    let flat = tape.reshape(x, &[s[0] * s[1], s[2]])?;
    let flat_t = tape.transpose(flat)?;
    linear_1x1(tape, bp, name, flat_t)
}
