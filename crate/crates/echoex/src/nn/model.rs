//! The full extraction pipeline: learned encoders, the auxiliary network
//! producing reference embeddings, embedding fusion by element-wise
//! multiplication (time-invariant or time-varying), the extraction stacks,
//! mask and decoder.

use crate::error::{Error, Result};
use crate::signal::Waveform;
use crate::tensor::{ConvSpec, Tape, Tensor, Var};

use super::config::{FusionMode, ModelConfig};
use super::params::{BoundParams, ModelParams};
use super::stacks::stack_forward;

/// Which of the two non-weight-sharing encoders to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderSide {
    Aux,
    Ext,
}

/// Configuration plus parameters; forward passes borrow both.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

/// Tape handles produced by a full forward pass.
pub struct ForwardOutput {
    /// Estimated target waveform `(1, len)`.
    pub estimate: Var,
    /// Non-negative mask `(N, T)`.
    pub mask: Var,
    /// Reference embeddings `(N, T_ref)`.
    pub embedding: Var,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Model {
        Model { config, params: ModelParams::init(&config, seed) }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        self.params.bind(tape, trainable)
    }

    /// Learned analysis transform: raw waveform to `(N, T)` latent.
    ///
    /// The signal is right-padded to the frame grid; a ReLU follows the
    /// strided convolution.
    pub fn encode(
        &self,
        tape: &mut Tape,
        bp: &BoundParams,
        side: EncoderSide,
        wave: &Waveform,
    ) -> Result<Var> {
        let enc = &self.config.encoder;
        let t = self.config.frames_for(wave.len());
        let padded = (t - 1) * enc.stride + enc.window;
        let mut samples = wave.samples.clone();
        samples.resize(padded, 0.0);
        let x = tape.constant(Tensor::new(vec![1, padded], samples));
        let name = match side {
            EncoderSide::Aux => "enc_aux",
            EncoderSide::Ext => "enc_ext",
        };
        let y = tape.conv1d(
            x,
            bp.var(&format!("{name}.w")),
            Some(bp.var(&format!("{name}.b"))),
            ConvSpec::plain(enc.stride),
        )?;
        Ok(tape.relu(y))
    }

    /// Auxiliary network: reference latent to the embedding matrix
    /// `(N, T_ref)`.
    pub fn aux_forward(&self, tape: &mut Tape, bp: &BoundParams, a_latent: Var) -> Result<Var> {
        stack_forward(tape, bp, "aux", a_latent, &self.config)
    }

    /// Extraction network: mixture latent plus embeddings to
    /// `(mask, masked latent)`.
    pub fn extract_forward(
        &self,
        tape: &mut Tape,
        bp: &BoundParams,
        y_latent: Var,
        embedding: Var,
    ) -> Result<(Var, Var)> {
        let h = stack_forward(tape, bp, "ext1", y_latent, &self.config)?;
        let fused = fuse(tape, h, embedding, self.config.fusion)?;
        let h = stack_forward(tape, bp, "ext2", fused, &self.config)?;
        let mask = tape.relu(h);
        let masked = tape.mul(y_latent, mask)?;
        Ok((mask, masked))
    }

    /// Synthesis transform back to a waveform trimmed to `out_len` samples.
    pub fn decode(
        &self,
        tape: &mut Tape,
        bp: &BoundParams,
        latent: Var,
        out_len: usize,
    ) -> Result<Var> {
        let y = tape.conv_transpose1d(
            latent,
            bp.var("dec.w"),
            Some(bp.var("dec.b")),
            self.config.encoder.stride,
        )?;
        tape.slice(y, 1, 0, out_len)
    }

    /// Full pipeline on one mixture/reference pair.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bp: &BoundParams,
        mixture: &Waveform,
        reference: &Waveform,
    ) -> Result<ForwardOutput> {
        let y_latent = self.encode(tape, bp, EncoderSide::Ext, mixture)?;
        let a_latent = self.encode(tape, bp, EncoderSide::Aux, reference)?;
        let embedding = self.aux_forward(tape, bp, a_latent)?;

        let fused_emb = match self.config.fusion {
            FusionMode::Ti => average_embeddings(tape, embedding)?,
            FusionMode::Tv => {
                let t_mix = tape.shape(y_latent)[1];
                match_embedding_frames(tape, embedding, t_mix)?
            }
        };
        let (mask, masked) = self.extract_forward(tape, bp, y_latent, fused_emb)?;
        let estimate = self.decode(tape, bp, masked, mixture.len())?;
        Ok(ForwardOutput { estimate, mask, embedding })
    }

    /// Convenience inference: runs a throwaway tape and extracts values.
    pub fn infer(&self, mixture: &Waveform, reference: &Waveform) -> Result<InferenceResult> {
        let mut tape = Tape::new();
        let bp = self.bind(&mut tape, false);
        let out = self.forward(&mut tape, &bp, mixture, reference)?;
        let estimate =
            Waveform::new(tape.value(out.estimate).data().to_vec(), mixture.sample_rate);
        Ok(InferenceResult {
            estimate,
            embedding: tape.value(out.embedding).clone(),
            mask: tape.value(out.mask).clone(),
        })
    }
}

/// Plain-value outputs of [`Model::infer`].
pub struct InferenceResult {
    pub estimate: Waveform,
    pub embedding: Tensor,
    pub mask: Tensor,
}

/// Mean of the embedding matrix over time: `(N, T) -> (N, 1)`.
///
/// Computed about the first frame, `e_1 + mean(E - e_1)`, so that
/// constant-column embeddings average to the column bit-exactly; a plain
/// running sum would round.
pub fn average_embeddings(tape: &mut Tape, embedding: Var) -> Result<Var> {
    let first = tape.slice(embedding, 1, 0, 1)?;
    let centered = tape.sub(embedding, first)?;
    let mean = tape.mean_axis(centered, 1)?;
    tape.add(first, mean)
}

/// Element-wise multiplicative fusion of a latent `(C, T)` with an
/// embedding.
///
/// Time-invariant mode broadcasts a `(C, 1)` vector over every frame;
/// time-varying mode multiplies frame-by-frame with a `(C, T)` matrix.
pub fn fuse(tape: &mut Tape, latent: Var, embedding: Var, mode: FusionMode) -> Result<Var> {
    let ls = tape.shape(latent).to_vec();
    let es = tape.shape(embedding).to_vec();
    let ok = match mode {
        FusionMode::Ti => es == [ls[0], 1] || es == [ls[0]],
        FusionMode::Tv => es == ls,
    };
    if !ok {
        return Err(Error::ShapeMismatch {
            op: "fuse",
            details: format!("{mode:?}: latent {ls:?}, embedding {es:?}"),
        });
    }
    let embedding =
        if es.len() == 1 { tape.reshape(embedding, &[es[0], 1])? } else { embedding };
    tape.mul(latent, embedding)
}

/// Truncates or right zero-pads embeddings to the mixture frame count.
fn match_embedding_frames(tape: &mut Tape, embedding: Var, t_mix: usize) -> Result<Var> {
    let shape = tape.shape(embedding).to_vec();
    let t_ref = shape[1];
    if t_ref == t_mix {
        return Ok(embedding);
    }
    log::warn!(
        "time-varying fusion with mismatched frame counts: reference {t_ref}, mixture {t_mix}"
    );
    if t_ref > t_mix {
        tape.slice(embedding, 1, 0, t_mix)
    } else {
        let pad = tape.constant(Tensor::zeros(&[shape[0], t_mix - t_ref]));
        tape.concat(&[embedding, pad], 1)
    }
}
