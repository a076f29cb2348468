//! Architecture configuration and parameter-count arithmetic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Tcn,
    Dprnn,
}

/// How the reference embedding enters the extraction network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// Time-invariant: embeddings averaged to a single vector.
    Ti,
    /// Time-varying: the full per-frame embedding matrix.
    Tv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Analysis window in samples.
    pub window: usize,
    pub stride: usize,
    /// Latent channels N at both encoder outputs.
    pub channels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TcnConfig {
    /// Bottleneck width B.
    pub bottleneck: usize,
    /// Block channel width H.
    pub hidden: usize,
    /// Depthwise kernel P.
    pub kernel: usize,
    /// Blocks per repeat X (dilations 2^0 .. 2^(X-1)).
    pub blocks: usize,
    /// Repeats R.
    pub repeats: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DprnnConfig {
    /// Bottleneck width fed to the dual-path core.
    pub bottleneck: usize,
    /// Chunk length in frames (50% overlap).
    pub chunk: usize,
    /// LSTM hidden units per direction.
    pub hidden: usize,
    /// Dual-path blocks per stack.
    pub blocks: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub fusion: FusionMode,
    pub causal: bool,
    pub encoder: EncoderConfig,
    pub tcn: TcnConfig,
    pub dprnn: DprnnConfig,
    pub sample_rate: u32,
}

impl ModelConfig {
    /// Hyperparameters of the evaluated TCN models: L=32/stride 16/N=256,
    /// B=64, H=96, P=3, X=6, R=2.
    pub fn full_tcn(fusion: FusionMode) -> ModelConfig {
        ModelConfig {
            arch: Arch::Tcn,
            fusion,
            causal: false,
            encoder: EncoderConfig { window: 32, stride: 16, channels: 256 },
            tcn: TcnConfig { bottleneck: 64, hidden: 96, kernel: 3, blocks: 6, repeats: 2 },
            dprnn: DprnnConfig { bottleneck: 64, chunk: 30, hidden: 128, blocks: 2 },
            sample_rate: 16000,
        }
    }

    /// Hyperparameters of the evaluated DPRNN models: bottleneck 64,
    /// chunk 30, bidirectional LSTMs with 128 units per direction, 2 blocks.
    pub fn full_dprnn(fusion: FusionMode, causal: bool) -> ModelConfig {
        ModelConfig {
            arch: Arch::Dprnn,
            causal,
            ..ModelConfig::full_tcn(fusion)
        }
    }

    /// Desk-scale profile: 8 kHz, slim stacks; trains in minutes on a CPU.
    pub fn desk(arch: Arch, fusion: FusionMode) -> ModelConfig {
        ModelConfig {
            arch,
            fusion,
            causal: false,
            encoder: EncoderConfig { window: 32, stride: 16, channels: 64 },
            tcn: TcnConfig { bottleneck: 32, hidden: 48, kernel: 3, blocks: 5, repeats: 1 },
            dprnn: DprnnConfig { bottleneck: 32, chunk: 20, hidden: 32, blocks: 1 },
            sample_rate: 8000,
        }
    }

    /// Smallest useful DPRNN; the acceptance experiments train this.
    pub fn tiny_dprnn(fusion: FusionMode) -> ModelConfig {
        ModelConfig {
            arch: Arch::Dprnn,
            fusion,
            causal: false,
            encoder: EncoderConfig { window: 32, stride: 16, channels: 32 },
            tcn: TcnConfig { bottleneck: 16, hidden: 24, kernel: 3, blocks: 4, repeats: 1 },
            dprnn: DprnnConfig { bottleneck: 16, chunk: 10, hidden: 16, blocks: 1 },
            sample_rate: 8000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.encoder;
        if e.stride == 0 || e.stride > e.window || e.channels == 0 {
            return Err(Error::Config(format!(
                "encoder window {} / stride {} / channels {}",
                e.window, e.stride, e.channels
            )));
        }
        if self.tcn.kernel.is_multiple_of(2) && !self.causal {
            return Err(Error::Config("non-causal TCN needs an odd kernel".into()));
        }
        if self.dprnn.chunk < 2 || !self.dprnn.chunk.is_multiple_of(2) && self.arch == Arch::Dprnn {
            return Err(Error::Config(format!("dprnn chunk {} must be even", self.dprnn.chunk)));
        }
        if self.sample_rate == 0 {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        Ok(())
    }

    /// Latent frame count for an input of `len` samples (after the frame
    /// grid's right zero-padding).
    pub fn frames_for(&self, len: usize) -> usize {
        let (w, h) = (self.encoder.window, self.encoder.stride);
        let len = len.max(w);
        let rem = (len - w) % h;
        let padded = if rem == 0 { len } else { len + h - rem };
        (padded - w) / h + 1
    }

    /// Receptive field of one TCN repeat in frames: `1 + (P-1) * sum 2^x`.
    pub fn tcn_repeat_receptive_field(&self) -> usize {
        let per_block: usize = (0..self.tcn.blocks).map(|x| 1usize << x).sum();
        1 + (self.tcn.kernel - 1) * per_block
    }

    /// Structural lookahead in samples: how far ahead of `t` a perturbation
    /// can still influence the output at `t`, for causal configurations.
    ///
    /// The decoder window always contributes. The causal DPRNN keeps its
    /// bidirectional intra-chunk recurrence, which spreads information to
    /// the start of the surrounding chunk; the signal crosses two chunked
    /// stacks in series (ext-1 then ext-2, or aux then ext-2), so the
    /// chunk lookahead compounds twice.
    pub fn lookahead_samples(&self) -> usize {
        let base = self.encoder.window;
        match self.arch {
            Arch::Tcn => base,
            Arch::Dprnn => base + 2 * (self.dprnn.chunk - 1) * self.encoder.stride,
        }
    }

    /// Total scalar parameter count for this configuration.
    pub fn param_count(&self) -> usize {
        let n = self.encoder.channels;
        let l = self.encoder.window;
        let encoders = 2 * (n * l + n);
        let decoder = n * l + 1;
        encoders + decoder + 3 * self.stack_param_count()
    }

    fn stack_param_count(&self) -> usize {
        let n = self.encoder.channels;
        let core = match self.arch {
            Arch::Tcn => {
                let t = &self.tcn;
                let block = (t.hidden * t.bottleneck + t.hidden)    // in 1x1
                    + 1                                             // PReLU
                    + 2 * t.hidden                                  // norm
                    + (t.hidden * t.kernel + t.hidden)              // depthwise
                    + 1
                    + 2 * t.hidden
                    + (t.bottleneck * t.hidden + t.bottleneck); // out 1x1
                t.repeats * t.blocks * block
            }
            Arch::Dprnn => {
                let d = &self.dprnn;
                let b = d.bottleneck;
                let h = d.hidden;
                let lstm_dir = 4 * h * (b + h) + 4 * h;
                let intra = 2 * lstm_dir + (b * 2 * h + b) + 2 * b;
                let inter = if self.causal {
                    lstm_dir + (b * h + b) + 2 * b
                } else {
                    2 * lstm_dir + (b * 2 * h + b) + 2 * b
                };
                d.blocks * (intra + inter)
            }
        };
        let bottleneck_width = match self.arch {
            Arch::Tcn => self.tcn.bottleneck,
            Arch::Dprnn => self.dprnn.bottleneck,
        };
        2 * n                                        // input norm
            + (bottleneck_width * n + bottleneck_width) // bottleneck 1x1
            + core
            + 1                                      // head PReLU
            + (n * bottleneck_width + n) // output 1x1 to N
    }
}
