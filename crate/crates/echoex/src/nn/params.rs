//! Named parameter registry, deterministic initialization and tape binding.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::seeding::stream_rng;
use crate::tensor::{Tape, Tensor, Var};

use super::config::{Arch, ModelConfig};

/// Ordered `name -> tensor` registry. Order is creation order and is the
/// canonical layout for checkpoints and optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl ModelParams {
    fn empty() -> ModelParams {
        ModelParams { entries: Vec::new(), index: HashMap::new() }
    }

    fn add(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        assert!(
            self.index.insert(name.clone(), self.entries.len()).is_none(),
            "duplicate parameter {name}"
        );
        self.entries.push((name, tensor));
    }

    pub fn get(&self, name: &str) -> &Tensor {
        let i = *self.index.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        &self.entries[i].1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    /// Total scalar count across all tensors.
    pub fn total_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Registers every tensor as a tape leaf, in registry order.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        let vars = self.entries.iter().map(|(_, t)| tape.leaf(t.clone(), trainable)).collect();
        BoundParams { vars, index: self.index.clone() }
    }

    /// Deterministic initialization for `config`, keyed by `seed`.
    ///
    /// Weights are uniform with the usual 1/sqrt(fan_in) bound; biases are
    /// zero; norm gains are one; PReLU slopes start at 0.25.
    pub fn init(config: &ModelConfig, seed: u64) -> ModelParams {
        let mut rng = stream_rng(seed, 0x9a7a);
        let mut p = ModelParams::empty();
        let n = config.encoder.channels;
        let l = config.encoder.window;

        p.add("enc_ext.w", uniform(&mut rng, &[n, 1, l], l));
        p.add("enc_ext.b", Tensor::zeros(&[n]));
        p.add("enc_aux.w", uniform(&mut rng, &[n, 1, l], l));
        p.add("enc_aux.b", Tensor::zeros(&[n]));

        for prefix in ["aux", "ext1", "ext2"] {
            init_stack(&mut p, config, prefix, &mut rng);
        }

        p.add("dec.w", uniform(&mut rng, &[n, 1, l], n));
        p.add("dec.b", Tensor::zeros(&[1]));
        p
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-bound..bound)).collect())
}

fn init_norm(p: &mut ModelParams, name: &str, channels: usize) {
    p.add(format!("{name}.gain"), Tensor::full(&[channels, 1], 1.0));
    p.add(format!("{name}.bias"), Tensor::zeros(&[channels, 1]));
}

fn init_linear(p: &mut ModelParams, name: &str, rng: &mut ChaCha8Rng, out: usize, inp: usize) {
    p.add(format!("{name}.w"), uniform(rng, &[out, inp], inp));
    p.add(format!("{name}.b"), Tensor::zeros(&[out, 1]));
}

fn init_lstm(p: &mut ModelParams, name: &str, rng: &mut ChaCha8Rng, input: usize, hidden: usize) {
    p.add(format!("{name}.w_ih"), uniform(rng, &[4 * hidden, input], hidden));
    p.add(format!("{name}.w_hh"), uniform(rng, &[4 * hidden, hidden], hidden));
    p.add(format!("{name}.bias"), Tensor::zeros(&[4 * hidden]));
}

fn init_stack(p: &mut ModelParams, config: &ModelConfig, prefix: &str, rng: &mut ChaCha8Rng) {
    let n = config.encoder.channels;
    match config.arch {
        Arch::Tcn => {
            let t = &config.tcn;
            init_norm(p, &format!("{prefix}.norm_in"), n);
            init_linear(p, &format!("{prefix}.bottleneck"), rng, t.bottleneck, n);
            for r in 0..t.repeats {
                for x in 0..t.blocks {
                    let b = format!("{prefix}.block{r}_{x}");
                    init_linear(p, &format!("{b}.in"), rng, t.hidden, t.bottleneck);
                    p.add(format!("{b}.prelu1"), Tensor::scalar(0.25));
                    init_norm(p, &format!("{b}.norm1"), t.hidden);
                    p.add(format!("{b}.dw.w"), uniform(rng, &[t.hidden, 1, t.kernel], t.kernel));
                    p.add(format!("{b}.dw.b"), Tensor::zeros(&[t.hidden]));
                    p.add(format!("{b}.prelu2"), Tensor::scalar(0.25));
                    init_norm(p, &format!("{b}.norm2"), t.hidden);
                    init_linear(p, &format!("{b}.out"), rng, t.bottleneck, t.hidden);
                }
            }
            p.add(format!("{prefix}.head.prelu"), Tensor::scalar(0.25));
            init_linear(p, &format!("{prefix}.out"), rng, n, t.bottleneck);
        }
        Arch::Dprnn => {
            let d = &config.dprnn;
            init_norm(p, &format!("{prefix}.norm_in"), n);
            init_linear(p, &format!("{prefix}.bottleneck"), rng, d.bottleneck, n);
            for i in 0..d.blocks {
                let b = format!("{prefix}.block{i}");
                init_lstm(p, &format!("{b}.intra.fwd"), rng, d.bottleneck, d.hidden);
                init_lstm(p, &format!("{b}.intra.bwd"), rng, d.bottleneck, d.hidden);
                init_linear(p, &format!("{b}.intra.proj"), rng, d.bottleneck, 2 * d.hidden);
                init_norm(p, &format!("{b}.intra.norm"), d.bottleneck);
                init_lstm(p, &format!("{b}.inter.fwd"), rng, d.bottleneck, d.hidden);
                if !config.causal {
                    init_lstm(p, &format!("{b}.inter.bwd"), rng, d.bottleneck, d.hidden);
                }
                let inter_width = if config.causal { d.hidden } else { 2 * d.hidden };
                init_linear(p, &format!("{b}.inter.proj"), rng, d.bottleneck, inter_width);
                init_norm(p, &format!("{b}.inter.norm"), d.bottleneck);
            }
            p.add(format!("{prefix}.head.prelu"), Tensor::scalar(0.25));
            init_linear(p, &format!("{prefix}.out"), rng, n, d.bottleneck);
        }
    }
}

/// Tape leaves for every parameter, in registry order.
pub struct BoundParams {
    pub(crate) vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Var {
        let i = *self.index.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.vars[i]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}
