//! Check the reverse-mode gradients of the tensor engine against central
//! differences, from single primitives up to a full tiny model.
//!
//! ```bash
//! cargo run --example gradient_check
//! ```

use echoex::metrics::sdr_loss;
use echoex::nn::{FusionMode, Model, ModelConfig};
use echoex::scene::{synth_source, SynthKind};
use echoex::tensor::{grad_check, grad_check_multi, ConvSpec, Tensor};
use rand::{Rng, SeedableRng};

fn random(shape: &[usize], rng: &mut rand_chacha::ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-0.9..0.9)).collect())
}

fn main() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);

    let x = random(&[3, 8], &mut rng);
    let err = grad_check(
        |t, v| {
            let y = t.tanh(v);
            let sq = t.mul(y, y).unwrap();
            t.sum_all(sq)
        },
        &x,
        1e-5,
    );
    println!("tanh chain:        max rel err {err:.2e}");

    let w = random(&[4, 3, 3], &mut rng);
    let err = grad_check_multi(
        |t, vs| {
            let y = t.conv1d(vs[0], vs[1], None, ConvSpec::plain(1)).unwrap();
            let a = t.relu(y);
            let sq = t.mul(a, a).unwrap();
            t.mean_all(sq)
        },
        &[x.clone(), w],
        1e-5,
    );
    println!("conv1d + relu:     max rel err {err:.2e}");

    // the SDR objective through a full tiny extraction model
    let mut cfg = ModelConfig::tiny_dprnn(FusionMode::Tv);
    cfg.encoder.channels = 6;
    cfg.dprnn = echoex::nn::DprnnConfig { bottleneck: 4, chunk: 4, hidden: 3, blocks: 1 };
    let model = Model::new(cfg, 3);
    let fs = 800;
    let mix = synth_source(SynthKind::AmNoise, 1, 0.06, fs);
    let reference = synth_source(SynthKind::AmNoise, 2, 0.06, fs);
    let echo = synth_source(SynthKind::AmNoise, 3, 0.06, fs);

    let mut worst = 0.0f64;
    for (name, base) in model.params.iter() {
        let grad = {
            let mut tape = echoex::tensor::Tape::new();
            let bp = model.bind(&mut tape, true);
            let out = model.forward(&mut tape, &bp, &mix, &reference).unwrap();
            let flat = tape.reshape(out.estimate, &[mix.len()]).unwrap();
            let loss = sdr_loss(&mut tape, &echo, flat).unwrap();
            tape.backward(loss).unwrap();
            tape.grad(bp.var(name)).unwrap().clone()
        };
        // probe one element per parameter tensor
        let i = base.numel() / 2;
        let eval = |t: Tensor| {
            let mut m = model.clone();
            for (n, pt) in m.params.iter_mut() {
                if n == name {
                    *pt = t.clone();
                }
            }
            let mut tape = echoex::tensor::Tape::new();
            let bp = m.bind(&mut tape, false);
            let out = m.forward(&mut tape, &bp, &mix, &reference).unwrap();
            let flat = tape.reshape(out.estimate, &[mix.len()]).unwrap();
            let loss = sdr_loss(&mut tape, &echo, flat).unwrap();
            tape.value(loss).item()
        };
        let h = 1e-5;
        let mut plus = base.clone();
        plus.data_mut()[i] += h;
        let mut minus = base.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(plus) - eval(minus)) / (2.0 * h);
        let a = grad.data()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    println!("full tiny model:   max rel err {worst:.2e} over {} parameter tensors", model.params.len());
}
