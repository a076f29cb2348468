//! Acceptance suite: one test per exit criterion, each printing a
//! PASS/FAIL line. Thresholds and tolerances are pinned here, not
//! configurable.
//!
//! The training comparison (criterion 2) dominates the runtime (about
//! 15-20 minutes on two cores); everything else finishes in seconds.

use echoex::commands::{demo_switch, eval_manifest, gen_scenes, CachedRirScenes, Estimator};
use echoex::config::ExperimentConfig;
use echoex::metrics::{
    embedding_deviation_map, near_end_estimate, sdr, si_sdr, si_sdri, DB_CAP,
};
use echoex::nn::{average_embeddings, fuse, EncoderSide, FusionMode, Model, ModelConfig};
use echoex::rir::{
    bandlimited_peak, measured_t60, simulate_rir, simulate_rir_default, GeometryPool, RirRequest,
    Split, SOUND_SPEED,
};
use echoex::scene::{synth_source, SynthKind};
use echoex::signal::{frame, overlap_add_normalized, Waveform};
use echoex::tensor::{grad_check, grad_check_multi, ConvSpec, Tape, Tensor};
use echoex::train::{train, Providers, SceneProvider, TrainConfig};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pass(criterion: &str, detail: String) {
    println!("PASS: {criterion} - {detail}");
}

/// Criterion 1 is the scale disclaimer: published full-scale SI-SDRi
/// values need the real corpora and long training, so the suite
/// substitutes the desk-scale property checks below (criterion 2 carries
/// the core claim).
#[test]
fn criterion_01_scale_disclaimer() {
    pass(
        "1 (scale disclaimer)",
        "full-scale table values out of desk scope; desk-scale properties stand in".into(),
    );
}

/// Criterion 2: on synthetic correlated-reference scenes, the
/// time-varying embedding beats the time-invariant one. Tiny DPRNN, 30
/// epochs x 200 examples, seeds {11, 22, 33}: median gap > 0 dB on a
/// 100-scene fixed test set and TV > TI for at least 2 of 3 seeds.
#[test]
fn criterion_02_tv_beats_ti_at_desk_scale() {
    let provider = CachedRirScenes::build(8000, 0.5, 32, 900).unwrap();
    let test_scenes: Vec<_> = (0..100).map(|i| provider.build(0xE57, i).unwrap()).collect();

    let evaluate = |fusion: FusionMode, seed: u64| -> f64 {
        let model_cfg = ModelConfig::tiny_dprnn(fusion);
        let train_cfg = TrainConfig {
            batch: 8,
            max_epochs: 30,
            train_per_epoch: 200,
            val_per_epoch: 40,
            seed,
            ..TrainConfig::default()
        };
        let out =
            train(&model_cfg, &train_cfg, Providers::same(&provider), None, |_| {}).unwrap();
        let model = Model { config: out.best.config, params: out.best.params };
        let mut total = 0.0;
        for s in &test_scenes {
            let est = model.infer(&s.mixture, &s.reference).unwrap().estimate;
            let near = near_end_estimate(&s.mixture, &est).unwrap();
            total += si_sdri(s, &near).unwrap();
        }
        total / test_scenes.len() as f64
    };

    let seeds = [11u64, 22, 33];
    let mut gaps = Vec::new();
    let mut wins = 0;
    for &seed in &seeds {
        let ti = evaluate(FusionMode::Ti, seed);
        let tv = evaluate(FusionMode::Tv, seed);
        println!("  seed {seed}: TI {ti:+.3} dB, TV {tv:+.3} dB, gap {:+.3} dB", tv - ti);
        if tv > ti {
            wins += 1;
        }
        gaps.push(tv - ti);
    }
    gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = gaps[1];
    assert!(median > 0.0, "median TV-TI gap {median} dB must be positive");
    assert!(wins >= 2, "TV must beat TI on at least 2 of 3 seeds, got {wins}");
    pass(
        "2 (TV > TI at desk scale)",
        format!("median gap {median:+.3} dB, TV wins {wins}/3 seeds"),
    );
}

/// Criterion 3: with constant-column embeddings, TV and TI extraction
/// outputs are bit-identical.
#[test]
fn criterion_03_fusion_equivalence() {
    let model = Model::new(ModelConfig::tiny_dprnn(FusionMode::Tv), 17);
    let mix = synth_source(SynthKind::AmNoise, 5, 0.5, 8000);

    let mut tape = Tape::new();
    let bp = model.bind(&mut tape, false);
    let y_lat = model.encode(&mut tape, &bp, EncoderSide::Ext, &mix).unwrap();
    let t = tape.shape(y_lat)[1];
    let n = model.config.encoder.channels;
    let mut data = Vec::with_capacity(n * t);
    for c in 0..n {
        data.extend(std::iter::repeat_n(0.17 + 0.03 * c as f64, t));
    }
    let e_const = tape.constant(Tensor::new(vec![n, t], data));

    let (_, tv_out) = model.extract_forward(&mut tape, &bp, y_lat, e_const).unwrap();
    let avg = average_embeddings(&mut tape, e_const).unwrap();
    let ti_model = Model {
        config: ModelConfig { fusion: FusionMode::Ti, ..model.config },
        params: model.params.clone(),
    };
    let (_, ti_out) = ti_model.extract_forward(&mut tape, &bp, y_lat, avg).unwrap();

    assert_eq!(tape.value(tv_out).data(), tape.value(ti_out).data());
    pass("3 (fusion equivalence)", "constant-column TV output bit-identical to TI".into());
}

/// Criterion 4: parameter counts reproduce the published model sizes
/// within +-20%.
#[test]
fn criterion_04_model_size_parity() {
    let cases = [
        ("TCN", ModelConfig::full_tcn(FusionMode::Tv), 0.59f64),
        ("DPRNN", ModelConfig::full_dprnn(FusionMode::Tv, false), 2.74),
        ("causal DPRNN", ModelConfig::full_dprnn(FusionMode::Tv, true), 2.10),
    ];
    let mut detail = Vec::new();
    for (name, cfg, published) in cases {
        let m = cfg.param_count() as f64 / 1e6;
        let rel = (m - published).abs() / published;
        assert!(rel < 0.20, "{name}: {m:.3}M vs {published}M ({:.1}% off)", rel * 100.0);
        detail.push(format!("{name} {m:.2}M vs {published}M"));
    }
    pass("4 (model sizes)", detail.join(", "));
}

/// Criterion 5: every autodiff primitive and the full tiny networks pass
/// central-difference checks (1e-4 primitives, 1e-3 end-to-end).
#[test]
fn criterion_05_gradient_correctness() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let rand = |shape: &[usize], rng: &mut ChaCha8Rng| {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(0.1..0.9)).collect())
    };

    // primitive sweep
    let x = rand(&[3, 6], &mut rng);
    let checks: Vec<(&str, f64)> = vec![
        ("relu", grad_check(|t, v| { let y = t.relu(v); t.sum_all(y) }, &x, 1e-5)),
        ("sigmoid", grad_check(|t, v| { let y = t.sigmoid(v); t.sum_all(y) }, &x, 1e-5)),
        ("tanh", grad_check(|t, v| { let y = t.tanh(v); t.sum_all(y) }, &x, 1e-5)),
        ("sqrt", grad_check(|t, v| { let y = t.sqrt(v); t.sum_all(y) }, &x, 1e-5)),
        ("recip", grad_check(|t, v| { let y = t.recip(v); t.sum_all(y) }, &x, 1e-5)),
        ("ln", grad_check(|t, v| { let y = t.ln(v); t.sum_all(y) }, &x, 1e-5)),
        (
            "mul+broadcast",
            grad_check_multi(
                |t, vs| {
                    let y = t.mul(vs[0], vs[1]).unwrap();
                    t.sum_all(y)
                },
                &[rand(&[3, 6], &mut rng), rand(&[3, 1], &mut rng)],
                1e-5,
            ),
        ),
        (
            "matmul",
            grad_check_multi(
                |t, vs| {
                    let y = t.matmul(vs[0], vs[1]).unwrap();
                    let sq = t.mul(y, y).unwrap();
                    t.sum_all(sq)
                },
                &[rand(&[3, 4], &mut rng), rand(&[4, 2], &mut rng)],
                1e-5,
            ),
        ),
        (
            "conv1d",
            grad_check_multi(
                |t, vs| {
                    let spec = ConvSpec { stride: 1, dilation: 2, groups: 2, pad_left: 2, pad_right: 2 };
                    let y = t.conv1d(vs[0], vs[1], Some(vs[2]), spec).unwrap();
                    let sq = t.mul(y, y).unwrap();
                    t.sum_all(sq)
                },
                &[rand(&[4, 10], &mut rng), rand(&[4, 2, 3], &mut rng), rand(&[4], &mut rng)],
                1e-5,
            ),
        ),
        (
            "conv_transpose1d",
            grad_check_multi(
                |t, vs| {
                    let y = t.conv_transpose1d(vs[0], vs[1], Some(vs[2]), 2).unwrap();
                    let sq = t.mul(y, y).unwrap();
                    t.sum_all(sq)
                },
                &[rand(&[3, 5], &mut rng), rand(&[3, 2, 4], &mut rng), rand(&[2], &mut rng)],
                1e-5,
            ),
        ),
        (
            "lstm_seq",
            grad_check_multi(
                |t, vs| {
                    let h = t.lstm_seq(vs[0], vs[1], vs[2], vs[3], false).unwrap();
                    let sq = t.mul(h, h).unwrap();
                    t.sum_all(sq)
                },
                &[
                    rand(&[5, 2, 3], &mut rng),
                    rand(&[16, 3], &mut rng),
                    rand(&[16, 4], &mut rng),
                    rand(&[16], &mut rng),
                ],
                1e-5,
            ),
        ),
        (
            "chunk/unchunk/cumsum",
            grad_check(
                |t, v| {
                    let c = t.chunk(v, 4, 2).unwrap();
                    let s = t.cumsum(c, 2).unwrap();
                    let u = t.unchunk(s, 2, 6).unwrap();
                    let sq = t.mul(u, u).unwrap();
                    t.sum_all(sq)
                },
                &rand(&[2, 6], &mut rng),
                1e-5,
            ),
        ),
    ];
    for (name, err) in &checks {
        assert!(*err < 1e-4, "{name}: rel err {err}");
    }
    let worst_prim = checks.iter().map(|(_, e)| *e).fold(0.0f64, f64::max);

    // full tiny networks end-to-end, all parameters via the loss path
    let mut worst_model = 0.0f64;
    for arch in [echoex::nn::Arch::Dprnn, echoex::nn::Arch::Tcn] {
        let mut cfg = ModelConfig::tiny_dprnn(FusionMode::Tv);
        cfg.arch = arch;
        cfg.encoder = echoex::nn::EncoderConfig { window: 8, stride: 4, channels: 5 };
        cfg.dprnn = echoex::nn::DprnnConfig { bottleneck: 4, chunk: 4, hidden: 3, blocks: 1 };
        cfg.tcn = echoex::nn::TcnConfig { bottleneck: 4, hidden: 5, kernel: 3, blocks: 2, repeats: 1 };
        let model = Model::new(cfg, 23);
        let fs = 800;
        let mix = synth_source(SynthKind::AmNoise, 31, 0.06, fs);
        let reference = synth_source(SynthKind::AmNoise, 32, 0.06, fs);
        let echo = synth_source(SynthKind::AmNoise, 33, 0.06, fs);

        let grads: Vec<Tensor> = {
            let mut tape = Tape::new();
            let bp = model.bind(&mut tape, true);
            let out = model.forward(&mut tape, &bp, &mix, &reference).unwrap();
            let flat = tape.reshape(out.estimate, &[mix.len()]).unwrap();
            let loss = echoex::metrics::sdr_loss(&mut tape, &echo, flat).unwrap();
            tape.backward(loss).unwrap();
            bp.vars().iter().map(|&v| tape.grad(v).unwrap().clone()).collect()
        };
        let eval = |params: &echoex::nn::ModelParams| {
            let m = Model { config: model.config, params: params.clone() };
            let mut tape = Tape::new();
            let bp = m.bind(&mut tape, false);
            let out = m.forward(&mut tape, &bp, &mix, &reference).unwrap();
            let flat = tape.reshape(out.estimate, &[mix.len()]).unwrap();
            let loss = echoex::metrics::sdr_loss(&mut tape, &echo, flat).unwrap();
            tape.value(loss).item()
        };
        for (pi, (_, base)) in model.params.iter().enumerate() {
            // probe a few elements of every tensor; take the best of two
            // step sizes, since a ReLU/PReLU kink inside one probe window
            // corrupts that central difference while a genuinely wrong
            // gradient fails at every step size
            let probes = [0usize, base.numel() / 2, base.numel() - 1];
            for &i in probes.iter().take(if base.numel() > 2 { 3 } else { 1 }) {
                let a = grads[pi].data()[i];
                let rel = [1e-5, 1e-6]
                    .iter()
                    .map(|&h| {
                        let mut plus = model.params.clone();
                        plus.tensors_mut().nth(pi).unwrap().data_mut()[i] += h;
                        let mut minus = model.params.clone();
                        minus.tensors_mut().nth(pi).unwrap().data_mut()[i] -= h;
                        let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
                        (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8)
                    })
                    .fold(f64::INFINITY, f64::min);
                assert!(rel < 1e-3, "{arch:?} param {pi} [{i}]: rel err {rel}");
                worst_model = worst_model.max(rel);
            }
        }
    }
    pass(
        "5 (gradient correctness)",
        format!("primitives worst {worst_prim:.2e} (< 1e-4), end-to-end worst {worst_model:.2e} (< 1e-3)"),
    );
}

/// Criterion 6: objective arithmetic - SDR scale sensitivity and SI-SDR
/// scale invariance.
#[test]
fn criterion_06_objective_arithmetic() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = Waveform::new((0..4000).map(|_| rng.gen_range(-1.0..1.0)).collect(), 8000);

    let mut half = x.clone();
    half.scale(0.5);
    let s_half = sdr(&x, &half).unwrap();
    assert!((s_half - 6.0206).abs() < 1e-3, "sdr(0.5x, x) = {s_half}");

    let mut twice = x.clone();
    twice.scale(2.0);
    let s_twice = sdr(&x, &twice).unwrap();
    assert!(s_twice.abs() < 1e-3, "sdr(2x, x) = {s_twice}");

    let est = Waveform::new((0..4000).map(|_| rng.gen_range(-1.0..1.0)).collect(), 8000);
    let base = si_sdr(&est, &x).unwrap();
    for c in [0.01, 0.5, 7.0, 300.0] {
        let mut scaled = est.clone();
        scaled.scale(c);
        let v = si_sdr(&scaled, &x).unwrap();
        assert!((v - base).abs() < 1e-9, "scale {c}: {v} vs {base}");
    }

    // mixture passthrough improves nothing, exactly
    let provider = CachedRirScenes::build(8000, 0.5, 2, 3).unwrap();
    let scene = provider.build(1, 0).unwrap();
    assert_eq!(si_sdri(&scene, &scene.mixture).unwrap(), 0.0);

    pass(
        "6 (objective arithmetic)",
        format!("sdr(0.5x)={s_half:.4}, sdr(2x)={s_twice:.1e}, si_sdr invariant to 1e-9, si_sdri(y)=0"),
    );
}

/// Criterion 7: RIR oracle - anechoic peak within 2% of 1/(4 pi d) and 0.1
/// sample of the geometric delay; Schroeder T60 within +-20% of request for
/// every test-pool room/T60 combination.
#[test]
fn criterion_07_rir_oracle() {
    let fs = 16000u32;
    // anechoic free-field checks at the test distances
    for distance in [0.85, 1.35, 1.85] {
        let req = RirRequest {
            room: echoex::rir::RoomSpec::new(12.0, 12.0, 12.0),
            t60: 0.0,
            source_pos: [6.0 + distance, 6.0, 6.0],
            mic_pos: [6.0, 6.0, 6.0],
            sample_rate: fs,
            sound_speed: SOUND_SPEED,
        };
        let rir = simulate_rir(&req, 0).unwrap();
        let (pos, amp) = bandlimited_peak(&rir.taps);
        let expect_amp = 1.0 / (4.0 * std::f64::consts::PI * distance);
        let expect_pos = fs as f64 * distance / SOUND_SPEED;
        assert!(
            (amp - expect_amp).abs() / expect_amp < 0.02,
            "d={distance}: amp {amp} vs {expect_amp}"
        );
        assert!((pos - expect_pos).abs() < 0.1, "d={distance}: delay {pos} vs {expect_pos}");
    }

    // every test-pool room x T60 combination
    let pool = GeometryPool::for_split(Split::Test);
    let mut worst: f64 = 0.0;
    for room in &pool.rooms {
        for &t60 in &pool.t60s {
            let req = RirRequest {
                room: *room,
                t60,
                source_pos: [room.width * 0.3, room.length * 0.35, 1.3],
                mic_pos: [room.width * 0.65, room.length * 0.68, 1.6],
                sample_rate: fs,
                sound_speed: SOUND_SPEED,
            };
            let rir = simulate_rir_default(&req).unwrap();
            let measured = measured_t60(&rir).unwrap();
            let rel = (measured - t60).abs() / t60;
            assert!(
                rel < 0.20,
                "room {:?} t60 {t60}: measured {measured:.3} ({:+.1}%)",
                room.dims(),
                (measured / t60 - 1.0) * 100.0
            );
            worst = worst.max(rel);
        }
    }
    pass(
        "7 (RIR oracle)",
        format!("free-field peak/delay in spec; worst T60 deviation {:.1}% (< 20%)", worst * 100.0),
    );
}

/// Criterion 8: causal DPRNN-TV output before sample t is unaffected by
/// perturbations after t + the structural lookahead (decoder window plus
/// one chunk of bidirectional intra-chunk context), 10 random probes.
#[test]
fn criterion_08_causality() {
    let mut cfg = ModelConfig::tiny_dprnn(FusionMode::Tv);
    cfg.causal = true;
    let model = Model::new(cfg, 29);
    let lookahead = cfg.lookahead_samples();
    let fs = 8000;
    let len = 4000;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for probe in 0..10 {
        let mix = synth_source(SynthKind::AmNoise, 800 + probe, 0.5, fs);
        let reference = synth_source(SynthKind::AmNoise, 900 + probe, 0.5, fs);
        let t = rng.gen_range(len / 4..3 * len / 4);
        let cut = t + lookahead;

        let mut mix_p = mix.clone();
        let mut ref_p = reference.clone();
        for i in cut..len {
            mix_p.samples[i] += rng.gen_range(-1.0..1.0);
            ref_p.samples[i] += rng.gen_range(-1.0..1.0);
        }
        let base = model.infer(&mix, &reference).unwrap().estimate;
        let pert = model.infer(&mix_p, &ref_p).unwrap().estimate;
        for i in 0..t {
            let d = (base.samples[i] - pert.samples[i]).abs();
            assert!(d <= 1e-6, "probe {probe}: sample {i} of {t} moved by {d}");
        }
    }
    pass(
        "8 (causality)",
        format!("10 probes clean; structural lookahead {lookahead} samples"),
    );
}

/// Criterion 9: framing/overlap-add round trip and the frame-count
/// contract.
#[test]
fn criterion_09_framing_ola() {
    let w = Waveform::new(
        (0..64000).map(|i| ((i * 31 + 7) % 211) as f64 / 105.0 - 1.0).collect(),
        16000,
    );
    let f = frame(&w, 32, 16).unwrap();
    assert_eq!(f.num_frames, 3999);
    let r = overlap_add_normalized(&f);
    let mut worst = 0.0f64;
    for (a, b) in r.samples.iter().zip(&w.samples) {
        worst = worst.max((a - b).abs());
    }
    assert!(worst <= 1e-12, "round-trip error {worst}");
    pass("9 (framing/OLA)", format!("T=3999 for 64000 samples; round-trip error {worst:.1e}"));
}

/// Criterion 10: the eval pipeline brackets - identity stub at cap-level
/// SI-SDRi and ERLE, zero stub at exactly 0 dB improvement.
#[test]
fn criterion_10_pipeline_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = dir.path().join("scenes");
    let mut cfg = ExperimentConfig::desk();
    cfg.data.duration = 0.5;
    gen_scenes(&cfg, Split::Test, 8, 10, None, false, &scenes).unwrap();
    let manifest = scenes.join("manifest.jsonl");

    let oracle = eval_manifest(&Estimator::Oracle, &manifest, &dir.path().join("o")).unwrap();
    for e in &oracle.examples {
        // float32 scene storage keeps the perfect estimate a hair under cap
        assert!(e.si_sdr_out > DB_CAP - 0.1, "oracle si_sdr_out {}", e.si_sdr_out);
        assert!(e.si_sdri > 0.0);
    }
    let zero = eval_manifest(&Estimator::Zero, &manifest, &dir.path().join("z")).unwrap();
    for e in &zero.examples {
        assert_eq!(e.si_sdri, 0.0, "zero stub must improve exactly nothing");
    }

    // ERLE bracket on one in-memory scene (no storage quantization)
    let provider = CachedRirScenes::build(8000, 0.5, 2, 5).unwrap();
    let s = provider.build(3, 0).unwrap();
    let perfect = echoex::metrics::erle_curve(&s.echo, &s.echo, 2048, 512).unwrap();
    assert!(perfect.iter().all(|(_, db)| *db == DB_CAP));

    pass(
        "10 (pipeline oracle)",
        format!(
            "oracle mean SI-SDRi {:+.1} dB at cap, zero stub exactly 0",
            oracle.mean_si_sdri
        ),
    );
}

/// Criterion 11: demo-switch artifacts have the right dimensions and the
/// deviation map of a constant embedding is all-zero.
#[test]
fn criterion_11_switch_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let estimator = Estimator::from_spec_or_random("random:tiny", 3).unwrap();
    let summary = demo_switch(&estimator, 8000, 3, dir.path()).unwrap();

    // ERLE rows cover the 4 s scene at the 512-sample hop
    let erle = std::fs::read_to_string(dir.path().join("erle.csv")).unwrap();
    let rows = erle.lines().filter(|l| !l.starts_with('#') && !l.starts_with("time_s")).count();
    assert_eq!(rows, summary.erle_points);
    let fs = 8000usize;
    let mut expected = 0;
    let mut start = 0;
    while start < 4 * fs {
        expected += 1;
        if start + 2048 >= 4 * fs {
            break;
        }
        start += 512;
    }
    assert_eq!(rows, expected, "ERLE row count");

    // embedding-deviation map dimensions: (N_emb x T_ref)
    let model_cfg = ModelConfig::tiny_dprnn(FusionMode::Tv);
    assert_eq!(
        summary.embedding_shape,
        vec![model_cfg.encoder.channels, model_cfg.frames_for(4 * fs)]
    );

    // constant embedding deviates nowhere
    let e = Tensor::new(vec![3, 5], vec![2.5; 15]);
    assert!(embedding_deviation_map(&e).data().iter().all(|&v| v == 0.0));

    // and the fusion contract rejects a TI-shaped mismatch
    let mut tape = Tape::new();
    let h = tape.constant(Tensor::zeros(&[3, 5]));
    let e_mat = tape.constant(Tensor::zeros(&[3, 5]));
    assert!(fuse(&mut tape, h, e_mat, FusionMode::Ti).is_err());

    pass(
        "11 (switch artifacts)",
        format!("{rows} ERLE rows, deviation map {:?}, constant map all-zero", summary.embedding_shape),
    );
}
