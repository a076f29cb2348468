//! Training objective and evaluation metrics: SDR (the scale-sensitive
//! objective), SI-SDR and its improvement over the unprocessed mixture,
//! ERLE curves and the embedding-deviation map.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::AerScene;
use crate::signal::Waveform;
use crate::tensor::{Tape, Tensor, Var};

/// Stabilizer inside the dB ratios.
pub const METRIC_EPS: f64 = 1e-8;
/// Reported dB values are clamped to this magnitude.
pub const DB_CAP: f64 = 80.0;

fn check_lengths(a: &Waveform, b: &Waveform) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    Ok(())
}

/// Scale-sensitive signal-to-distortion ratio in dB, capped at +-80.
///
/// `10 log10(sum x0^2 / sum (x0 - est)^2)`. Any gain mismatch between the
/// estimate and the target is penalized: `sdr(2*x, x)` is 0 dB.
pub fn sdr(target: &Waveform, estimate: &Waveform) -> Result<f64> {
    check_lengths(target, estimate)?;
    let num: f64 = target.samples.iter().map(|v| v * v).sum::<f64>() + METRIC_EPS;
    let den: f64 = target
        .samples
        .iter()
        .zip(&estimate.samples)
        .map(|(t, e)| (t - e) * (t - e))
        .sum::<f64>()
        + METRIC_EPS;
    Ok((10.0 * (num / den).log10()).clamp(-DB_CAP, DB_CAP))
}

/// Negative SDR as a differentiable tape op (uncapped, epsilon-stabilized).
///
/// `target` is a constant; the gradient flows to `estimate`.
pub fn sdr_loss(tape: &mut Tape, target: &Waveform, estimate: Var) -> Result<Var> {
    let shape = tape.shape(estimate).to_vec();
    let t = tape.constant(Tensor::new(shape, target.samples.clone()));
    sdr_loss_vars(tape, t, estimate)
}

/// [`sdr_loss`] on two tape handles of equal shape.
pub fn sdr_loss_vars(tape: &mut Tape, target: Var, estimate: Var) -> Result<Var> {
    if tape.shape(target) != tape.shape(estimate) {
        return Err(Error::ShapeMismatch {
            op: "sdr_loss",
            details: format!("{:?} vs {:?}", tape.shape(target), tape.shape(estimate)),
        });
    }
    let t2 = tape.mul(target, target)?;
    let num = tape.sum_all(t2);
    let num = tape.add_scalar(num, METRIC_EPS);
    let diff = tape.sub(target, estimate)?;
    let d2 = tape.mul(diff, diff)?;
    let den = tape.sum_all(d2);
    let den = tape.add_scalar(den, METRIC_EPS);
    // -10*log10(num/den) = (10/ln10) * (ln den - ln num)
    let ln_num = tape.ln(num);
    let ln_den = tape.ln(den);
    let diff = tape.sub(ln_den, ln_num)?;
    Ok(tape.scale(diff, 10.0 / std::f64::consts::LN_10))
}

/// Scale-invariant SDR in dB, capped at +-80.
///
/// The estimate is first projected onto the reference, so any positive
/// rescaling of the estimate leaves the value unchanged. The stabilizer
/// scales with the projection energy (`den + eps * num`), which keeps the
/// invariance exact at any gain and puts a perfect estimate exactly at the
/// cap.
pub fn si_sdr(estimate: &Waveform, reference: &Waveform) -> Result<f64> {
    check_lengths(estimate, reference)?;
    let ref_energy: f64 = reference.samples.iter().map(|v| v * v).sum();
    if ref_energy <= 0.0 {
        return Err(Error::SilentReference);
    }
    let dot: f64 =
        estimate.samples.iter().zip(&reference.samples).map(|(e, r)| e * r).sum();
    let alpha = dot / ref_energy;
    let mut num = 0.0;
    let mut den = 0.0;
    for (e, r) in estimate.samples.iter().zip(&reference.samples) {
        let s = alpha * r;
        num += s * s;
        den += (e - s) * (e - s);
    }
    if num <= 0.0 {
        return Ok(-DB_CAP);
    }
    Ok((10.0 * (num / (den + METRIC_EPS * num)).log10()).clamp(-DB_CAP, DB_CAP))
}

/// Near-end estimate by echo subtraction: `x1_hat(t) = y(t) - x0_hat(t)`.
pub fn near_end_estimate(mixture: &Waveform, echo_estimate: &Waveform) -> Result<Waveform> {
    mixture.sub(echo_estimate)
}

/// SI-SDR improvement of the near-end estimate over the raw mixture, both
/// measured against the true near-end signal.
pub fn si_sdri(scene: &AerScene, near_estimate: &Waveform) -> Result<f64> {
    let after = si_sdr(near_estimate, &scene.near_end)?;
    let before = si_sdr(&scene.mixture, &scene.near_end)?;
    Ok(after - before)
}

/// Echo return loss enhancement over time.
///
/// Frame-wise `10 log10(sum x0^2 / sum (x0 - x0_hat)^2)` against the true
/// echo, 2048-sample frames with a 512-sample hop by default (128 ms at
/// 75% overlap at 16 kHz); timestamps are frame centers in seconds.
pub fn erle_curve(
    echo: &Waveform,
    echo_estimate: &Waveform,
    frame_len: usize,
    hop: usize,
) -> Result<Vec<(f64, f64)>> {
    check_lengths(echo, echo_estimate)?;
    if echo.is_empty() {
        return Err(Error::EmptyInput);
    }
    let fs = echo.sample_rate as f64;
    let mut out = Vec::new();
    let mut start = 0;
    while start < echo.len() {
        let stop = (start + frame_len).min(echo.len());
        let mut num = METRIC_EPS;
        let mut den = METRIC_EPS;
        for i in start..stop {
            let e = echo.samples[i];
            let d = echo.samples[i] - echo_estimate.samples[i];
            num += e * e;
            den += d * d;
        }
        let db = (10.0 * (num / den).log10()).clamp(-DB_CAP, DB_CAP);
        let center = (start + (stop - start) / 2) as f64 / fs;
        out.push((center, db));
        if stop == echo.len() {
            break;
        }
        start += hop;
    }
    Ok(out)
}

pub const ERLE_FRAME: usize = 2048;
pub const ERLE_HOP: usize = 512;

/// Per-channel absolute deviation of embeddings from their temporal mean:
/// `|E - row_mean(E)|`, the visualization of embedding temporal dynamics.
pub fn embedding_deviation_map(embedding: &Tensor) -> Tensor {
    assert_eq!(embedding.rank(), 2, "embedding must be (N, T)");
    let (n, t) = (embedding.shape()[0], embedding.shape()[1]);
    let mut out = Tensor::zeros(&[n, t]);
    for c in 0..n {
        let row = &embedding.data()[c * t..(c + 1) * t];
        let mean = row.iter().sum::<f64>() / t as f64;
        for (i, &v) in row.iter().enumerate() {
            out.data_mut()[c * t + i] = (v - mean).abs();
        }
    }
    out
}

/// Metrics for one evaluated example.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExampleMetrics {
    pub subset: String,
    pub sir_db: f64,
    pub si_sdr_in: f64,
    pub si_sdr_out: f64,
    pub si_sdri: f64,
    pub sdr_echo: f64,
}

impl ExampleMetrics {
    /// Full metric set for one scene and echo estimate.
    pub fn compute(scene: &AerScene, echo_estimate: &Waveform) -> Result<ExampleMetrics> {
        let near_est = near_end_estimate(&scene.mixture, echo_estimate)?;
        let si_in = si_sdr(&scene.mixture, &scene.near_end)?;
        let si_out = si_sdr(&near_est, &scene.near_end)?;
        Ok(ExampleMetrics {
            subset: scene.subset_tag.name().to_string(),
            sir_db: scene.sir_db,
            si_sdr_in: si_in,
            si_sdr_out: si_out,
            si_sdri: si_out - si_in,
            sdr_echo: sdr(&scene.echo, echo_estimate)?,
        })
    }
}

/// Aggregated evaluation report: per-example rows plus per-subset means.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub examples: Vec<ExampleMetrics>,
    pub subset_mean_si_sdri: Vec<(String, f64)>,
    pub mean_si_sdri: f64,
}

impl MetricReport {
    pub fn from_examples(examples: Vec<ExampleMetrics>) -> MetricReport {
        let mut subset_mean = Vec::new();
        for tag in ["SS", "SN", "NS", "NN"] {
            let vals: Vec<f64> = examples
                .iter()
                .filter(|e| e.subset == tag)
                .map(|e| e.si_sdri)
                .collect();
            if !vals.is_empty() {
                subset_mean.push((tag.to_string(), vals.iter().sum::<f64>() / vals.len() as f64));
            }
        }
        let mean = if examples.is_empty() {
            0.0
        } else {
            examples.iter().map(|e| e.si_sdri).sum::<f64>() / examples.len() as f64
        };
        MetricReport { examples, subset_mean_si_sdri: subset_mean, mean_si_sdri: mean }
    }
}
