//! Framing/overlap-add, fast convolution and level arithmetic shared by all
//! other modules.

use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};

/// Power floor so dB levels stay finite on silence.
pub const POWER_EPS: f64 = 1e-12;

/// Discrete-time mono signal with a sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        assert!(sample_rate > 0, "sample rate must be positive");
        Waveform { samples, sample_rate }
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Waveform::new(vec![0.0; len], sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    /// Mean power of the signal, floored at [`POWER_EPS`].
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return POWER_EPS;
        }
        let sum: f64 = self.samples.iter().map(|s| s * s).sum();
        sum / self.samples.len() as f64 + POWER_EPS
    }

    pub fn rms(&self) -> f64 {
        self.power().sqrt()
    }

    pub fn scale(&mut self, gain: f64) {
        for s in &mut self.samples {
            *s *= gain;
        }
    }

    /// Sample-wise sum; lengths and sample rates must match.
    pub fn add(&self, other: &Waveform) -> Result<Waveform> {
        if self.sample_rate != other.sample_rate {
            return Err(Error::SampleRateMismatch(self.sample_rate, other.sample_rate));
        }
        if self.len() != other.len() {
            return Err(Error::LengthMismatch(self.len(), other.len()));
        }
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Waveform::new(samples, self.sample_rate))
    }

    /// Sample-wise difference; lengths and sample rates must match.
    pub fn sub(&self, other: &Waveform) -> Result<Waveform> {
        if self.sample_rate != other.sample_rate {
            return Err(Error::SampleRateMismatch(self.sample_rate, other.sample_rate));
        }
        if self.len() != other.len() {
            return Err(Error::LengthMismatch(self.len(), other.len()));
        }
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Waveform::new(samples, self.sample_rate))
    }

    /// Truncates or zero-extends to `len` samples.
    pub fn fit_to(&self, len: usize) -> Waveform {
        let mut samples = self.samples.clone();
        samples.resize(len, 0.0);
        Waveform::new(samples, self.sample_rate)
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|s| s.is_finite())
    }
}

/// Matrix of overlapping frames, one frame per column.
///
/// Frame `k` holds samples `[k*hop, k*hop + frame_len)` of the (zero-padded)
/// source signal; frames are stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    data: Vec<f64>,
    pub frame_len: usize,
    pub hop: usize,
    pub num_frames: usize,
    /// Length of the signal before padding; reconstruction trims to this.
    pub source_len: usize,
    pub sample_rate: u32,
}

impl FrameMatrix {
    pub fn frame(&self, k: usize) -> &[f64] {
        &self.data[k * self.frame_len..(k + 1) * self.frame_len]
    }

    pub fn frame_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.frame_len..(k + 1) * self.frame_len]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Segments `w` into overlapping frames of `frame_len` samples at `hop`.
///
/// The signal is right-padded with zeros to the smallest length that makes
/// `(len - frame_len)` divisible by `hop` (no padding when already
/// divisible), so the frame count is deterministic from the input length:
/// `T = (padded_len - frame_len)/hop + 1`.
pub fn frame(w: &Waveform, frame_len: usize, hop: usize) -> Result<FrameMatrix> {
    if w.is_empty() {
        return Err(Error::EmptyInput);
    }
    if hop == 0 || frame_len < hop {
        return Err(Error::InvalidFraming { frame_len, hop });
    }
    let len = w.len().max(frame_len);
    let rem = (len - frame_len) % hop;
    let padded = if rem == 0 { len } else { len + hop - rem };
    let num_frames = (padded - frame_len) / hop + 1;

    let mut data = vec![0.0; num_frames * frame_len];
    for k in 0..num_frames {
        let start = k * hop;
        let stop = (start + frame_len).min(w.len());
        if start < w.len() {
            data[k * frame_len..k * frame_len + (stop - start)]
                .copy_from_slice(&w.samples[start..stop]);
        }
    }
    Ok(FrameMatrix {
        data,
        frame_len,
        hop,
        num_frames,
        source_len: w.len(),
        sample_rate: w.sample_rate,
    })
}

/// Sums overlapping frames at their original offsets and trims to the
/// source length.
pub fn overlap_add(f: &FrameMatrix) -> Waveform {
    let padded = (f.num_frames - 1) * f.hop + f.frame_len;
    let mut out = vec![0.0; padded];
    for k in 0..f.num_frames {
        let offset = k * f.hop;
        for (i, v) in f.frame(k).iter().enumerate() {
            out[offset + i] += v;
        }
    }
    out.truncate(f.source_len);
    Waveform::new(out, f.sample_rate)
}

/// Overlap-add with per-sample compensation: each output sample is divided
/// by the number of frames covering it, so `overlap_add_normalized(frame(w))`
/// reconstructs `w` for rectangular frames.
pub fn overlap_add_normalized(f: &FrameMatrix) -> Waveform {
    let padded = (f.num_frames - 1) * f.hop + f.frame_len;
    let mut out = vec![0.0; padded];
    let mut coverage = vec![0u32; padded];
    for k in 0..f.num_frames {
        let offset = k * f.hop;
        for (i, v) in f.frame(k).iter().enumerate() {
            out[offset + i] += v;
            coverage[offset + i] += 1;
        }
    }
    for (o, c) in out.iter_mut().zip(&coverage) {
        if *c > 0 {
            *o /= *c as f64;
        }
    }
    out.truncate(f.source_len);
    Waveform::new(out, f.sample_rate)
}

/// Full linear convolution via the frequency domain.
///
/// Output length is `len(w) + len(kernel) - 1`.
pub fn convolve(w: &Waveform, kernel: &Waveform) -> Result<Waveform> {
    if w.is_empty() || kernel.is_empty() {
        return Err(Error::EmptyInput);
    }
    if w.sample_rate != kernel.sample_rate {
        return Err(Error::SampleRateMismatch(w.sample_rate, kernel.sample_rate));
    }
    let out = fft_convolve(&w.samples, &kernel.samples);
    Ok(Waveform::new(out, w.sample_rate))
}

/// FFT-based full convolution of two real sequences.
pub fn fft_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let out_len = a.len() + b.len() - 1;
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);

    let mut fa: Vec<Complex<f64>> = a
        .iter()
        .map(|&x| Complex::new(x, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(n)
        .collect();
    let mut fb: Vec<Complex<f64>> = b
        .iter()
        .map(|&x| Complex::new(x, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(n)
        .collect();
    fft.process(&mut fa);
    fft.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    ifft.process(&mut fa);
    let scale = 1.0 / n as f64;
    fa.iter().take(out_len).map(|c| c.re * scale).collect()
}

/// Mean power in dB: `10*log10(mean(samples^2) + 1e-12)`.
pub fn power_db(w: &Waveform) -> Result<f64> {
    if w.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(10.0 * w.power().log10())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> Waveform {
        Waveform::new((0..n).map(|i| i as f64 * 0.01 - 1.0).collect(), 16000)
    }

    /// Direct O(n*m) convolution; oracle for the FFT path.
    fn convolve_direct(a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; a.len() + b.len() - 1];
        for (i, &x) in a.iter().enumerate() {
            for (j, &y) in b.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        out
    }

    #[test]
    fn frame_counts_64000() {
        let w = Waveform::zeros(64000, 16000);
        let f = frame(&w, 32, 16).unwrap();
        assert_eq!(f.num_frames, 3999);
        assert_eq!(f.source_len, 64000);
        // no padding: (64000 - 32) divisible by 16
        assert_eq!((f.num_frames - 1) * f.hop + f.frame_len, 64000);
    }

    #[test]
    fn frame_single_exact() {
        let w = ramp(32);
        let f = frame(&w, 32, 16).unwrap();
        assert_eq!(f.num_frames, 1);
        assert_eq!(f.frame(0), w.samples.as_slice());
    }

    #[test]
    fn frame_impulse_index_arithmetic() {
        let mut w = Waveform::zeros(64, 16000);
        w.samples[16] = 1.0;
        let f = frame(&w, 32, 16).unwrap();
        assert_eq!(f.frame(0)[16], 1.0);
        assert_eq!(f.frame(1)[0], 1.0);
        assert_eq!(f.frame(0).iter().sum::<f64>(), 1.0);
        assert_eq!(f.frame(1).iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn frame_empty_rejected() {
        let w = Waveform::new(vec![], 16000);
        assert!(matches!(frame(&w, 32, 16), Err(Error::EmptyInput)));
    }

    #[test]
    fn overlap_add_doubles_interior() {
        let w = ramp(128);
        let f = frame(&w, 32, 16).unwrap();
        let r = overlap_add(&f);
        assert_eq!(r.len(), 128);
        // interior samples covered by exactly two frames
        for t in 16..112 {
            assert!((r.samples[t] - 2.0 * w.samples[t]).abs() < 1e-12);
        }
        // first and last hop covered once
        for t in 0..16 {
            assert!((r.samples[t] - w.samples[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn overlap_add_round_trip_normalized() {
        let w = ramp(1000);
        let f = frame(&w, 32, 16).unwrap();
        let r = overlap_add_normalized(&f);
        assert_eq!(r.len(), w.len());
        for (a, b) in r.samples.iter().zip(&w.samples) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn overlap_add_single_frame() {
        let w = ramp(32);
        let f = frame(&w, 32, 16).unwrap();
        let r = overlap_add(&f);
        assert_eq!(r.samples, w.samples);
    }

    #[test]
    fn overlap_add_zeros() {
        let w = Waveform::zeros(100, 8000);
        let f = frame(&w, 32, 16).unwrap();
        let r = overlap_add(&f);
        assert!(r.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn convolve_identity_kernel() {
        let w = ramp(100);
        let delta = Waveform::new(vec![1.0], 16000);
        let c = convolve(&w, &delta).unwrap();
        assert_eq!(c.len(), 100);
        for (a, b) in c.samples.iter().zip(&w.samples) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn convolve_tiny_example() {
        let a = Waveform::new(vec![1.0, 0.0], 16000);
        let b = Waveform::new(vec![1.0, 1.0], 16000);
        let c = convolve(&a, &b).unwrap();
        assert_eq!(c.len(), 3);
        assert!((c.samples[0] - 1.0).abs() < 1e-12);
        assert!((c.samples[1] - 1.0).abs() < 1e-12);
        assert!(c.samples[2].abs() < 1e-12);
    }

    #[test]
    fn convolve_matches_direct_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let a: Vec<f64> = (0..1000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..257).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fast = fft_convolve(&a, &b);
        let direct = convolve_direct(&a, &b);
        let max_abs = direct.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (f, d) in fast.iter().zip(&direct) {
            assert!((f - d).abs() < 1e-10 * max_abs.max(1.0));
        }
    }

    #[test]
    fn convolve_rejects_rate_mismatch() {
        let a = Waveform::new(vec![1.0], 16000);
        let b = Waveform::new(vec![1.0], 8000);
        assert!(matches!(convolve(&a, &b), Err(Error::SampleRateMismatch(..))));
    }

    #[test]
    fn power_db_values() {
        let ones = Waveform::new(vec![1.0; 100], 16000);
        assert!(power_db(&ones).unwrap().abs() < 1e-6);

        let half = Waveform::new(vec![0.5; 100], 16000);
        assert!((power_db(&half).unwrap() - (-6.0206)).abs() < 1e-3);

        let zero = Waveform::zeros(100, 16000);
        assert!((power_db(&zero).unwrap() - (-120.0)).abs() < 1e-9);
    }

    #[test]
    fn equal_length_inputs_equal_frame_count() {
        for n in [4000usize, 4001, 4015, 4017] {
            let a = frame(&Waveform::zeros(n, 8000), 32, 16).unwrap();
            let b = frame(&Waveform::zeros(n, 8000), 32, 16).unwrap();
            assert_eq!(a.num_frames, b.num_frames);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn round_trip_any_length(len in 1usize..500, hop in 1usize..32) {
                let frame_len = 2 * hop;
                let w = Waveform::new(
                    (0..len).map(|i| ((i * 37 + 11) % 101) as f64 / 50.0 - 1.0).collect(),
                    8000,
                );
                let f = frame(&w, frame_len, hop).unwrap();
                let r = overlap_add_normalized(&f);
                prop_assert_eq!(r.len(), w.len());
                for (a, b) in r.samples.iter().zip(&w.samples) {
                    prop_assert!((a - b).abs() <= 1e-12);
                }
            }

            #[test]
            fn convolution_is_linear(seed in 0u64..1000) {
                use rand::{Rng, SeedableRng};
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let a: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let b: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let k: Vec<f64> = (0..17).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
                let ck = fft_convolve(&sum, &k);
                let ca = fft_convolve(&a, &k);
                let cb = fft_convolve(&b, &k);
                for i in 0..ck.len() {
                    prop_assert!((ck[i] - ca[i] - cb[i]).abs() < 1e-10);
                }
            }
        }
    }
}
