//! Synthetic signals for tests and desk-scale experiments: syllable-like
//! harmonic clips, band-limited and white noise.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::audio_io::{mix_at_snr, Waveform};

#[derive(Debug, Clone)]
pub struct ToneParams {
    /// Fundamental frequency range in Hz.
    pub f0_hz: (f64, f64),
    /// Harmonics above this frequency are omitted.
    pub max_harmonic_hz: f64,
    /// Voiced segment duration range in seconds.
    pub segment_secs: (f64, f64),
    /// Silence between segments in seconds.
    pub gap_secs: (f64, f64),
    /// Relative pitch change across one segment, drawn from `[-g, g]`.
    pub glide: f64,
    /// RMS of the voiced parts.
    pub rms: f64,
}

impl Default for ToneParams {
    fn default() -> Self {
        ToneParams {
            f0_hz: (100.0, 300.0),
            max_harmonic_hz: 2500.0,
            segment_secs: (0.15, 0.4),
            gap_secs: (0.04, 0.16),
            glide: 0.15,
            rms: 0.02,
        }
    }
}

/// A clip of multi-harmonic segments, each with a random fundamental,
/// glide, harmonic weighting and raised-cosine envelope, separated by gaps.
pub fn harmonic_clip<R: Rng + ?Sized>(rng: &mut R, len: usize, sample_rate: u32, p: &ToneParams) -> Waveform {
    let sr = sample_rate as f64;
    let mut out = vec![0.0; len];
    let mut pos = (rng.random_range(p.gap_secs.0..=p.gap_secs.1) * sr) as usize;
    while pos < len {
        let seg = ((rng.random_range(p.segment_secs.0..=p.segment_secs.1)) * sr) as usize;
        let f_start = rng.random_range(p.f0_hz.0..=p.f0_hz.1);
        let f_end = f_start * (1.0 + rng.random_range(-p.glide..=p.glide));
        let n_harm = ((p.max_harmonic_hz / f_start.max(f_end)).floor() as usize).max(1);
        let tilt = rng.random_range(0.5..1.5);
        let weights: Vec<f64> = (1..=n_harm)
            .map(|h| rng.random_range(0.5..1.0) / (h as f64).powf(tilt))
            .collect();
        let phases: Vec<f64> = (0..n_harm).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        let end = (pos + seg).min(len);
        let mut phase = 0.0;
        let mut segment = Vec::with_capacity(end - pos);
        for i in 0..end - pos {
            let frac = i as f64 / seg as f64;
            let f0 = f_start + (f_end - f_start) * frac;
            phase += 2.0 * PI * f0 / sr;
            let env = 0.5 * (1.0 - (2.0 * PI * frac).cos());
            let v: f64 = weights
                .iter()
                .zip(&phases)
                .enumerate()
                .map(|(h, (w, ph))| w * ((h + 1) as f64 * phase + ph).sin())
                .sum();
            segment.push(env * v);
        }
        let rms = (segment.iter().map(|v| v * v).sum::<f64>() / segment.len().max(1) as f64).sqrt();
        if rms > 0.0 {
            let gain = p.rms * rng.random_range(0.7..1.3) / rms;
            for (o, v) in out[pos..end].iter_mut().zip(segment) {
                *o = v * gain;
            }
        }
        pos = end + (rng.random_range(p.gap_secs.0..=p.gap_secs.1) * sr) as usize;
    }
    Waveform::new(out, sample_rate).expect("finite synthesis")
}

/// Gaussian white noise with the given RMS.
pub fn white_noise<R: Rng + ?Sized>(rng: &mut R, len: usize, sample_rate: u32, rms: f64) -> Waveform {
    let v: Vec<f64> = (0..len)
        .map(|_| {
            let x: f64 = StandardNormal.sample(rng);
            x * rms
        })
        .collect();
    Waveform::new(v, sample_rate).expect("finite noise")
}

/// White noise restricted to `[lo_hz, hi_hz]` by zeroing DFT bins outside
/// the band, rescaled to the given RMS.
pub fn band_noise<R: Rng + ?Sized>(
    rng: &mut R,
    len: usize,
    sample_rate: u32,
    lo_hz: f64,
    hi_hz: f64,
    rms: f64,
) -> Waveform {
    let mut buf: Vec<Complex64> = (0..len)
        .map(|_| Complex64::new(StandardNormal.sample(rng), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    let sr = sample_rate as f64;
    for (k, c) in buf.iter_mut().enumerate() {
        let f = k.min(len - k) as f64 * sr / len as f64;
        if f < lo_hz || f > hi_hz {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let mut v: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let cur = (v.iter().map(|x| x * x).sum::<f64>() / len.max(1) as f64).sqrt();
    if cur > 0.0 {
        for x in &mut v {
            *x *= rms / cur;
        }
    }
    Waveform::new(v, sample_rate).expect("finite noise")
}

/// Sizes and levels of a synthetic enhancement corpus.
#[derive(Debug, Clone)]
pub struct ToyCorpusSpec {
    pub sample_rate: u32,
    pub clip_secs: f64,
    pub test_secs: f64,
    pub n_clean: usize,
    pub n_mix: usize,
    pub n_noise: usize,
    pub n_test: usize,
    pub snr_db: f64,
    pub noise_band_hz: (f64, f64),
    pub tone: ToneParams,
}

impl Default for ToyCorpusSpec {
    fn default() -> Self {
        ToyCorpusSpec {
            sample_rate: 16_000,
            clip_secs: 4.0,
            test_secs: 2.0,
            n_clean: 20,
            n_mix: 40,
            n_noise: 20,
            n_test: 50,
            snr_db: 0.0,
            noise_band_hz: (2000.0, 6000.0),
            tone: ToneParams::default(),
        }
    }
}

/// A held-out mixture with its clean reference.
#[derive(Debug, Clone)]
pub struct TestPair {
    pub clean: Waveform,
    pub mixture: Waveform,
}

/// Clean clips, mixtures and noise-only clips for training, plus held-out
/// mixtures and noise-only clips. Every clip uses fresh random content.
#[derive(Debug, Clone)]
pub struct ToyCorpus {
    pub clean: Vec<Waveform>,
    pub mixtures: Vec<Waveform>,
    pub noise: Vec<Waveform>,
    pub test: Vec<TestPair>,
    pub test_noise: Vec<Waveform>,
}

impl ToyCorpus {
    pub fn generate(seed: u64, spec: &ToyCorpusSpec) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let sr = spec.sample_rate;
        let len = (spec.clip_secs * sr as f64) as usize;
        let test_len = (spec.test_secs * sr as f64) as usize;
        let (lo, hi) = spec.noise_band_hz;
        let mix = |rng: &mut rand_chacha::ChaCha8Rng, n: usize| {
            let speech = harmonic_clip(rng, n, sr, &spec.tone);
            let noise = band_noise(rng, n, sr, lo, hi, 0.05);
            let m = mix_at_snr(&speech, &noise, spec.snr_db).expect("non-silent synthetic clips");
            (speech, m)
        };
        let clean = (0..spec.n_clean).map(|_| harmonic_clip(&mut rng, len, sr, &spec.tone)).collect();
        let mixtures = (0..spec.n_mix).map(|_| mix(&mut rng, len).1.mixture).collect();
        let noise = (0..spec.n_noise).map(|_| mix(&mut rng, len).1.scaled_noise).collect();
        let test = (0..spec.n_test)
            .map(|_| {
                let (clean, m) = mix(&mut rng, test_len);
                TestPair {
                    clean,
                    mixture: m.mixture,
                }
            })
            .collect();
        let test_noise = (0..spec.n_test).map(|_| mix(&mut rng, test_len).1.scaled_noise).collect();
        ToyCorpus {
            clean,
            mixtures,
            noise,
            test,
            test_noise,
        }
    }
}
