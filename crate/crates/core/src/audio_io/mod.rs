//! Waveform I/O, dataset manifests, SNR-controlled mixing, energy-based
//! clip classification and speaker/script-disjoint splits.

mod manifest;
mod mixing;
mod split;
mod wav;

pub use manifest::{ClipManifest, ManifestEntry, Role};
pub use mixing::{classify_clip_energy, level_dbfs, mix_at_snr, ClipClass, MixResult};
pub use split::{split_dataset, split_dataset_with, Segment, SplitAssignment, DEFAULT_PROPORTIONS};
pub use wav::{read_wav, write_wav};

use std::path::PathBuf;

use thiserror::Error;

/// Sample rate every pipeline stage assumes unless configured otherwise.
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Default energy threshold separating noise-only clips from mixtures.
pub const DEFAULT_THRESHOLD_DBFS: f64 = -35.0;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("{path}: not a RIFF/WAVE file")]
    NotWav { path: PathBuf },
    #[error("{path}: expected mono audio, found {channels} channels")]
    MultiChannel { path: PathBuf, channels: u16 },
    #[error("{path}: unsupported sample encoding ({detail})")]
    UnsupportedEncoding { path: PathBuf, detail: String },
    #[error("{path}: sample rate {actual} Hz, expected {expected} Hz")]
    SampleRateMismatch {
        path: PathBuf,
        expected: u32,
        actual: u32,
    },
    #[error("sample rates differ: {0} Hz vs {1} Hz")]
    RateMismatch(u32, u32),
    #[error("noise has {noise} samples but speech has {speech}")]
    NoiseTooShort { speech: usize, noise: usize },
    #[error("cannot mix a silent signal")]
    SilentInput,
    #[error("empty clip")]
    EmptyClip,
    #[error("need at least 3 distinct speakers, found {0}")]
    TooFewSpeakers(usize),
    #[error("need at least 3 distinct scripts, found {0}")]
    TooFewScripts(usize),
    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Mono time-domain signal with amplitudes nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::InvalidWaveform("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(AudioError::InvalidWaveform(format!("non-finite sample at index {i}")));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Waveform::new(vec![0.0; len], sample_rate).expect("zeros are finite")
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Mean squared amplitude; zero for an empty signal.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }
}
