//! Magnitude-domain spectral subtraction with over-subtraction and a
//! spectral floor.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio_io::Waveform;
use crate::dsp::{self, DspError, MagSpectrogram, N_BINS};

pub const DEFAULT_LEADING_MS: f64 = 500.0;

#[derive(Debug, Error)]
pub enum SsError {
    #[error("noise source yields no analysis frames")]
    EmptySource,
    #[error("noise profile has {0} bins, expected 513")]
    ProfileShapeMismatch(usize),
    #[error("invalid spectral subtraction settings: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsConfig {
    /// Over-subtraction factor.
    pub alpha: f64,
    /// Spectral floor relative to the noise profile.
    pub beta: f64,
    /// 1 subtracts magnitudes, 2 subtracts powers.
    pub p: u8,
}

impl Default for SsConfig {
    fn default() -> Self {
        SsConfig {
            alpha: 2.0,
            beta: 0.02,
            p: 1,
        }
    }
}

impl SsConfig {
    pub fn validate(&self) -> Result<(), SsError> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(SsError::InvalidConfig(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(SsError::InvalidConfig(format!("beta must lie in [0, 1), got {}", self.beta)));
        }
        if self.p != 1 && self.p != 2 {
            return Err(SsError::InvalidConfig(format!("p must be 1 or 2, got {}", self.p)));
        }
        Ok(())
    }
}

/// Per-bin `(mean over frames of |X|^p)^(1/p)` over every frame of every
/// magnitude array.
pub fn profile_from_magnitudes(mags: &[&Array2<f64>], p: u8) -> Result<Array1<f64>, SsError> {
    let frames: usize = mags.iter().map(|m| m.ncols()).sum();
    if frames == 0 {
        return Err(SsError::EmptySource);
    }
    let pf = p as i32;
    let mut acc = Array1::<f64>::zeros(N_BINS);
    for m in mags {
        if m.nrows() != N_BINS {
            return Err(SsError::ProfileShapeMismatch(m.nrows()));
        }
        for col in m.columns() {
            acc.zip_mut_with(&col, |a, &v| *a += v.powi(pf));
        }
    }
    Ok(acc.mapv(|s| (s / frames as f64).powf(1.0 / pf as f64)))
}

/// Profile over noise-only clips.
pub fn noise_profile_from_clips(clips: &[Waveform], p: u8) -> Result<Array1<f64>, SsError> {
    let mags: Vec<MagSpectrogram> = clips
        .iter()
        .map(|c| Ok(dsp::magnitude(&dsp::stft(c)?)))
        .collect::<Result<_, DspError>>()?;
    let refs: Vec<&Array2<f64>> = mags.iter().map(|m| &m.values).collect();
    profile_from_magnitudes(&refs, p)
}

/// Profile over the frames lying inside the first `ms` milliseconds.
pub fn noise_profile_leading(w: &Waveform, ms: f64, p: u8) -> Result<Array1<f64>, SsError> {
    let n = ((ms / 1000.0) * w.sample_rate() as f64).round() as usize;
    if n == 0 || w.is_empty() {
        return Err(SsError::EmptySource);
    }
    let head = Waveform::new(w.samples()[..n.min(w.len())].to_vec(), w.sample_rate())
        .expect("slice of a valid waveform");
    noise_profile_from_clips(&[head], p)
}

/// `max(|M|^p - alpha N^p, (beta N)^p)^(1/p)` per bin and frame.
pub fn subtract_magnitudes(mag: &Array2<f64>, profile: &Array1<f64>, cfg: &SsConfig) -> Result<Array2<f64>, SsError> {
    cfg.validate()?;
    if profile.len() != mag.nrows() || profile.len() != N_BINS {
        return Err(SsError::ProfileShapeMismatch(profile.len()));
    }
    let p = cfg.p as i32;
    let mut out = mag.clone();
    for (mut row, &nf) in out.rows_mut().into_iter().zip(profile) {
        let sub = cfg.alpha * nf.powi(p);
        let floor = (cfg.beta * nf).powi(p);
        row.mapv_inplace(|m| (m.powi(p) - sub).max(floor).powf(1.0 / p as f64));
    }
    Ok(out)
}

/// Spectral subtraction resynthesized with the mixture phase.
pub fn spectral_subtract(w: &Waveform, profile: &Array1<f64>, cfg: &SsConfig) -> Result<Waveform, SsError> {
    let spec = dsp::stft(w)?;
    let mag = dsp::magnitude(&spec);
    let values = subtract_magnitudes(&mag.values, profile, cfg)?;
    let cleaned = MagSpectrogram { values, ..mag };
    Ok(dsp::istft(&dsp::combine(&cleaned, &dsp::phase(&spec))?, w.len())?)
}
