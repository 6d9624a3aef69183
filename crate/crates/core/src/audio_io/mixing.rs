use super::{AudioError, Waveform};

#[derive(Debug, Clone)]
pub struct MixResult {
    pub mixture: Waveform,
    pub scaled_noise: Waveform,
    /// Gain applied to the noise.
    pub gain: f64,
}

/// Mixes speech with noise at the requested SNR. The noise is truncated to
/// the speech length and scaled by
/// `g = sqrt(P_s / (P_n * 10^(snr_db / 10)))`, with `P` the mean square
/// over the overlapped region.
pub fn mix_at_snr(speech: &Waveform, noise: &Waveform, snr_db: f64) -> Result<MixResult, AudioError> {
    if speech.sample_rate() != noise.sample_rate() {
        return Err(AudioError::RateMismatch(speech.sample_rate(), noise.sample_rate()));
    }
    if noise.len() < speech.len() {
        return Err(AudioError::NoiseTooShort {
            speech: speech.len(),
            noise: noise.len(),
        });
    }
    let n = speech.len();
    let noise = &noise.samples()[..n];
    let ps = speech.power();
    let pn = if n == 0 { 0.0 } else { noise.iter().map(|v| v * v).sum::<f64>() / n as f64 };
    if ps == 0.0 || pn == 0.0 {
        return Err(AudioError::SilentInput);
    }
    let gain = (ps / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    let scaled: Vec<f64> = noise.iter().map(|v| gain * v).collect();
    let mixture: Vec<f64> = speech.samples().iter().zip(&scaled).map(|(s, v)| s + v).collect();
    let rate = speech.sample_rate();
    Ok(MixResult {
        mixture: Waveform::new(mixture, rate)?,
        scaled_noise: Waveform::new(scaled, rate)?,
        gain,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClipClass {
    NoiseOnly,
    Mixture,
}

/// `10 log10(mean square)`; `-inf` for digital silence.
pub fn level_dbfs(w: &Waveform) -> f64 {
    10.0 * w.power().log10()
}

/// A clip is noise-only when its level is strictly below the threshold.
pub fn classify_clip_energy(w: &Waveform, threshold_dbfs: f64) -> Result<ClipClass, AudioError> {
    if w.is_empty() {
        return Err(AudioError::EmptyClip);
    }
    Ok(if level_dbfs(w) < threshold_dbfs {
        ClipClass::NoiseOnly
    } else {
        ClipClass::Mixture
    })
}
