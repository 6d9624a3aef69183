//! Inference through `E_m -> D_c`: the mixture encoder's posterior mean is
//! decoded by the clean decoder and resynthesized with the mixture phase.

use std::path::Path;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio_io::{Waveform, DEFAULT_SAMPLE_RATE};
use crate::dsp::{self, DspError, MagSpectrogram};
use crate::nn::Tape;
use crate::training::{Checkpoint, TrainError};
use crate::vae::{item_to_f64, single_item, ModelKind, Vae, VaeError};

#[derive(Debug, Error)]
pub enum EnhanceError {
    #[error("sample rate mismatch: models expect {expected} Hz, input has {actual} Hz")]
    RateMismatch { expected: u32, actual: u32 },
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Chunking {
    #[default]
    WholeClip,
    /// Consecutive windows of this many frames; the remainder is processed
    /// as a final shorter window.
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnhanceConfig {
    pub chunking: Chunking,
    pub sample_rate: u32,
}

impl Default for EnhanceConfig {
    fn default() -> Self {
        EnhanceConfig {
            chunking: Chunking::WholeClip,
            sample_rate: DEFAULT_SAMPLE_RATE,
        }
    }
}

/// A frozen MAE and CAE pair.
#[derive(Debug, Clone)]
pub struct Enhancer {
    mae: Vae<f32>,
    cae: Vae<f32>,
}

impl Enhancer {
    pub fn new(mae: Vae<f32>, cae: Vae<f32>) -> Result<Self, EnhanceError> {
        let (ma, ca) = (mae.architecture(), cae.architecture());
        if ma.kind != ModelKind::Mae || ca.kind != ModelKind::Cae {
            return Err(VaeError::ShapeMismatch("enhancement needs an MAE and a CAE".into()).into());
        }
        if ma.latent_dim() != ca.latent_dim() || ma.input_bins() != ca.input_bins() {
            return Err(VaeError::FingerprintMismatch {
                expected: ma.fingerprint(),
                found: ca.fingerprint(),
            }
            .into());
        }
        Ok(Enhancer { mae, cae })
    }

    /// Loads both checkpoints; the MAE must have been trained against a CAE
    /// with the given one's fingerprint.
    pub fn from_checkpoints(mae_path: &Path, cae_path: &Path) -> Result<Self, EnhanceError> {
        let mae = Checkpoint::load(mae_path)?;
        let cae = Checkpoint::load_model(cae_path, ModelKind::Cae)?;
        if mae.kind() != ModelKind::Mae {
            return Err(TrainError::Checkpoint(format!("{} is not an MAE checkpoint", mae_path.display())).into());
        }
        if let Some(fp) = &mae.cae_fingerprint {
            if *fp != cae.architecture().fingerprint() {
                return Err(VaeError::FingerprintMismatch {
                    expected: fp.clone(),
                    found: cae.architecture().fingerprint(),
                }
                .into());
            }
        }
        Self::new(mae.model, cae)
    }

    pub fn mae(&self) -> &Vae<f32> {
        &self.mae
    }

    pub fn cae(&self) -> &Vae<f32> {
        &self.cae
    }

    /// `D_c(mu(E_m(M)))` for one `bins x frames` magnitude array.
    pub fn enhance_array(&self, m: &Array2<f64>) -> Result<Array2<f64>, EnhanceError> {
        let mut tape = Tape::<f32>::new();
        let mb = self.mae.bind(&mut tape, false);
        let cb = self.cae.bind(&mut tape, false);
        let x = tape.constant(single_item(m));
        let h = self.mae.encode_eval(&mut tape, &mb, x)?;
        let y = self.cae.decode_eval(&mut tape, &cb, h.mu)?;
        Ok(item_to_f64(tape.value(y)))
    }

    pub fn enhance_mag(&self, m: &MagSpectrogram, chunking: Chunking) -> Result<MagSpectrogram, EnhanceError> {
        let t = m.frames();
        let values = match chunking {
            Chunking::WholeClip => self.enhance_array(&m.values)?,
            Chunking::Fixed(n) => {
                let n = n.max(1);
                let mut out = Array2::zeros(m.values.raw_dim());
                let mut start = 0;
                while start < t {
                    let end = (start + n).min(t);
                    let part = self.enhance_array(&m.values.slice(s![.., start..end]).to_owned())?;
                    out.slice_mut(s![.., start..end]).assign(&part);
                    start = end;
                }
                out
            }
        };
        Ok(MagSpectrogram {
            values,
            sample_rate: m.sample_rate,
            hop: m.hop,
        })
    }

    pub fn enhance(&self, w: &Waveform, cfg: &EnhanceConfig) -> Result<Waveform, EnhanceError> {
        if w.sample_rate() != cfg.sample_rate {
            return Err(EnhanceError::RateMismatch {
                expected: cfg.sample_rate,
                actual: w.sample_rate(),
            });
        }
        let spec = dsp::stft(w)?;
        let mag = dsp::magnitude(&spec);
        let clean = self.enhance_mag(&mag, cfg.chunking)?;
        let out = dsp::combine(&clean, &dsp::phase(&spec))?;
        Ok(dsp::istft(&out, w.len())?)
    }
}
