use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::audio_io::{DEFAULT_SAMPLE_RATE, DEFAULT_THRESHOLD_DBFS};
use crate::dsp::{FFT_SIZE, HOP};
use crate::losses::LossWeights;
use crate::vae::{Architecture, ModelKind, CAE_LADDER, KERNEL, MAE_LADDER};

pub const DEFAULT_CHUNK_FRAMES: usize = 128;
pub const DEFAULT_STEPS: u64 = 20_000;
pub const MIN_CHUNK_FRAMES: usize = 8;

/// Everything that shapes one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub lr: f64,
    /// Chunks per optimizer step.
    pub batch_size: usize,
    pub chunk_frames: usize,
    pub steps_phase1: u64,
    pub steps_phase2: u64,
    /// Share of each phase-two batch drawn from noise-only clips.
    pub noise_fraction: f64,
    pub weights: LossWeights,
    pub energy_threshold_dbfs: f64,
    /// Periodic checkpoint interval in steps; 0 disables.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            lr: 1e-3,
            batch_size: 8,
            chunk_frames: DEFAULT_CHUNK_FRAMES,
            steps_phase1: DEFAULT_STEPS,
            steps_phase2: DEFAULT_STEPS,
            noise_fraction: 0.3,
            weights: LossWeights::default(),
            energy_threshold_dbfs: DEFAULT_THRESHOLD_DBFS,
            checkpoint_every: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.noise_fraction) {
            return bad(format!("noise_fraction must lie in [0, 1], got {}", self.noise_fraction));
        }
        if self.chunk_frames < MIN_CHUNK_FRAMES {
            return bad(format!("chunk_frames must be at least {MIN_CHUNK_FRAMES}, got {}", self.chunk_frames));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !self.energy_threshold_dbfs.is_finite() {
            return bad("energy_threshold_dbfs must be finite".into());
        }
        self.weights.validate().map_err(TrainError::InvalidConfig)
    }

    /// Noise chunks per phase-two step.
    pub fn noise_chunks(&self) -> usize {
        (self.batch_size as f64 * self.noise_fraction).round() as usize
    }

    pub fn mixture_chunks(&self) -> usize {
        self.batch_size - self.noise_chunks().min(self.batch_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub clean_manifest: Option<PathBuf>,
    pub mix_manifest: Option<PathBuf>,
    /// Path of a noise-only manifest, or `auto` to route mixture clips by
    /// energy.
    pub noise_manifest: Option<String>,
    pub sample_rate: u32,
    pub energy_threshold_dbfs: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            clean_manifest: None,
            mix_manifest: None,
            noise_manifest: None,
            sample_rate: DEFAULT_SAMPLE_RATE,
            energy_threshold_dbfs: DEFAULT_THRESHOLD_DBFS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftSection {
    pub fft_size: usize,
    pub hop: usize,
}

impl Default for StftSection {
    fn default() -> Self {
        StftSection { fft_size: FFT_SIZE, hop: HOP }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub cae_ladder: Vec<usize>,
    pub mae_ladder: Vec<usize>,
    pub kernel: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            cae_ladder: CAE_LADDER.to_vec(),
            mae_ladder: MAE_LADDER.to_vec(),
            kernel: KERNEL,
        }
    }
}

impl ModelSection {
    pub fn architecture(&self, kind: ModelKind) -> Architecture {
        let ladder = match kind {
            ModelKind::Cae => &self.cae_ladder,
            ModelKind::Mae => &self.mae_ladder,
        };
        Architecture::custom(kind, ladder, self.kernel)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub seed: u64,
    pub lr: f64,
    pub batch_size: usize,
    pub chunk_frames: usize,
    pub steps_phase1: u64,
    pub steps_phase2: u64,
    pub noise_fraction: f64,
    pub checkpoint_every: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            seed: t.seed,
            lr: t.lr,
            batch_size: t.batch_size,
            chunk_frames: t.chunk_frames,
            steps_phase1: t.steps_phase1,
            steps_phase2: t.steps_phase2,
            noise_fraction: t.noise_fraction,
            checkpoint_every: t.checkpoint_every,
        }
    }
}

/// The TOML configuration file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub data: DataSection,
    pub stft: StftSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub loss_weights: LossWeights,
}

impl ConfigFile {
    /// Parses a TOML file; relative manifest paths resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data.clean_manifest, &mut cfg.data.mix_manifest].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(n) = &mut cfg.data.noise_manifest {
            if n != "auto" && Path::new(n).is_relative() {
                *n = base.join(&*n).to_string_lossy().into_owned();
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, TrainError> {
        let cfg: ConfigFile = toml::from_str(text).map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.stft.fft_size != FFT_SIZE || self.stft.hop != HOP {
            return Err(TrainError::InvalidConfig(format!(
                "the analysis geometry is fixed at fft_size = {FFT_SIZE}, hop = {HOP}"
            )));
        }
        for (name, ladder) in [("cae_ladder", &self.model.cae_ladder), ("mae_ladder", &self.model.mae_ladder)] {
            if ladder.len() < 2 || ladder.contains(&0) {
                return Err(TrainError::InvalidConfig(format!("{name} needs at least two nonzero sizes")));
            }
            if ladder[0] != FFT_SIZE / 2 + 1 {
                return Err(TrainError::InvalidConfig(format!("{name} must start at {} bins", FFT_SIZE / 2 + 1)));
            }
        }
        if self.model.cae_ladder.last() != self.model.mae_ladder.last() {
            return Err(TrainError::InvalidConfig("cae_ladder and mae_ladder must end in the same latent size".into()));
        }
        if self.model.kernel % 2 == 0 {
            return Err(TrainError::InvalidConfig("kernel width must be odd".into()));
        }
        if self.data.sample_rate == 0 {
            return Err(TrainError::InvalidConfig("sample_rate must be positive".into()));
        }
        self.train_config().validate()
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            seed: t.seed,
            lr: t.lr,
            batch_size: t.batch_size,
            chunk_frames: t.chunk_frames,
            steps_phase1: t.steps_phase1,
            steps_phase2: t.steps_phase2,
            noise_fraction: t.noise_fraction,
            weights: self.loss_weights,
            energy_threshold_dbfs: self.data.energy_threshold_dbfs,
            checkpoint_every: t.checkpoint_every,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ConfigFile::default();
        let back = ConfigFile::parse(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.model.architecture(ModelKind::Mae), Architecture::mae());
    }

    #[test]
    fn sections_and_overrides() {
        let cfg = ConfigFile::parse(
            "[train]\nseed = 5\nnoise_fraction = 0.5\nbatch_size = 10\n[loss_weights]\nlambda2 = 0.5\n[data]\nenergy_threshold_dbfs = -40.0\n",
        )
        .unwrap();
        let t = cfg.train_config();
        assert_eq!(t.seed, 5);
        assert_eq!(t.noise_chunks(), 5);
        assert_eq!(t.weights.lambda2, 0.5);
        assert_eq!(t.weights.lambda1, 0.01);
        assert_eq!(t.energy_threshold_dbfs, -40.0);
    }

    #[test]
    fn invalid_values_are_rejected() {
        for text in [
            "[train]\nnoise_fraction = 1.5\n",
            "[train]\nchunk_frames = 4\n",
            "[stft]\nhop = 128\n",
            "[loss_weights]\nlambda3 = -1.0\n",
            "[train]\nunknown_key = 1\n",
        ] {
            assert!(matches!(ConfigFile::parse(text), Err(TrainError::InvalidConfig(_))), "{text}");
        }
    }

    #[test]
    fn quota_arithmetic() {
        let t = TrainConfig {
            batch_size: 10,
            noise_fraction: 0.3,
            ..Default::default()
        };
        assert_eq!((t.noise_chunks(), t.mixture_chunks()), (3, 7));
    }
}
