use std::collections::HashMap;
use std::path::Path;

use ndarray::ArrayD;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::chunks::StreamState;
use super::{TrainConfig, TrainError};
use crate::nn::{read_tensor_file, write_tensor_file, AdamConfig, AdamState};
use crate::vae::{Architecture, ModelKind, Vae, VaeError};

const FORMAT: &str = "sse-checkpoint-1";
const PARAM: &str = "param/";
const ADAM_M: &str = "adam.m/";
const ADAM_V: &str = "adam.v/";

/// Serializable position of a ChaCha generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng, TrainError> {
        let bad = || TrainError::Checkpoint("malformed rng state".into());
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Metadata {
    format: String,
    kind: ModelKind,
    fingerprint: String,
    architecture: Architecture,
    step: u64,
    config: TrainConfig,
    adam: Option<(AdamConfig, u64)>,
    rng: RngState,
    streams: Vec<StreamState>,
    cae_fingerprint: Option<String>,
}

/// Model parameters and buffers plus everything needed to continue
/// training bitwise-identically.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Vae<f32>,
    pub step: u64,
    pub config: TrainConfig,
    pub adam: Option<AdamState<f32>>,
    pub rng: RngState,
    pub streams: Vec<StreamState>,
    /// Fingerprint of the frozen CAE a mixture model was trained against.
    pub cae_fingerprint: Option<String>,
}

impl Checkpoint {
    pub fn kind(&self) -> ModelKind {
        self.model.architecture().kind
    }

    pub fn fingerprint(&self) -> String {
        self.model.architecture().fingerprint()
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let arch = self.model.architecture();
        let meta = Metadata {
            format: FORMAT.into(),
            kind: arch.kind,
            fingerprint: arch.fingerprint(),
            architecture: arch.clone(),
            step: self.step,
            config: self.config.clone(),
            adam: self.adam.as_ref().map(|a| (a.config, a.step)),
            rng: self.rng.clone(),
            streams: self.streams.clone(),
            cae_fingerprint: self.cae_fingerprint.clone(),
        };
        let params = self.model.params();
        let mut tensors: Vec<(String, &ArrayD<f32>)> =
            params.iter().map(|p| (format!("{PARAM}{}", p.name), &p.value)).collect();
        if let Some(adam) = &self.adam {
            for ((p, m), v) in params.iter().zip(&adam.m).zip(&adam.v) {
                if p.trainable {
                    tensors.push((format!("{ADAM_M}{}", p.name), m));
                    tensors.push((format!("{ADAM_V}{}", p.name), v));
                }
            }
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|source| TrainError::Io {
                path: dir.to_path_buf(),
                source,
            })?;
        }
        let meta = serde_json::to_value(&meta).expect("metadata serializes");
        write_tensor_file(path, &tensors, &json!(meta)).map_err(|e| TrainError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let file = read_tensor_file::<f32>(path).map_err(|e| TrainError::Checkpoint(format!("{}: {e}", path.display())))?;
        let meta: Metadata = serde_json::from_value(file.metadata)
            .map_err(|e| TrainError::Checkpoint(format!("{}: bad metadata: {e}", path.display())))?;
        if meta.format != FORMAT {
            return Err(TrainError::Checkpoint(format!("{}: unknown format {}", path.display(), meta.format)));
        }
        if meta.fingerprint != meta.architecture.fingerprint() || meta.kind != meta.architecture.kind {
            return Err(VaeError::FingerprintMismatch {
                expected: meta.architecture.fingerprint(),
                found: meta.fingerprint,
            }
            .into());
        }
        let by_prefix = |prefix: &str| -> HashMap<String, ArrayD<f32>> {
            file.tensors
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|n| (n.to_string(), v.clone())))
                .collect()
        };
        let model = Vae::from_tensors(meta.architecture.clone(), &by_prefix(PARAM))?;
        let adam = match meta.adam {
            None => None,
            Some((config, step)) => {
                let mut state = AdamState::new(config, model.params());
                state.step = step;
                let m = by_prefix(ADAM_M);
                let v = by_prefix(ADAM_V);
                for (i, p) in model.params().iter().enumerate() {
                    if !p.trainable {
                        continue;
                    }
                    let missing = || TrainError::Checkpoint(format!("optimizer state for `{}` missing", p.name));
                    let (mm, vv) = (m.get(&p.name).ok_or_else(missing)?, v.get(&p.name).ok_or_else(missing)?);
                    if mm.shape() != p.value.shape() || vv.shape() != p.value.shape() {
                        return Err(TrainError::Checkpoint(format!("optimizer state for `{}` has wrong shape", p.name)));
                    }
                    state.m[i] = mm.clone();
                    state.v[i] = vv.clone();
                }
                Some(state)
            }
        };
        Ok(Checkpoint {
            model,
            step: meta.step,
            config: meta.config,
            adam,
            rng: meta.rng,
            streams: meta.streams,
            cae_fingerprint: meta.cae_fingerprint,
        })
    }

    /// Loads a checkpoint and checks it holds the expected architecture.
    pub fn load_expecting(path: &Path, expected: &Architecture) -> Result<Self, TrainError> {
        let ck = Self::load(path)?;
        if ck.model.architecture() != expected {
            return Err(VaeError::FingerprintMismatch {
                expected: expected.fingerprint(),
                found: ck.fingerprint(),
            }
            .into());
        }
        Ok(ck)
    }

    /// Loads only the model, checking its kind.
    pub fn load_model(path: &Path, kind: ModelKind) -> Result<Vae<f32>, TrainError> {
        let ck = Self::load(path)?;
        if ck.kind() != kind {
            return Err(TrainError::Checkpoint(format!(
                "{} holds a {} model, expected {}",
                path.display(),
                ck.kind().prefix(),
                kind.prefix()
            )));
        }
        Ok(ck.model)
    }

    /// Bitwise equality of every stored tensor and training counter.
    pub fn same_state(&self, other: &Checkpoint) -> bool {
        let tensors_eq = |a: &[ArrayD<f32>], b: &[ArrayD<f32>]| {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.shape() == y.shape() && x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()))
        };
        let values = |c: &Checkpoint| c.model.params().iter().map(|p| p.value.clone()).collect::<Vec<_>>();
        let adam_eq = match (&self.adam, &other.adam) {
            (None, None) => true,
            (Some(a), Some(b)) => a.step == b.step && tensors_eq(&a.m, &b.m) && tensors_eq(&a.v, &b.v),
            _ => false,
        };
        self.model.architecture() == other.model.architecture()
            && self.step == other.step
            && self.rng == other.rng
            && self.streams == other.streams
            && tensors_eq(&values(self), &values(other))
            && adam_eq
    }
}
