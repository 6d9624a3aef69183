//! Two-phase training: the CAE on clean magnitudes, then the MAE on
//! mixtures (and optionally noise-only clips) against the frozen CAE.

mod checkpoint;
mod chunks;
mod config;

pub use checkpoint::{Checkpoint, RngState};
pub use chunks::{make_chunks, ChunkRef, ChunkStream, StreamState};
pub use config::{
    ConfigFile, DataSection, ModelSection, StftSection, TrainConfig, TrainSection, DEFAULT_CHUNK_FRAMES,
    DEFAULT_STEPS, MIN_CHUNK_FRAMES,
};

use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayD, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::audio_io::{classify_clip_energy, read_wav, AudioError, ClipClass, ClipManifest, Waveform};
use crate::dsp::{self, DspError};
use crate::losses::{loss_cae, loss_mae_total, LossReport};
use crate::nn::{fnv1a64, AdamConfig, AdamState, NnError, Tape};
use crate::vae::{Architecture, ModelKind, Vae, VaeError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no trainable data: {0}")]
    NoTrainableData(String),
    #[error("noise_fraction is positive but no noise-only clips are available")]
    NoNoiseData,
    #[error("non-finite loss at step {step} in term `{term}`")]
    NonFinite { step: u64, term: &'static str },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

impl From<NnError> for TrainError {
    fn from(e: NnError) -> Self {
        TrainError::Vae(e.into())
    }
}

/// Magnitude spectrogram of a clip in training precision.
pub fn clip_magnitudes(w: &Waveform) -> Result<Array2<f32>, DspError> {
    Ok(dsp::magnitude(&dsp::stft(w)?).values.mapv(|v| v as f32))
}

pub fn load_clips(manifest: &ClipManifest, sample_rate: u32) -> Result<Vec<Waveform>, AudioError> {
    manifest.entries.iter().map(|e| read_wav(&e.path, sample_rate)).collect()
}

/// Splits clips into (mixture, noise-only) by their energy level.
pub fn route_by_energy(clips: Vec<Waveform>, threshold_dbfs: f64) -> Result<(Vec<Waveform>, Vec<Waveform>), AudioError> {
    let mut mix = Vec::new();
    let mut noise = Vec::new();
    for c in clips {
        match classify_clip_energy(&c, threshold_dbfs)? {
            ClipClass::Mixture => mix.push(c),
            ClipClass::NoiseOnly => noise.push(c),
        }
    }
    Ok((mix, noise))
}

/// Mean of the trailing `window` values ending at each index.
pub fn running_average(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            values[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

fn derived_seed(seed: u64, label: &str) -> u64 {
    seed ^ fnv1a64(label.as_bytes())
}

fn sampling_rng(seed: u64, kind: ModelKind) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a64(format!("{}.sampling", kind.prefix()).as_bytes()));
    rng
}

fn spectrograms(clips: &[Waveform]) -> Result<Vec<Array2<f32>>, DspError> {
    clips.iter().map(clip_magnitudes).collect()
}

fn take_batch(stream: &mut ChunkStream, clips: &[Array2<f32>], n: usize) -> ArrayD<f32> {
    let items: Vec<Array2<f32>> = (0..n).map(|_| stream.next_array(clips).expect("non-empty stream")).collect();
    let views: Vec<_> = items.iter().map(|a| a.view().insert_axis(Axis(1))).collect();
    ndarray::concatenate(Axis(1), &views).expect("equal chunk shapes").into_dyn()
}

fn check_finite(step: u64, r: &LossReport) -> Result<(), TrainError> {
    match r.first_non_finite() {
        Some(term) => Err(TrainError::NonFinite { step, term }),
        None => Ok(()),
    }
}

/// Phase one: the clean autoencoder.
#[derive(Debug, Clone)]
pub struct CaeTrainer {
    config: TrainConfig,
    model: Vae<f32>,
    adam: AdamState<f32>,
    rng: ChaCha8Rng,
    stream: ChunkStream,
    clips: Vec<Array2<f32>>,
    step: u64,
}

impl CaeTrainer {
    pub fn new(arch: Architecture, config: TrainConfig, clean: &[Waveform]) -> Result<Self, TrainError> {
        config.validate()?;
        let clips = spectrograms(clean)?;
        let model = Vae::new(arch, config.seed);
        let adam = AdamState::new(adam_config(&config), model.params());
        let rng = sampling_rng(config.seed, ModelKind::Cae);
        Self::assemble(config, model, adam, rng, clips, 0, None)
    }

    /// Continues from a checkpoint written by a trainer over the same data.
    pub fn resume(ck: Checkpoint, clean: &[Waveform]) -> Result<Self, TrainError> {
        if ck.kind() != ModelKind::Cae {
            return Err(TrainError::Checkpoint("expected a CAE checkpoint".into()));
        }
        let adam = ck.adam.ok_or_else(|| TrainError::Checkpoint("checkpoint has no optimizer state".into()))?;
        let rng = ck.rng.restore()?;
        let state = ck.streams.first().copied();
        Self::assemble(ck.config, ck.model, adam, rng, spectrograms(clean)?, ck.step, state)
    }

    fn assemble(
        config: TrainConfig,
        model: Vae<f32>,
        adam: AdamState<f32>,
        rng: ChaCha8Rng,
        clips: Vec<Array2<f32>>,
        step: u64,
        state: Option<StreamState>,
    ) -> Result<Self, TrainError> {
        check_bins(&model, &clips)?;
        let mut stream = make_chunks(&clips, config.chunk_frames, derived_seed(config.seed, "clean"));
        if stream.is_empty() {
            return Err(TrainError::NoTrainableData(format!(
                "no clean clip spans {} frames",
                config.chunk_frames
            )));
        }
        if let Some(s) = state {
            stream.restore(s);
        }
        Ok(CaeTrainer {
            config,
            model,
            adam,
            rng,
            stream,
            clips,
            step,
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn model(&self) -> &Vae<f32> {
        &self.model
    }

    pub fn chunks_per_epoch(&self) -> usize {
        self.stream.per_epoch()
    }

    /// One optimizer step on one batch.
    pub fn train_step(&mut self) -> Result<LossReport, TrainError> {
        let batch = take_batch(&mut self.stream, &self.clips, self.config.batch_size);
        let mut tape = Tape::new();
        let bound = self.model.bind(&mut tape, true);
        let x = tape.constant(batch);
        let g = loss_cae(&mut tape, &mut self.model, &bound, x, &self.config.weights, &mut self.rng)?;
        check_finite(self.step + 1, &g.report)?;
        tape.backward(g.total)?;
        self.model.params_mut().accumulate_grads(&bound, &tape);
        drop(tape);
        self.adam.step(self.model.params_mut());
        self.step += 1;
        Ok(g.report)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            step: self.step,
            config: self.config.clone(),
            adam: Some(self.adam.clone()),
            rng: RngState::capture(&self.rng),
            streams: vec![self.stream.state()],
            cae_fingerprint: None,
        }
    }
}

/// Phase two: the mixture autoencoder against a frozen CAE.
#[derive(Debug, Clone)]
pub struct MaeTrainer {
    config: TrainConfig,
    model: Vae<f32>,
    cae: Vae<f32>,
    adam: AdamState<f32>,
    rng: ChaCha8Rng,
    mix_stream: ChunkStream,
    noise_stream: ChunkStream,
    mix: Vec<Array2<f32>>,
    noise: Vec<Array2<f32>>,
    step: u64,
}

impl MaeTrainer {
    pub fn new(
        arch: Architecture,
        config: TrainConfig,
        cae: Vae<f32>,
        mixtures: &[Waveform],
        noise: &[Waveform],
    ) -> Result<Self, TrainError> {
        config.validate()?;
        let model = Vae::new(arch, config.seed);
        let adam = AdamState::new(adam_config(&config), model.params());
        let rng = sampling_rng(config.seed, ModelKind::Mae);
        Self::assemble(config, model, cae, adam, rng, spectrograms(mixtures)?, spectrograms(noise)?, 0, &[])
    }

    pub fn resume(ck: Checkpoint, cae: Vae<f32>, mixtures: &[Waveform], noise: &[Waveform]) -> Result<Self, TrainError> {
        if ck.kind() != ModelKind::Mae {
            return Err(TrainError::Checkpoint("expected an MAE checkpoint".into()));
        }
        if let Some(fp) = &ck.cae_fingerprint {
            if *fp != cae.architecture().fingerprint() {
                return Err(VaeError::FingerprintMismatch {
                    expected: fp.clone(),
                    found: cae.architecture().fingerprint(),
                }
                .into());
            }
        }
        let adam = ck.adam.ok_or_else(|| TrainError::Checkpoint("checkpoint has no optimizer state".into()))?;
        let rng = ck.rng.restore()?;
        Self::assemble(
            ck.config,
            ck.model,
            cae,
            adam,
            rng,
            spectrograms(mixtures)?,
            spectrograms(noise)?,
            ck.step,
            &ck.streams,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        config: TrainConfig,
        model: Vae<f32>,
        cae: Vae<f32>,
        adam: AdamState<f32>,
        rng: ChaCha8Rng,
        mix: Vec<Array2<f32>>,
        noise: Vec<Array2<f32>>,
        step: u64,
        states: &[StreamState],
    ) -> Result<Self, TrainError> {
        if cae.architecture().kind != ModelKind::Cae {
            return Err(TrainError::Checkpoint("frozen model must be a CAE".into()));
        }
        if cae.architecture().input_bins() != model.architecture().input_bins()
            || cae.architecture().latent_dim() != model.architecture().latent_dim()
        {
            return Err(VaeError::FingerprintMismatch {
                expected: model.architecture().fingerprint(),
                found: cae.architecture().fingerprint(),
            }
            .into());
        }
        if config.mixture_chunks() == 0 {
            return Err(TrainError::InvalidConfig(
                "noise_fraction leaves no mixture chunks in a batch".into(),
            ));
        }
        check_bins(&model, &mix)?;
        check_bins(&model, &noise)?;
        let mut mix_stream = make_chunks(&mix, config.chunk_frames, derived_seed(config.seed, "mixture"));
        let mut noise_stream = make_chunks(&noise, config.chunk_frames, derived_seed(config.seed, "noise"));
        if mix_stream.is_empty() {
            return Err(TrainError::NoTrainableData(format!(
                "no mixture clip spans {} frames",
                config.chunk_frames
            )));
        }
        if config.noise_chunks() > 0 && noise_stream.is_empty() {
            return Err(TrainError::NoNoiseData);
        }
        if let [m, n] = states {
            mix_stream.restore(*m);
            noise_stream.restore(*n);
        }
        Ok(MaeTrainer {
            config,
            model,
            cae,
            adam,
            rng,
            mix_stream,
            noise_stream,
            mix,
            noise,
            step,
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn model(&self) -> &Vae<f32> {
        &self.model
    }

    pub fn cae(&self) -> &Vae<f32> {
        &self.cae
    }

    pub fn train_step(&mut self) -> Result<LossReport, TrainError> {
        let n_noise = self.config.noise_chunks();
        let mix = take_batch(&mut self.mix_stream, &self.mix, self.config.mixture_chunks());
        let noise = (n_noise > 0).then(|| take_batch(&mut self.noise_stream, &self.noise, n_noise));
        let mut tape = Tape::new();
        let bound = self.model.bind(&mut tape, true);
        let m = tape.constant(mix);
        let n = noise.map(|a| tape.constant(a));
        let g = loss_mae_total(
            &mut tape,
            &mut self.model,
            &bound,
            &self.cae,
            m,
            n,
            &self.config.weights,
            &mut self.rng,
        )?;
        check_finite(self.step + 1, &g.report)?;
        tape.backward(g.total)?;
        self.model.params_mut().accumulate_grads(&bound, &tape);
        drop(tape);
        self.adam.step(self.model.params_mut());
        self.step += 1;
        Ok(g.report)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            step: self.step,
            config: self.config.clone(),
            adam: Some(self.adam.clone()),
            rng: RngState::capture(&self.rng),
            streams: vec![self.mix_stream.state(), self.noise_stream.state()],
            cae_fingerprint: Some(self.cae.architecture().fingerprint()),
        }
    }
}

fn adam_config(c: &TrainConfig) -> AdamConfig {
    AdamConfig {
        lr: c.lr,
        ..AdamConfig::default()
    }
}

fn check_bins(model: &Vae<f32>, clips: &[Array2<f32>]) -> Result<(), TrainError> {
    let bins = model.architecture().input_bins();
    match clips.iter().find(|c| c.nrows() != bins) {
        Some(c) => Err(VaeError::ShapeMismatch(format!("clip has {} bins, model expects {bins}", c.nrows())).into()),
        None => Ok(()),
    }
}

/// Where a run writes its checkpoints and loss log.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
}

impl RunOutput {
    pub fn final_checkpoint(&self, kind: ModelKind) -> PathBuf {
        self.dir.join(format!("{}.ckpt", kind.prefix()))
    }

    pub fn periodic_checkpoint(&self, kind: ModelKind, step: u64) -> PathBuf {
        self.dir.join(format!("{}_step{step:08}.ckpt", kind.prefix()))
    }

    pub fn loss_log(&self, kind: ModelKind) -> PathBuf {
        self.dir.join(format!("{}_loss.csv", kind.prefix()))
    }
}

/// One row per step: `step`, every loss term, `total`.
pub fn write_loss_log(path: &Path, rows: &[(u64, LossReport)]) -> Result<(), TrainError> {
    let io = |e: csv::Error| TrainError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let mut header = vec!["step"];
    header.extend(LossReport::COLUMNS);
    w.write_record(&header).map_err(io)?;
    for (step, r) in rows {
        let mut rec = vec![step.to_string()];
        rec.extend(r.values().iter().map(|v| format!("{v:e}")));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_loss_log(path: &Path) -> Result<Vec<(u64, LossReport)>, TrainError> {
    let bad = |m: String| TrainError::Checkpoint(format!("{}: {m}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let step: u64 = rec.get(0).unwrap_or("").parse().map_err(|_| bad("bad step".into()))?;
        let mut v = [0.0; 9];
        for (i, slot) in v.iter_mut().enumerate() {
            *slot = rec.get(i + 1).unwrap_or("").parse().map_err(|_| bad("bad value".into()))?;
        }
        rows.push((step, LossReport::from_values(v)));
    }
    Ok(rows)
}

fn save_if_due(ck: impl FnOnce() -> Checkpoint, out: Option<&RunOutput>, kind: ModelKind, step: u64, every: u64) -> Result<(), TrainError> {
    if let Some(out) = out {
        if every > 0 && step % every == 0 {
            ck().save(&out.periodic_checkpoint(kind, step))?;
        }
    }
    Ok(())
}

/// Phase one end to end: `steps_phase1` steps, periodic checkpoints, the
/// final checkpoint and the loss log.
pub fn train_cae(
    arch: Architecture,
    config: &TrainConfig,
    clean: &[Waveform],
    out: Option<&RunOutput>,
) -> Result<(Checkpoint, Vec<(u64, LossReport)>), TrainError> {
    let mut t = CaeTrainer::new(arch, config.clone(), clean)?;
    let mut log = Vec::new();
    while t.step() < config.steps_phase1 {
        let r = t.train_step()?;
        log.push((t.step(), r));
        save_if_due(|| t.checkpoint(), out, ModelKind::Cae, t.step(), config.checkpoint_every)?;
        if t.step() % 100 == 0 {
            log::info!("cae step {} total {:.5}", t.step(), r.total);
        }
    }
    finish(t.checkpoint(), log, out, ModelKind::Cae)
}

/// Phase two end to end against the frozen `cae`.
pub fn train_mae(
    arch: Architecture,
    config: &TrainConfig,
    cae: Vae<f32>,
    mixtures: &[Waveform],
    noise: &[Waveform],
    out: Option<&RunOutput>,
) -> Result<(Checkpoint, Vec<(u64, LossReport)>), TrainError> {
    let mut t = MaeTrainer::new(arch, config.clone(), cae, mixtures, noise)?;
    let mut log = Vec::new();
    while t.step() < config.steps_phase2 {
        let r = t.train_step()?;
        log.push((t.step(), r));
        save_if_due(|| t.checkpoint(), out, ModelKind::Mae, t.step(), config.checkpoint_every)?;
        if t.step() % 100 == 0 {
            log::info!("mae step {} total {:.5}", t.step(), r.total);
        }
    }
    finish(t.checkpoint(), log, out, ModelKind::Mae)
}

fn finish(
    ck: Checkpoint,
    log: Vec<(u64, LossReport)>,
    out: Option<&RunOutput>,
    kind: ModelKind,
) -> Result<(Checkpoint, Vec<(u64, LossReport)>), TrainError> {
    if let Some(out) = out {
        std::fs::create_dir_all(&out.dir).map_err(|source| TrainError::Io {
            path: out.dir.clone(),
            source,
        })?;
        ck.save(&out.final_checkpoint(kind))?;
        write_loss_log(&out.loss_log(kind), &log)?;
    }
    Ok((ck, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{band_noise, harmonic_clip, ToneParams};

    fn toy_arch(kind: ModelKind) -> Architecture {
        match kind {
            ModelKind::Cae => Architecture::custom(kind, &[513, 16, 8], 7),
            ModelKind::Mae => Architecture::custom(kind, &[513, 20, 12, 8], 7),
        }
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 3,
            chunk_frames: 8,
            steps_phase1: 6,
            steps_phase2: 6,
            noise_fraction: 0.34,
            checkpoint_every: 0,
            ..Default::default()
        }
    }

    fn clips(seed: u64, n: usize) -> Vec<Waveform> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| harmonic_clip(&mut rng, 12_000, 16_000, &ToneParams::default())).collect()
    }

    fn noises(seed: u64, n: usize) -> Vec<Waveform> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| band_noise(&mut rng, 12_000, 16_000, 2000.0, 5000.0, 0.02)).collect()
    }

    #[test]
    fn running_average_window() {
        let v = running_average(&[1.0, 2.0, 3.0, 4.0], 2);
        assert_eq!(v, vec![1.0, 1.5, 2.5, 3.5]);
    }

    #[test]
    fn zero_steps_returns_the_initialization() {
        let c = TrainConfig {
            steps_phase1: 0,
            ..cfg()
        };
        let (ck, log) = train_cae(toy_arch(ModelKind::Cae), &c, &clips(1, 2), None).unwrap();
        assert!(log.is_empty());
        let init = Vae::<f32>::new(toy_arch(ModelKind::Cae), c.seed);
        for (a, b) in ck.model.params().iter().zip(init.params().iter()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn too_short_clips_are_rejected() {
        let short = vec![Waveform::zeros(2000, 16_000)];
        assert!(matches!(
            CaeTrainer::new(toy_arch(ModelKind::Cae), cfg(), &short),
            Err(TrainError::NoTrainableData(_))
        ));
    }

    #[test]
    fn mae_quota_and_frozen_cae() {
        let (cae_ck, _) = train_cae(toy_arch(ModelKind::Cae), &cfg(), &clips(1, 2), None).unwrap();
        let frozen = cae_ck.model.clone();
        let mix = clips(2, 2);
        assert!(matches!(
            MaeTrainer::new(toy_arch(ModelKind::Mae), cfg(), frozen.clone(), &mix, &[]),
            Err(TrainError::NoNoiseData)
        ));
        let (ck, log) = train_mae(toy_arch(ModelKind::Mae), &cfg(), frozen.clone(), &mix, &noises(3, 2), None).unwrap();
        assert_eq!(log.len(), 6);
        assert!(log.iter().all(|(_, r)| r.l_n_recon > 0.0 && r.l_cae == 0.0));
        let none = TrainConfig {
            noise_fraction: 0.0,
            ..cfg()
        };
        let (_, log0) = train_mae(toy_arch(ModelKind::Mae), &none, frozen.clone(), &mix, &[], None).unwrap();
        assert!(log0.iter().all(|(_, r)| r.l_n_recon == 0.0 && r.l_n_silence == 0.0));
        assert_eq!(ck.cae_fingerprint, Some(frozen.architecture().fingerprint()));
    }

    #[test]
    fn log_total_matches_recomposition() {
        let (_, log) = train_cae(toy_arch(ModelKind::Cae), &cfg(), &clips(1, 2), None).unwrap();
        let w = cfg().weights;
        for (_, r) in log {
            assert!((r.total - r.recompose(&w)).abs() <= 1e-6 * r.total.abs());
        }
    }

    #[test]
    fn checkpoint_file_round_trip_and_resume() {
        let dir = tempfile::tempdir().unwrap();
        let data = clips(4, 2);
        let c = TrainConfig {
            steps_phase1: 8,
            ..cfg()
        };
        let mut full = CaeTrainer::new(toy_arch(ModelKind::Cae), c.clone(), &data).unwrap();
        for _ in 0..8 {
            full.train_step().unwrap();
        }
        let mut half = CaeTrainer::new(toy_arch(ModelKind::Cae), c.clone(), &data).unwrap();
        for _ in 0..4 {
            half.train_step().unwrap();
        }
        let path = dir.path().join("half.ckpt");
        half.checkpoint().save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert!(loaded.same_state(&half.checkpoint()));
        let mut resumed = CaeTrainer::resume(loaded, &data).unwrap();
        for _ in 0..4 {
            resumed.train_step().unwrap();
        }
        assert!(resumed.checkpoint().same_state(&full.checkpoint()));
    }

    #[test]
    fn loss_log_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let out = RunOutput {
            dir: dir.path().to_path_buf(),
        };
        let (_, log) = train_cae(toy_arch(ModelKind::Cae), &cfg(), &clips(1, 2), Some(&out)).unwrap();
        let back = read_loss_log(&out.loss_log(ModelKind::Cae)).unwrap();
        assert_eq!(back, log);
        assert!(out.final_checkpoint(ModelKind::Cae).exists());
    }

    #[test]
    fn fingerprint_mismatch_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let (ck, _) = train_cae(toy_arch(ModelKind::Cae), &TrainConfig { steps_phase1: 1, ..cfg() }, &clips(1, 2), None).unwrap();
        let path = dir.path().join("c.ckpt");
        ck.save(&path).unwrap();
        assert!(matches!(
            Checkpoint::load_expecting(&path, &Architecture::cae()),
            Err(TrainError::Vae(VaeError::FingerprintMismatch { .. }))
        ));
        assert!(Checkpoint::load_expecting(&path, &toy_arch(ModelKind::Cae)).is_ok());
        assert!(Checkpoint::load_model(&path, ModelKind::Mae).is_err());
    }
}
