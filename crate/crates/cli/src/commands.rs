use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sse_core::audio_io::{mix_at_snr, read_wav, split_dataset, write_wav, ClipManifest, ManifestEntry, Role, Segment, Waveform};
use sse_core::baseline_ss::{noise_profile_from_clips, noise_profile_leading, spectral_subtract, SsConfig, DEFAULT_LEADING_MS};
use sse_core::dsp::{magnitude, stft, write_magnitude_dump};
use sse_core::enhance::{Chunking, EnhanceConfig, Enhancer};
use sse_core::gradcheck::{run_suite, GradCheckConfig, DEFAULT_SAMPLES, TOLERANCE};
use sse_core::metrics::{aggregate, evaluate, MetricReport};
use sse_core::training::{load_clips, route_by_energy, train_cae, train_mae, Checkpoint, ConfigFile, RunOutput};
use sse_core::vae::ModelKind;

use crate::error::Failure;
use crate::{Cli, Command, GlobalArgs};

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Manifest listing every clip with speaker and script ids.
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Debug, Args)]
pub struct MixArgs {
    /// Manifest of clean speech clips.
    #[arg(long)]
    pub speech: PathBuf,
    /// Manifest of noise recordings, each at least as long as the speech it is paired with.
    #[arg(long)]
    pub noise: PathBuf,
    /// Target SNRs in dB; repeat the flag or separate with commas.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = [5.0, 10.0])]
    pub snr_db: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct TrainCaeArgs {
    #[arg(long)]
    pub clean_manifest: Option<PathBuf>,
    /// Overrides `train.steps_phase1`.
    #[arg(long)]
    pub steps: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainMaeArgs {
    #[arg(long)]
    pub cae_checkpoint: PathBuf,
    #[arg(long)]
    pub mix_manifest: Option<PathBuf>,
    /// Noise-only manifest, or `auto` to route mixture clips by energy.
    #[arg(long)]
    pub noise_manifest: Option<String>,
    #[arg(long)]
    pub noise_fraction: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub threshold_dbfs: Option<f64>,
    /// Overrides `train.steps_phase2`.
    #[arg(long)]
    pub steps: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    /// Directory of noisy WAV files.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub mae_checkpoint: PathBuf,
    #[arg(long)]
    pub cae_checkpoint: PathBuf,
    /// Process fixed windows of this many frames instead of whole clips.
    #[arg(long)]
    pub chunk_frames: Option<usize>,
    /// Also write input and output magnitudes as binary dumps.
    #[arg(long)]
    pub dump_magnitudes: bool,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Noise-only clips for the noise profile; without it each clip's
    /// leading segment is used.
    #[arg(long)]
    pub noise_manifest: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_LEADING_MS)]
    pub leading_ms: f64,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub p: Option<u8>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory of reference WAV files.
    #[arg(long)]
    pub reference: PathBuf,
    /// Directory of estimates, matched to references by file name.
    #[arg(long)]
    pub estimate: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Parameters probed per case.
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub samples: usize,
    /// Check the mixture loss on reduced models instead of the full ladder.
    #[arg(long)]
    pub toy: bool,
    #[arg(long, default_value_t = 8)]
    pub frames: usize,
}

pub fn run(cli: &Cli) -> Result<(), Failure> {
    let g = &cli.global;
    if g.strict_deterministic {
        log::debug!("strict deterministic mode: all computation runs on one thread");
    }
    match &cli.command {
        Command::Split(a) => split(g, a),
        Command::Mix(a) => mix(g, a),
        Command::TrainCae(a) => run_train_cae(g, a),
        Command::TrainMae(a) => run_train_mae(g, a),
        Command::Enhance(a) => enhance(g, a),
        Command::BaselineSs(a) => baseline(g, a),
        Command::Evaluate(a) => run_evaluate(g, a),
        Command::Gradcheck(a) => gradcheck(g, a),
    }
}

fn load_config(g: &GlobalArgs) -> Result<ConfigFile, Failure> {
    let mut cfg = match &g.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    if let Some(s) = g.seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::io(path, e))
}

/// Sorted `.wav` files of a directory; an empty listing is an error.
fn wav_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Failure::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Failure::Data(format!("{}: no .wav files", dir.display())));
    }
    Ok(files)
}

fn file_name(p: &Path) -> &std::ffi::OsStr {
    p.file_name().expect("listed files have names")
}

fn split(g: &GlobalArgs, a: &SplitArgs) -> Result<(), Failure> {
    let cfg = load_config(g)?;
    let manifest = ClipManifest::load(&a.manifest)?;
    let split = split_dataset(&manifest, cfg.train.seed)?;
    for seg in Segment::ALL {
        log::info!("{}: {} pairs", seg.name(), split.pairs(seg).len());
    }
    if g.dry_run {
        return Ok(());
    }
    create_dir(&g.out_dir)?;
    for seg in Segment::ALL {
        split.segment_manifest(&manifest, seg).save(&g.out_dir.join(format!("{}.json", seg.name())))?;
    }
    let text = serde_json::to_string_pretty(&split).map_err(|e| Failure::Data(e.to_string()))?;
    write_text(&g.out_dir.join("split.json"), &text)
}

fn mix(g: &GlobalArgs, a: &MixArgs) -> Result<(), Failure> {
    let cfg = load_config(g)?;
    let sr = cfg.data.sample_rate;
    let speech = ClipManifest::load(&a.speech)?;
    let noise_manifest = ClipManifest::load(&a.noise)?;
    if speech.is_empty() || noise_manifest.is_empty() {
        return Err(Failure::Data("speech and noise manifests must both list clips".into()));
    }
    if a.snr_db.iter().any(|s| !s.is_finite()) {
        return Err(Failure::Usage("--snr-db values must be finite".into()));
    }
    let noise = load_clips(&noise_manifest, sr)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut entries = Vec::new();
    let mut outputs = Vec::new();
    for e in &speech.entries {
        let s = read_wav(&e.path, sr)?;
        let fits: Vec<&Waveform> = noise.iter().filter(|n| n.len() >= s.len()).collect();
        if fits.is_empty() {
            return Err(Failure::Data(format!("no noise clip is as long as {}", e.path.display())));
        }
        let stem = e.path.file_stem().unwrap_or_default().to_string_lossy();
        for &snr in &a.snr_db {
            let n = fits[rng.random_range(0..fits.len())];
            let offset = rng.random_range(0..=n.len() - s.len());
            let excerpt = Waveform::new(n.samples()[offset..offset + s.len()].to_vec(), sr)?;
            let m = mix_at_snr(&s, &excerpt, snr)?;
            let name = format!("{stem}_snr{snr}.wav");
            entries.push(ManifestEntry {
                path: PathBuf::from("mixture").join(&name),
                role: Role::Mixture,
                speaker_id: e.speaker_id.clone(),
                script_id: e.script_id.clone(),
                gender: e.gender.clone(),
            });
            outputs.push((name, s.clone(), m));
        }
    }
    log::info!("{} mixtures from {} speech clips", outputs.len(), speech.len());
    if g.dry_run {
        return Ok(());
    }
    for sub in ["mixture", "clean", "noise"] {
        create_dir(&g.out_dir.join(sub))?;
    }
    for (name, clean, m) in &outputs {
        write_wav(&g.out_dir.join("mixture").join(name), &m.mixture)?;
        write_wav(&g.out_dir.join("clean").join(name), clean)?;
        write_wav(&g.out_dir.join("noise").join(name), &m.scaled_noise)?;
    }
    ClipManifest::new(entries)?.save(&g.out_dir.join("mixtures.json"))?;
    Ok(())
}

fn manifest_path(flag: &Option<PathBuf>, file: &Option<PathBuf>, what: &str) -> Result<PathBuf, Failure> {
    flag.clone()
        .or_else(|| file.clone())
        .ok_or_else(|| Failure::Usage(format!("no {what} manifest: pass --{what}-manifest or set data.{what}_manifest")))
}

fn run_train_cae(g: &GlobalArgs, a: &TrainCaeArgs) -> Result<(), Failure> {
    let mut cfg = load_config(g)?;
    if let Some(s) = a.steps {
        cfg.train.steps_phase1 = s;
    }
    cfg.validate()?;
    let path = manifest_path(&a.clean_manifest, &cfg.data.clean_manifest, "clean")?;
    let manifest = ClipManifest::load(&path)?.with_role(Role::Clean);
    if manifest.is_empty() {
        return Err(Failure::Data(format!("{}: no clean clips", path.display())));
    }
    let clips = load_clips(&manifest, cfg.data.sample_rate)?;
    log::info!("{} clean clips, {} steps", clips.len(), cfg.train.steps_phase1);
    if g.dry_run {
        return Ok(());
    }
    create_dir(&g.out_dir)?;
    write_text(&g.out_dir.join("config.toml"), &cfg.to_toml())?;
    let out = RunOutput { dir: g.out_dir.clone() };
    let (ck, _) = train_cae(cfg.model.architecture(ModelKind::Cae), &cfg.train_config(), &clips, Some(&out))?;
    println!("wrote {} after {} steps", out.final_checkpoint(ModelKind::Cae).display(), ck.step);
    Ok(())
}

fn run_train_mae(g: &GlobalArgs, a: &TrainMaeArgs) -> Result<(), Failure> {
    let mut cfg = load_config(g)?;
    if let Some(s) = a.steps {
        cfg.train.steps_phase2 = s;
    }
    if let Some(f) = a.noise_fraction {
        cfg.train.noise_fraction = f;
    }
    if let Some(t) = a.threshold_dbfs {
        cfg.data.energy_threshold_dbfs = t;
    }
    if let Some(n) = &a.noise_manifest {
        cfg.data.noise_manifest = Some(n.clone());
    }
    cfg.validate()?;
    let sr = cfg.data.sample_rate;
    let path = manifest_path(&a.mix_manifest, &cfg.data.mix_manifest, "mix")?;
    let manifest = ClipManifest::load(&path)?;
    let mut mixtures = load_clips(&manifest.with_role(Role::Mixture), sr)?;
    let mut noise = load_clips(&manifest.with_role(Role::Noise), sr)?;
    match cfg.data.noise_manifest.as_deref() {
        None => {}
        Some("auto") => {
            let (m, n) = route_by_energy(mixtures, cfg.data.energy_threshold_dbfs)?;
            mixtures = m;
            noise.extend(n);
        }
        Some(p) => noise.extend(load_clips(&ClipManifest::load(Path::new(p))?, sr)?),
    }
    let cae = Checkpoint::load_expecting(&a.cae_checkpoint, &cfg.model.architecture(ModelKind::Cae))?;
    log::info!(
        "{} mixture clips, {} noise clips, noise fraction {}, {} steps",
        mixtures.len(),
        noise.len(),
        cfg.train.noise_fraction,
        cfg.train.steps_phase2
    );
    if g.dry_run {
        return Ok(());
    }
    create_dir(&g.out_dir)?;
    write_text(&g.out_dir.join("config.toml"), &cfg.to_toml())?;
    let out = RunOutput { dir: g.out_dir.clone() };
    let (ck, _) = train_mae(
        cfg.model.architecture(ModelKind::Mae),
        &cfg.train_config(),
        cae.model,
        &mixtures,
        &noise,
        Some(&out),
    )?;
    println!("wrote {} after {} steps", out.final_checkpoint(ModelKind::Mae).display(), ck.step);
    Ok(())
}

fn enhance(g: &GlobalArgs, a: &EnhanceArgs) -> Result<(), Failure> {
    let cfg = load_config(g)?;
    let files = wav_files(&a.input)?;
    let enhancer = Enhancer::from_checkpoints(&a.mae_checkpoint, &a.cae_checkpoint)?;
    let ecfg = EnhanceConfig {
        chunking: match a.chunk_frames {
            Some(0) => return Err(Failure::Usage("--chunk-frames must be positive".into())),
            Some(n) => Chunking::Fixed(n),
            None => Chunking::WholeClip,
        },
        sample_rate: cfg.data.sample_rate,
    };
    let inputs = files
        .iter()
        .map(|f| read_wav(f, ecfg.sample_rate).map(|w| (f, w)))
        .collect::<Result<Vec<_>, _>>()?;
    if g.dry_run {
        log::info!("{} clips to enhance", inputs.len());
        return Ok(());
    }
    create_dir(&g.out_dir)?;
    for (f, w) in &inputs {
        let y = enhancer.enhance(w, &ecfg)?;
        let target = g.out_dir.join(file_name(f));
        write_wav(&target, &y)?;
        if a.dump_magnitudes {
            write_magnitude_dump(&target.with_extension("in.mag"), &magnitude(&stft(w)?))?;
            write_magnitude_dump(&target.with_extension("out.mag"), &magnitude(&stft(&y)?))?;
        }
        log::debug!("enhanced {}", f.display());
    }
    println!("enhanced {} clips into {}", inputs.len(), g.out_dir.display());
    Ok(())
}

fn baseline(g: &GlobalArgs, a: &BaselineArgs) -> Result<(), Failure> {
    let cfg = load_config(g)?;
    let d = SsConfig::default();
    let ss = SsConfig {
        alpha: a.alpha.unwrap_or(d.alpha),
        beta: a.beta.unwrap_or(d.beta),
        p: a.p.unwrap_or(d.p),
    };
    ss.validate()?;
    if !(a.leading_ms.is_finite() && a.leading_ms > 0.0) {
        return Err(Failure::Usage("--leading-ms must be positive".into()));
    }
    let sr = cfg.data.sample_rate;
    let files = wav_files(&a.input)?;
    let shared = match &a.noise_manifest {
        Some(p) => Some(noise_profile_from_clips(&load_clips(&ClipManifest::load(p)?, sr)?, ss.p)?),
        None => None,
    };
    let inputs = files
        .iter()
        .map(|f| read_wav(f, sr).map(|w| (f, w)))
        .collect::<Result<Vec<_>, _>>()?;
    if g.dry_run {
        return Ok(());
    }
    create_dir(&g.out_dir)?;
    for (f, w) in &inputs {
        let profile = match &shared {
            Some(p) => p.clone(),
            None => noise_profile_leading(w, a.leading_ms, ss.p)?,
        };
        write_wav(&g.out_dir.join(file_name(f)), &spectral_subtract(w, &profile, &ss)?)?;
    }
    println!("processed {} clips into {}", inputs.len(), g.out_dir.display());
    Ok(())
}

fn run_evaluate(g: &GlobalArgs, a: &EvaluateArgs) -> Result<(), Failure> {
    let cfg = load_config(g)?;
    let sr = cfg.data.sample_rate;
    let estimates = wav_files(&a.estimate)?;
    let mut rows = Vec::new();
    for e in &estimates {
        let r = a.reference.join(file_name(e));
        if !r.is_file() {
            return Err(Failure::Data(format!("no reference for {}", e.display())));
        }
        let report = evaluate(&read_wav(&r, sr)?, &read_wav(e, sr)?)?;
        rows.push((file_name(e).to_string_lossy().into_owned(), report));
    }
    let reports: Vec<MetricReport> = rows.iter().map(|(_, r)| *r).collect();
    let agg = aggregate(&reports);
    let summary = serde_json::to_string_pretty(&agg).map_err(|e| Failure::Data(e.to_string()))?;
    println!("{summary}");
    if g.dry_run {
        return Ok(());
    }
    create_dir(&g.out_dir)?;
    let csv_path = g.out_dir.join("metrics.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Failure::io(&csv_path, e))?;
    let mut header = vec!["file"];
    header.extend(MetricReport::COLUMNS);
    w.write_record(&header).map_err(|e| Failure::io(&csv_path, e))?;
    for (name, r) in &rows {
        let mut rec = vec![name.clone()];
        rec.extend(r.values().iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| Failure::io(&csv_path, e))?;
    }
    w.flush().map_err(|e| Failure::io(&csv_path, e))?;
    write_text(&g.out_dir.join("summary.json"), &summary)
}

fn gradcheck(g: &GlobalArgs, a: &GradcheckArgs) -> Result<(), Failure> {
    if a.samples == 0 || a.frames == 0 {
        return Err(Failure::Usage("--samples and --frames must be positive".into()));
    }
    let cfg = GradCheckConfig {
        seed: g.seed.unwrap_or(0),
        samples: a.samples,
        full_size: !a.toy,
        frames: a.frames,
    };
    let reports = run_suite(&cfg)?;
    let mut worst = 0.0f64;
    for r in &reports {
        println!(
            "{:<20} checked {:>4}  max relative error {:.3e}  at {}",
            r.name, r.checked, r.max_rel_error, r.worst
        );
        worst = worst.max(r.max_rel_error);
    }
    println!("max relative error {worst:.3e} (tolerance {TOLERANCE:.0e})");
    if reports.iter().all(|r| r.passed()) {
        Ok(())
    } else {
        Err(Failure::Numeric(format!("gradient check failed: max relative error {worst:.3e}")))
    }
}
