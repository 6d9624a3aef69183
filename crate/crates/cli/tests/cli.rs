use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sse_core::audio_io::{mix_at_snr, write_wav, ClipManifest, ManifestEntry, Role};
use sse_core::synth::{band_noise, harmonic_clip, ToneParams};

fn sse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sse"))
        .args(args)
        .env("SSE_LOG_LEVEL", "error")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TOY_CONFIG: &str = r#"
[model]
cae_ladder = [513, 24, 12]
mae_ladder = [513, 24, 12]
kernel = 3

[train]
seed = 5
lr = 0.002
batch_size = 2
chunk_frames = 8
steps_phase1 = 4
steps_phase2 = 4
noise_fraction = 0.5
checkpoint_every = 0
"#;

struct Corpus {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

/// Clean clips, mixtures with noise-only clips, and a noisy test directory.
fn corpus() -> Corpus {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tone = ToneParams::default();
    for sub in ["clean", "mix", "test"] {
        fs::create_dir(root.join(sub)).unwrap();
    }
    let mut clean = Vec::new();
    let mut mix = Vec::new();
    for i in 0..3 {
        let w = harmonic_clip(&mut rng, 16_000, 16_000, &tone);
        let path = root.join("clean").join(format!("c{i}.wav"));
        write_wav(&path, &w).unwrap();
        clean.push(entry(&path, Role::Clean, i));
        let s = harmonic_clip(&mut rng, 16_000, 16_000, &tone);
        let n = band_noise(&mut rng, 16_000, 16_000, 2000.0, 6000.0, 0.05);
        let m = mix_at_snr(&s, &n, 0.0).unwrap();
        let path = root.join("mix").join(format!("m{i}.wav"));
        write_wav(&path, &m.mixture).unwrap();
        mix.push(entry(&path, Role::Mixture, i));
        let path = root.join("mix").join(format!("n{i}.wav"));
        write_wav(&path, &band_noise(&mut rng, 16_000, 16_000, 2000.0, 6000.0, 0.01)).unwrap();
        mix.push(entry(&path, Role::Noise, i));
        write_wav(&root.join("test").join(format!("t{i}.wav")), &m.mixture).unwrap();
    }
    ClipManifest::new(clean).unwrap().save(&root.join("clean.json")).unwrap();
    ClipManifest::new(mix).unwrap().save(&root.join("mix.json")).unwrap();
    fs::write(root.join("toy.toml"), TOY_CONFIG).unwrap();
    Corpus { _dir: dir, root }
}

fn entry(path: &Path, role: Role, i: usize) -> ManifestEntry {
    ManifestEntry {
        path: path.to_path_buf(),
        role,
        speaker_id: format!("spk{i}"),
        script_id: format!("scr{i}"),
        gender: None,
    }
}

#[test]
fn train_mae_without_cae_checkpoint_is_a_usage_error() {
    let o = sse(&["train-mae", "--mix-manifest", "mix.json"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--cae-checkpoint"), "{}", stderr(&o));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(code(&sse(&["gradcheck", "--no-such-flag"])), 1);
    assert_eq!(code(&sse(&["no-such-command"])), 1);
}

#[test]
fn help_exits_zero() {
    let o = sse(&["--help"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("train-cae"));
}

#[test]
fn enhance_on_empty_directory_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out = dir.path().join("out");
    let o = sse(&[
        "enhance",
        "--input",
        p(&empty),
        "--mae-checkpoint",
        "mae.ckpt",
        "--cae-checkpoint",
        "cae.ckpt",
        "--out-dir",
        p(&out),
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn gradcheck_passes_on_fresh_models() {
    let o = sse(&["gradcheck", "--toy", "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    let last = out.lines().last().unwrap();
    let value: f64 = last
        .strip_prefix("max relative error ")
        .and_then(|r| r.split_whitespace().next())
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| panic!("unexpected summary line: {last}"));
    assert!(value < 1e-4, "{value}");
    for case in ["conv1d", "conv_transpose1d", "batch_norm", "softplus", "eq_norm", "reparameterized_kl"] {
        assert!(out.contains(case), "missing {case}");
    }
}

#[test]
fn invalid_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[stft]\nfft_size = 512\n").unwrap();
    let o = sse(&["train-cae", "--config", p(&cfg), "--clean-manifest", "x.json"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn missing_manifest_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = sse(&["train-cae", "--clean-manifest", p(&dir.path().join("absent.json"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn dry_run_writes_nothing() {
    let c = corpus();
    let out = c.root.join("dry");
    let o = sse(&[
        "train-cae",
        "--config",
        p(&c.root.join("toy.toml")),
        "--clean-manifest",
        p(&c.root.join("clean.json")),
        "--out-dir",
        p(&out),
        "--dry-run",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn pipeline_train_enhance_evaluate() {
    let c = corpus();
    let cfg = c.root.join("toy.toml");
    let run = |args: &[&str]| {
        let o = sse(args);
        assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
        o
    };
    let cae_dir = c.root.join("cae");
    run(&[
        "train-cae",
        "--config",
        p(&cfg),
        "--clean-manifest",
        p(&c.root.join("clean.json")),
        "--out-dir",
        p(&cae_dir),
        "--strict-deterministic",
    ]);
    let cae = cae_dir.join("cae.ckpt");
    assert!(cae.is_file());
    assert_eq!(fs::read_to_string(cae_dir.join("cae_loss.csv")).unwrap().lines().count(), 5);

    let again = c.root.join("cae2");
    run(&[
        "train-cae",
        "--config",
        p(&cfg),
        "--clean-manifest",
        p(&c.root.join("clean.json")),
        "--out-dir",
        p(&again),
        "--strict-deterministic",
    ]);
    assert_eq!(fs::read(&cae).unwrap(), fs::read(again.join("cae.ckpt")).unwrap());

    let mae_dir = c.root.join("mae");
    run(&[
        "train-mae",
        "--config",
        p(&cfg),
        "--mix-manifest",
        p(&c.root.join("mix.json")),
        "--cae-checkpoint",
        p(&cae),
        "--out-dir",
        p(&mae_dir),
    ]);
    let mae = mae_dir.join("mae.ckpt");
    assert!(mae.is_file());

    let enhanced = c.root.join("enhanced");
    run(&[
        "enhance",
        "--config",
        p(&cfg),
        "--input",
        p(&c.root.join("test")),
        "--mae-checkpoint",
        p(&mae),
        "--cae-checkpoint",
        p(&cae),
        "--out-dir",
        p(&enhanced),
        "--chunk-frames",
        "16",
        "--dump-magnitudes",
    ]);
    for i in 0..3 {
        assert!(enhanced.join(format!("t{i}.wav")).is_file());
        assert!(enhanced.join(format!("t{i}.in.mag")).is_file());
    }

    let eval_dir = c.root.join("eval");
    let o = run(&[
        "evaluate",
        "--reference",
        p(&c.root.join("test")),
        "--estimate",
        p(&enhanced),
        "--out-dir",
        p(&eval_dir),
    ]);
    assert!(stdout(&o).contains("\"count\": 3"));
    let csv = fs::read_to_string(eval_dir.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("file,si_sdr_db,seg_snr_db,llr,lsd_db"));
    assert_eq!(csv.lines().count(), 4);
    assert!(eval_dir.join("summary.json").is_file());
}

#[test]
fn train_mae_rejects_a_checkpoint_of_another_architecture() {
    let c = corpus();
    let cae_dir = c.root.join("cae");
    let o = sse(&[
        "train-cae",
        "--config",
        p(&c.root.join("toy.toml")),
        "--clean-manifest",
        p(&c.root.join("clean.json")),
        "--out-dir",
        p(&cae_dir),
        "--steps",
        "0",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    // Default ladders, so the toy checkpoint does not fit.
    let o = sse(&[
        "train-mae",
        "--mix-manifest",
        p(&c.root.join("mix.json")),
        "--cae-checkpoint",
        p(&cae_dir.join("cae.ckpt")),
        "--out-dir",
        p(&c.root.join("mae")),
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("fingerprint"), "{}", stderr(&o));
}

#[test]
fn mix_and_baseline() {
    let c = corpus();
    let noise_dir = c.root.join("noise");
    fs::create_dir(&noise_dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let path = noise_dir.join("long.wav");
    write_wav(&path, &band_noise(&mut rng, 24_000, 16_000, 100.0, 7000.0, 0.05)).unwrap();
    ClipManifest::new(vec![entry(&path, Role::Noise, 0)])
        .unwrap()
        .save(&c.root.join("noise.json"))
        .unwrap();
    let mixed = c.root.join("mixed");
    let o = sse(&[
        "mix",
        "--speech",
        p(&c.root.join("clean.json")),
        "--noise",
        p(&c.root.join("noise.json")),
        "--snr-db",
        "5,10",
        "--out-dir",
        p(&mixed),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = ClipManifest::load(&mixed.join("mixtures.json")).unwrap();
    assert_eq!(m.len(), 6);
    assert!(m.entries.iter().all(|e| e.role == Role::Mixture && e.path.is_file()));
    assert!(mixed.join("clean").join("c0_snr5.wav").is_file());

    let ss = c.root.join("ss");
    let o = sse(&[
        "baseline-ss",
        "--input",
        p(&mixed.join("mixture")),
        "--noise-manifest",
        p(&c.root.join("noise.json")),
        "--out-dir",
        p(&ss),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read_dir(&ss).unwrap().count(), 6);

    let o = sse(&["baseline-ss", "--input", p(&mixed.join("mixture")), "--beta", "1.5"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn split_writes_disjoint_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let entries = (0..10)
        .flat_map(|spk| {
            (0..10).map(move |scr| ManifestEntry {
                path: PathBuf::from(format!("s{spk}_{scr}.wav")),
                role: Role::Clean,
                speaker_id: format!("s{spk}"),
                script_id: format!("p{scr}"),
                gender: None,
            })
        })
        .collect();
    let manifest = dir.path().join("all.json");
    ClipManifest::new(entries).unwrap().save(&manifest).unwrap();
    let out = dir.path().join("split");
    let o = sse(&["split", "--manifest", p(&manifest), "--seed", "4", "--out-dir", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let parts: Vec<ClipManifest> = ["clean", "mix", "test"]
        .iter()
        .map(|s| ClipManifest::load(&out.join(format!("{s}.json"))).unwrap())
        .collect();
    assert!(parts.iter().all(|m| !m.is_empty()));
    for (i, a) in parts.iter().enumerate() {
        for b in &parts[i + 1..] {
            assert!(a.entries.iter().all(|x| b.entries.iter().all(|y| x.speaker_id != y.speaker_id)));
        }
    }
    assert!(out.join("split.json").is_file());
}
