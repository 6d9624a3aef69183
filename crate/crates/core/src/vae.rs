//! Convolutional variational autoencoders over magnitude spectrograms.
//!
//! Encoder: per rung `conv(k=7) -> batch norm -> softplus`, then an
//! EQ-norm (per-item temporal mean removal) and two kernel-1 heads for the
//! posterior mean and log-variance. Decoder: the mirrored ladder of
//! transposed convolutions, each followed by batch norm and softplus, so
//! decoded magnitudes are strictly positive.

use std::collections::HashMap;

use ndarray::{Array2, ArrayD, Axis, IxDyn};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{BatchMoments, Bound, Init, Mode, NnError, NormStats, ParamStore, Real, Tape, Var};

pub const LATENT_DIM: usize = 64;
pub const KERNEL: usize = 7;
pub const CAE_LADDER: [usize; 5] = [513, 512, 256, 128, 64];
pub const MAE_LADDER: [usize; 7] = [513, 512, 400, 300, 200, 100, 64];

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Error)]
pub enum VaeError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("architecture fingerprint mismatch: expected `{expected}`, found `{found}`")]
    FingerprintMismatch { expected: String, found: String },
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Clean-speech autoencoder.
    Cae,
    /// Mixture autoencoder.
    Mae,
}

impl ModelKind {
    pub fn prefix(self) -> &'static str {
        match self {
            ModelKind::Cae => "cae",
            ModelKind::Mae => "mae",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub kind: ModelKind,
    /// Encoder channel sizes from input bins down to the latent size.
    pub ladder: Vec<usize>,
    pub kernel: usize,
}

impl Architecture {
    pub fn cae() -> Self {
        Architecture {
            kind: ModelKind::Cae,
            ladder: CAE_LADDER.to_vec(),
            kernel: KERNEL,
        }
    }

    pub fn mae() -> Self {
        Architecture {
            kind: ModelKind::Mae,
            ladder: MAE_LADDER.to_vec(),
            kernel: KERNEL,
        }
    }

    pub fn for_kind(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Cae => Self::cae(),
            ModelKind::Mae => Self::mae(),
        }
    }

    /// Arbitrary ladder, used for small test models.
    pub fn custom(kind: ModelKind, ladder: &[usize], kernel: usize) -> Self {
        assert!(ladder.len() >= 2, "a ladder needs at least input and latent sizes");
        assert!(kernel % 2 == 1, "kernel width must be odd");
        Architecture {
            kind,
            ladder: ladder.to_vec(),
            kernel,
        }
    }

    pub fn input_bins(&self) -> usize {
        self.ladder[0]
    }

    pub fn latent_dim(&self) -> usize {
        *self.ladder.last().unwrap()
    }

    /// Identifies everything that determines tensor shapes.
    pub fn fingerprint(&self) -> String {
        let ladder: Vec<String> = self.ladder.iter().map(|c| c.to_string()).collect();
        format!(
            "{}:ladder={}:kernel={}:latent={}",
            self.kind.prefix(),
            ladder.join("-"),
            self.kernel,
            self.latent_dim()
        )
    }

    /// Trainable scalar count implied by the ladder.
    pub fn param_count(&self) -> usize {
        let k = self.kernel;
        let z = self.latent_dim();
        let rung = |a: usize, b: usize| a * b * k + b + 2 * b;
        let enc: usize = self.ladder.windows(2).map(|w| rung(w[0], w[1])).sum();
        let heads = 2 * (z * z + z);
        let dec: usize = self.ladder.windows(2).map(|w| rung(w[1], w[0])).sum();
        enc + heads + dec
    }
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    kernel: usize,
    bias: usize,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gamma: usize,
    beta: usize,
    running_mean: usize,
    running_var: usize,
}

/// Posterior of one encoding on the tape: mean, log-variance and the code
/// passed to decoders (a sample in training mode, the mean otherwise).
#[derive(Debug, Clone, Copy)]
pub struct LatentVars {
    pub mu: Var,
    pub logvar: Var,
    pub z: Var,
}

/// Detached latent code of a single spectrogram, each `latent x frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub mu: Array2<f64>,
    pub logvar: Array2<f64>,
    pub z: Array2<f64>,
}

type StatUpdate<F> = (Norm, BatchMoments<F>);

#[derive(Debug, Clone)]
pub struct Vae<F: Real> {
    arch: Architecture,
    params: ParamStore<F>,
    enc: Vec<(Conv, Norm)>,
    mu_head: Conv,
    logvar_head: Conv,
    dec: Vec<(Conv, Norm)>,
}

impl<F: Real> Vae<F> {
    /// Builds the model and initializes it deterministically from `seed`.
    pub fn new(arch: Architecture, seed: u64) -> Self {
        let mut params = ParamStore::new();
        let p = arch.kind.prefix();
        let k = arch.kernel;
        let conv = |params: &mut ParamStore<F>, name: String, shape: [usize; 3], fan_in: usize, out: usize| Conv {
            kernel: params.register(
                &format!("{name}.kernel"),
                &shape,
                Init::Uniform {
                    bound: (1.0 / fan_in as f64).sqrt(),
                },
                true,
            ),
            bias: params.register(&format!("{name}.bias"), &[out], Init::Zeros, true),
        };
        let norm = |params: &mut ParamStore<F>, name: String, c: usize| Norm {
            gamma: params.register(&format!("{name}.bn.gamma"), &[c], Init::Ones, true),
            beta: params.register(&format!("{name}.bn.beta"), &[c], Init::Zeros, true),
            running_mean: params.register(&format!("{name}.bn.running_mean"), &[c], Init::Zeros, false),
            running_var: params.register(&format!("{name}.bn.running_var"), &[c], Init::Ones, false),
        };
        let mut enc = Vec::new();
        for (i, w) in arch.ladder.windows(2).enumerate() {
            let name = format!("{p}.enc.{i}");
            let c = conv(&mut params, name.clone(), [w[1], w[0], k], w[0] * k, w[1]);
            let n = norm(&mut params, name, w[1]);
            enc.push((c, n));
        }
        let zd = arch.latent_dim();
        let mu_head = conv(&mut params, format!("{p}.enc.mu"), [zd, zd, 1], zd, zd);
        let logvar_head = conv(&mut params, format!("{p}.enc.logvar"), [zd, zd, 1], zd, zd);
        let rev: Vec<usize> = arch.ladder.iter().rev().copied().collect();
        let mut dec = Vec::new();
        for (i, w) in rev.windows(2).enumerate() {
            let name = format!("{p}.dec.{i}");
            // transposed kernels are (in, out, k)
            let c = conv(&mut params, name.clone(), [w[0], w[1], k], w[0] * k, w[1]);
            let n = norm(&mut params, name, w[1]);
            dec.push((c, n));
        }
        params.init_parameters(seed);
        assert_eq!(params.trainable_count(), arch.param_count());
        Vae {
            arch,
            params,
            enc,
            mu_head,
            logvar_head,
            dec,
        }
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    /// Copy of the model in another precision.
    pub fn cast<G: Real>(&self) -> Vae<G> {
        Vae {
            arch: self.arch.clone(),
            params: self.params.cast(),
            enc: self.enc.clone(),
            mu_head: self.mu_head,
            logvar_head: self.logvar_head,
            dec: self.dec.clone(),
        }
    }

    pub fn bind(&self, tape: &mut Tape<F>, trainable: bool) -> Bound {
        self.params.bind(tape, trainable)
    }

    /// Named tensors, parameters and batch-norm buffers alike.
    pub fn tensors(&self) -> Vec<(String, &ArrayD<F>)> {
        self.params.iter().map(|p| (p.name.clone(), &p.value)).collect()
    }

    pub fn from_tensors(arch: Architecture, tensors: &HashMap<String, ArrayD<F>>) -> Result<Self, VaeError> {
        let mut m = Vae::new(arch, 0);
        m.params.load_values(tensors)?;
        Ok(m)
    }

    fn check_input(&self, tape: &Tape<F>, x: Var, channels: usize, what: &str) -> Result<(), VaeError> {
        let shape = tape.value(x).shape();
        if shape.len() != 3 || shape[0] != channels || shape[1] == 0 || shape[2] == 0 {
            return Err(VaeError::ShapeMismatch(format!(
                "{} {what} expects ({channels}, batch, frames), got {shape:?}",
                self.arch.kind.prefix()
            )));
        }
        Ok(())
    }

    fn norm(
        &self,
        tape: &mut Tape<F>,
        bound: &Bound,
        x: Var,
        n: Norm,
        mode: Mode,
        updates: &mut Vec<StatUpdate<F>>,
    ) -> Result<Var, VaeError> {
        let eps = F::from_f64_lossy(BN_EPS);
        let (gamma, beta) = (bound.var(n.gamma), bound.var(n.beta));
        let y = match mode {
            Mode::Train => {
                let (y, m) = tape.batch_norm(x, gamma, beta, NormStats::Batch { eps })?;
                updates.push((n, m.expect("batch statistics")));
                y
            }
            Mode::Eval => {
                let mean = self.params.get(n.running_mean).value.as_slice().expect("1-d");
                let var = self.params.get(n.running_var).value.as_slice().expect("1-d");
                tape.batch_norm(x, gamma, beta, NormStats::Running { mean, var, eps })?.0
            }
        };
        Ok(y)
    }

    fn encode_inner(
        &self,
        tape: &mut Tape<F>,
        bound: &Bound,
        x: Var,
        mode: Mode,
        rng: Option<&mut dyn RngCore>,
        updates: &mut Vec<StatUpdate<F>>,
    ) -> Result<LatentVars, VaeError> {
        self.check_input(tape, x, self.arch.input_bins(), "encoder")?;
        let mut h = x;
        for &(c, n) in &self.enc {
            h = tape.conv1d(h, bound.var(c.kernel), bound.var(c.bias))?;
            h = self.norm(tape, bound, h, n, mode, updates)?;
            h = tape.softplus(h);
        }
        h = tape.eq_norm(h)?;
        let mu = tape.conv1d(h, bound.var(self.mu_head.kernel), bound.var(self.mu_head.bias))?;
        let logvar = tape.conv1d(h, bound.var(self.logvar_head.kernel), bound.var(self.logvar_head.bias))?;
        let z = match (mode, rng) {
            (Mode::Train, Some(rng)) => reparameterize(tape, mu, logvar, rng)?,
            _ => mu,
        };
        Ok(LatentVars { mu, logvar, z })
    }

    fn decode_inner(
        &self,
        tape: &mut Tape<F>,
        bound: &Bound,
        z: Var,
        mode: Mode,
        updates: &mut Vec<StatUpdate<F>>,
    ) -> Result<Var, VaeError> {
        self.check_input(tape, z, self.arch.latent_dim(), "decoder")?;
        let mut h = z;
        for &(c, n) in &self.dec {
            h = tape.conv_transpose1d(h, bound.var(c.kernel), bound.var(c.bias))?;
            h = self.norm(tape, bound, h, n, mode, updates)?;
            h = tape.softplus(h);
        }
        Ok(h)
    }

    fn apply_updates(&mut self, updates: Vec<StatUpdate<F>>) {
        let m = F::from_f64_lossy(BN_MOMENTUM);
        let keep = F::one() - m;
        for (n, moments) in updates {
            let unbias = if moments.count > 1 {
                F::from_f64_lossy(moments.count as f64 / (moments.count - 1) as f64)
            } else {
                F::one()
            };
            let rm = &mut self.params.get_mut(n.running_mean).value;
            for (r, &b) in rm.iter_mut().zip(&moments.mean) {
                *r = keep * *r + m * b;
            }
            let rv = &mut self.params.get_mut(n.running_var).value;
            for (r, &b) in rv.iter_mut().zip(&moments.var) {
                *r = keep * *r + m * b * unbias;
            }
        }
    }

    /// Encodes a `(bins, batch, frames)` activation. Training mode uses
    /// batch statistics, updates running statistics and samples
    /// `z = mu + exp(logvar / 2) * eps`; evaluation mode sets `z = mu`.
    pub fn encode(
        &mut self,
        tape: &mut Tape<F>,
        bound: &Bound,
        x: Var,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<LatentVars, VaeError> {
        let mut updates = Vec::new();
        let out = self.encode_inner(tape, bound, x, mode, Some(rng), &mut updates)?;
        self.apply_updates(updates);
        Ok(out)
    }

    /// Evaluation-mode encoding of a frozen model.
    pub fn encode_eval(&self, tape: &mut Tape<F>, bound: &Bound, x: Var) -> Result<LatentVars, VaeError> {
        self.encode_inner(tape, bound, x, Mode::Eval, None, &mut Vec::new())
    }

    pub fn decode(&mut self, tape: &mut Tape<F>, bound: &Bound, z: Var, mode: Mode) -> Result<Var, VaeError> {
        let mut updates = Vec::new();
        let out = self.decode_inner(tape, bound, z, mode, &mut updates)?;
        self.apply_updates(updates);
        Ok(out)
    }

    pub fn decode_eval(&self, tape: &mut Tape<F>, bound: &Bound, z: Var) -> Result<Var, VaeError> {
        self.decode_inner(tape, bound, z, Mode::Eval, &mut Vec::new())
    }

    /// Encodes one `bins x frames` spectrogram outside any training graph.
    pub fn encode_array(&mut self, x: &Array2<f64>, mode: Mode, rng: &mut dyn RngCore) -> Result<LatentCode, VaeError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let xv = tape.constant(single_item(x));
        let code = self.encode(&mut tape, &bound, xv, mode, rng)?;
        Ok(LatentCode {
            mu: item_to_f64(tape.value(code.mu)),
            logvar: item_to_f64(tape.value(code.logvar)),
            z: item_to_f64(tape.value(code.z)),
        })
    }

    /// Decodes one `latent x frames` code outside any training graph.
    pub fn decode_array(&mut self, z: &Array2<f64>, mode: Mode) -> Result<Array2<f64>, VaeError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let zv = tape.constant(single_item(z));
        let y = self.decode(&mut tape, &bound, zv, mode)?;
        Ok(item_to_f64(tape.value(y)))
    }
}

/// `z = mu + exp(logvar / 2) * eps` with `eps ~ N(0, I)` drawn in
/// row-major `(channel, batch, frame)` order.
pub fn reparameterize<F: Real>(
    tape: &mut Tape<F>,
    mu: Var,
    logvar: Var,
    rng: &mut dyn RngCore,
) -> Result<Var, NnError> {
    let eps = ArrayD::from_shape_simple_fn(tape.value(mu).raw_dim(), || {
        let e: f64 = StandardNormal.sample(rng);
        F::from_f64_lossy(e)
    });
    let eps = tape.constant(eps);
    let half = tape.scale(logvar, F::from_f64_lossy(0.5));
    let std = tape.exp(half);
    let noise = tape.mul(std, eps)?;
    tape.add(mu, noise)
}

/// KL divergence of the per-frame diagonal Gaussian posterior from
/// `N(0, I)`: summed over latent dimensions, averaged over all frames of all
/// batch items.
pub fn kl_divergence<F: Real>(tape: &mut Tape<F>, code: &LatentVars) -> Result<Var, NnError> {
    let shape = tape.value(code.mu).shape().to_vec();
    let frames = shape.iter().skip(1).product::<usize>().max(1);
    let var = tape.exp(code.logvar);
    let mu2 = tape.square(code.mu);
    let a = tape.add(var, mu2)?;
    let b = tape.sub(a, code.logvar)?;
    let c = tape.add_scalar(b, -F::one());
    let s = tape.sum(c);
    Ok(tape.scale(s, F::from_f64_lossy(0.5 / frames as f64)))
}

/// Closed-form KL of a detached code, same normalization as
/// [`kl_divergence`].
pub fn kl_divergence_value(code: &LatentCode) -> f64 {
    let frames = code.mu.ncols().max(1) as f64;
    let total: f64 = ndarray::Zip::from(&code.mu)
        .and(&code.logvar)
        .fold(0.0, |acc, &m, &lv| acc + (lv.exp() + m * m - lv - 1.0));
    0.5 * total / frames
}

/// `(c, t)` -> `(c, 1, t)`.
pub fn single_item<F: Real>(x: &Array2<f64>) -> ArrayD<F> {
    x.mapv(F::from_f64_lossy).insert_axis(Axis(1)).into_dyn()
}

/// Stacks equally long `(c, t)` items into a `(c, batch, t)` activation.
pub fn stack_batch<F: Real>(items: &[&Array2<F>]) -> ArrayD<F> {
    let views: Vec<_> = items.iter().map(|a| a.view().insert_axis(Axis(1))).collect();
    ndarray::concatenate(Axis(1), &views)
        .expect("items share channel and frame counts")
        .into_dyn()
}

/// First batch item of a `(c, batch, t)` activation as `f64`.
pub fn item_to_f64<F: Real>(x: &ArrayD<F>) -> Array2<f64> {
    let shape = x.shape();
    let (c, t) = (shape[0], shape[2]);
    Array2::from_shape_fn((c, t), |(i, j)| x[IxDyn(&[i, 0, j])].to_f64_lossy())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy(kind: ModelKind) -> Vae<f64> {
        Vae::new(Architecture::custom(kind, &[9, 6, 4], 7), 3)
    }

    fn input(c: usize, t: usize) -> Array2<f64> {
        Array2::from_shape_fn((c, t), |(i, j)| ((i * 7 + j * 3) as f64 * 0.13).sin().abs())
    }

    #[test]
    fn paper_ladders_and_counts() {
        let cae = Architecture::cae();
        let mae = Architecture::mae();
        assert_eq!(cae.latent_dim(), 64);
        assert_eq!(mae.latent_dim(), 64);
        // hand-expanded for the four-rung ladder
        let rungs = [(513, 512), (512, 256), (256, 128), (128, 64)];
        let enc: usize = rungs.iter().map(|&(a, b)| a * b * 7 + 3 * b).sum();
        let dec: usize = rungs.iter().map(|&(a, b)| b * a * 7 + 3 * a).sum();
        assert_eq!(cae.param_count(), enc + dec + 2 * (64 * 64 + 64));
        assert_ne!(cae.fingerprint(), mae.fingerprint());
    }

    #[test]
    fn shapes_are_preserved() {
        let mut m = toy(ModelKind::Cae);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let code = m.encode_array(&input(9, 11), Mode::Train, &mut rng).unwrap();
        assert_eq!(code.mu.dim(), (4, 11));
        assert_eq!(code.z.dim(), (4, 11));
        let y = m.decode_array(&code.z, Mode::Train).unwrap();
        assert_eq!(y.dim(), (9, 11));
        assert!(y.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn eval_mode_code_is_the_mean() {
        let mut m = toy(ModelKind::Mae);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let code = m.encode_array(&input(9, 5), Mode::Eval, &mut rng).unwrap();
        assert_eq!(code.z, code.mu);
    }

    #[test]
    fn fixed_seed_sampling_is_reproducible() {
        let m = toy(ModelKind::Cae);
        let run = |seed| {
            let mut mm = m.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            mm.encode_array(&input(9, 5), Mode::Train, &mut rng).unwrap().z
        };
        assert_eq!(run(4), run(4));
        assert_ne!(run(4), run(5));
    }

    #[test]
    fn wrong_channel_count_is_rejected() {
        let mut m = toy(ModelKind::Cae);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            m.encode_array(&input(8, 5), Mode::Eval, &mut rng),
            Err(VaeError::ShapeMismatch(_))
        ));
        assert!(matches!(m.decode_array(&input(5, 5), Mode::Eval), Err(VaeError::ShapeMismatch(_))));
    }

    #[test]
    fn train_mode_updates_running_stats() {
        let mut m = toy(ModelKind::Cae);
        let before = m.params().by_name("cae.enc.0.bn.running_mean").unwrap().value.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        m.encode_array(&input(9, 5), Mode::Eval, &mut rng).unwrap();
        assert_eq!(m.params().by_name("cae.enc.0.bn.running_mean").unwrap().value, before);
        m.encode_array(&input(9, 5), Mode::Train, &mut rng).unwrap();
        assert_ne!(m.params().by_name("cae.enc.0.bn.running_mean").unwrap().value, before);
        assert!(m
            .params()
            .iter()
            .filter(|p| p.name.ends_with("running_var"))
            .all(|p| p.value.iter().all(|&v| v >= 0.0)));
    }

    #[test]
    fn kl_closed_forms() {
        let zeros = LatentCode {
            mu: Array2::zeros((64, 5)),
            logvar: Array2::zeros((64, 5)),
            z: Array2::zeros((64, 5)),
        };
        assert_eq!(kl_divergence_value(&zeros), 0.0);
        for t in [1, 3, 17] {
            let ones = LatentCode {
                mu: Array2::ones((64, t)),
                logvar: Array2::zeros((64, t)),
                z: Array2::zeros((64, t)),
            };
            assert!((kl_divergence_value(&ones) - 32.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tape_kl_matches_detached_kl() {
        let mu = Array2::from_shape_fn((4, 6), |(i, j)| (i as f64 - j as f64) * 0.2);
        let logvar = Array2::from_shape_fn((4, 6), |(i, j)| ((i * j) as f64 * 0.1).cos() - 0.5);
        let mut tape = Tape::<f64>::new();
        let code = LatentVars {
            mu: tape.constant(single_item(&mu)),
            logvar: tape.constant(single_item(&logvar)),
            z: tape.constant(single_item(&mu)),
        };
        let kl = kl_divergence(&mut tape, &code).unwrap();
        let detached = kl_divergence_value(&LatentCode {
            mu: mu.clone(),
            logvar,
            z: mu,
        });
        assert!((tape.scalar(kl) - detached).abs() < 1e-12);
    }

    #[test]
    fn tensors_round_trip_through_a_map() {
        let m = toy(ModelKind::Mae);
        let map: HashMap<String, ArrayD<f64>> = m.tensors().into_iter().map(|(n, t)| (n, t.clone())).collect();
        let back = Vae::from_tensors(m.architecture().clone(), &map).unwrap();
        for (a, b) in m.params().iter().zip(back.params().iter()) {
            assert_eq!(a.value, b.value);
        }
    }
}
