//! Training objectives for both autoencoders.
//!
//! Every squared norm is a mean over array elements, so the weights do not
//! depend on batch size or chunk length. The CAE passed to MAE losses is
//! always bound as constants and run in evaluation mode: gradients pass
//! through it but its weights and running statistics never change.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::nn::{Bound, Mode, NnError, Real, Tape, Var};
use crate::vae::{kl_divergence, Vae, VaeError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// KL weight of the CAE.
    pub lambda1: f64,
    /// Latent term of the cycle loss.
    pub lambda2: f64,
    /// Silence term of the noise loss.
    pub lambda3: f64,
    /// KL weight of the MAE.
    pub lambda4: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.01,
            lambda2: 1.0,
            lambda3: 1.0,
            lambda4: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        Ok(())
    }
}

/// Scalar value of every loss term of one step. Terms that do not apply to
/// a phase are zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_cae: f64,
    pub l_kl_cae: f64,
    pub l_m: f64,
    pub l_cyc_recon: f64,
    pub l_cyc_latent: f64,
    pub l_n_recon: f64,
    pub l_n_silence: f64,
    pub l_kl_mae: f64,
    pub total: f64,
}

impl LossReport {
    pub const COLUMNS: [&'static str; 9] = [
        "l_cae",
        "l_kl_cae",
        "l_m",
        "l_cyc_recon",
        "l_cyc_latent",
        "l_n_recon",
        "l_n_silence",
        "l_kl_mae",
        "total",
    ];

    pub fn values(&self) -> [f64; 9] {
        [
            self.l_cae,
            self.l_kl_cae,
            self.l_m,
            self.l_cyc_recon,
            self.l_cyc_latent,
            self.l_n_recon,
            self.l_n_silence,
            self.l_kl_mae,
            self.total,
        ]
    }

    pub fn from_values(v: [f64; 9]) -> Self {
        LossReport {
            l_cae: v[0],
            l_kl_cae: v[1],
            l_m: v[2],
            l_cyc_recon: v[3],
            l_cyc_latent: v[4],
            l_n_recon: v[5],
            l_n_silence: v[6],
            l_kl_mae: v[7],
            total: v[8],
        }
    }

    /// The weighted sum that `total` is defined to equal.
    pub fn recompose(&self, w: &LossWeights) -> f64 {
        self.l_cae
            + w.lambda1 * self.l_kl_cae
            + self.l_m
            + self.l_cyc_recon
            + w.lambda2 * self.l_cyc_latent
            + self.l_n_recon
            + w.lambda3 * self.l_n_silence
            + w.lambda4 * self.l_kl_mae
    }

    /// Name of the first non-finite term, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        Self::COLUMNS
            .iter()
            .zip(self.values())
            .find(|(_, v)| !v.is_finite())
            .map(|(n, _)| *n)
    }
}

/// A differentiable total plus the detached per-term values.
#[derive(Debug, Clone, Copy)]
pub struct LossGraph {
    pub total: Var,
    pub report: LossReport,
}

#[derive(Debug, Clone, Copy)]
pub struct CycleTerms {
    pub recon: Var,
    pub latent: Var,
    pub combined: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct NoiseTerms {
    pub recon: Var,
    pub silence: Var,
    pub combined: Var,
}

/// Mean over elements of the squared difference.
pub fn mse<F: Real>(tape: &mut Tape<F>, a: Var, b: Var) -> Result<Var, NnError> {
    let d = tape.sub(a, b)?;
    let s = tape.square(d);
    Ok(tape.mean(s))
}

/// Mean over elements of the square, the distance to an all-zero array.
pub fn mean_square<F: Real>(tape: &mut Tape<F>, a: Var) -> Var {
    let s = tape.square(a);
    tape.mean(s)
}

fn weighted<F: Real>(tape: &mut Tape<F>, a: Var, w: f64, b: Var) -> Result<Var, NnError> {
    let bw = tape.scale(b, F::from_f64_lossy(w));
    tape.add(a, bw)
}

fn value<F: Real>(tape: &Tape<F>, v: Var) -> f64 {
    tape.scalar(v).to_f64_lossy()
}

fn batch_of<F: Real>(tape: &Tape<F>, v: Var) -> usize {
    tape.value(v).shape().get(1).copied().unwrap_or(0)
}

/// `mse(C, D_c(z)) + lambda1 * KL` with `z` sampled from `E_c(C)`.
pub fn loss_cae<F: Real>(
    tape: &mut Tape<F>,
    cae: &mut Vae<F>,
    bound: &Bound,
    clean: Var,
    weights: &LossWeights,
    rng: &mut dyn RngCore,
) -> Result<LossGraph, VaeError> {
    let h = cae.encode(tape, bound, clean, Mode::Train, rng)?;
    let recon = cae.decode(tape, bound, h.z, Mode::Train)?;
    let l = mse(tape, clean, recon)?;
    let kl = kl_divergence(tape, &h)?;
    let total = weighted(tape, l, weights.lambda1, kl)?;
    let report = LossReport {
        l_cae: value(tape, l),
        l_kl_cae: value(tape, kl),
        total: value(tape, total),
        ..Default::default()
    };
    Ok(LossGraph { total, report })
}

/// Direct-path reconstruction `mse(M, D_m(E_m(M)))`.
pub fn loss_mixture_recon<F: Real>(
    tape: &mut Tape<F>,
    mae: &mut Vae<F>,
    bound: &Bound,
    mix: Var,
    rng: &mut dyn RngCore,
) -> Result<Var, VaeError> {
    let h = mae.encode(tape, bound, mix, Mode::Train, rng)?;
    let recon = mae.decode(tape, bound, h.z, Mode::Train)?;
    Ok(mse(tape, mix, recon)?)
}

/// Cycle through the frozen CAE starting from an existing MAE encoding of
/// `mix`: `C_M = D_c(z_M)`, `h' = E_c(C_M)`, `M' = D_m(mu')`.
fn cycle_from<F: Real>(
    tape: &mut Tape<F>,
    mae: &mut Vae<F>,
    bound: &Bound,
    cae: &Vae<F>,
    cae_bound: &Bound,
    mix: Var,
    clean_estimate: Var,
    mix_mu: Var,
    weights: &LossWeights,
) -> Result<CycleTerms, VaeError> {
    let back = cae.encode_eval(tape, cae_bound, clean_estimate)?;
    let recon_m = mae.decode(tape, bound, back.mu, Mode::Train)?;
    let recon = mse(tape, mix, recon_m)?;
    let latent = mse(tape, mix_mu, back.mu)?;
    let combined = weighted(tape, recon, weights.lambda2, latent)?;
    Ok(CycleTerms {
        recon,
        latent,
        combined,
    })
}

/// Cycle loss of a mixture batch, with its own MAE encoding.
pub fn loss_cycle<F: Real>(
    tape: &mut Tape<F>,
    mae: &mut Vae<F>,
    bound: &Bound,
    cae: &Vae<F>,
    mix: Var,
    weights: &LossWeights,
    rng: &mut dyn RngCore,
) -> Result<CycleTerms, VaeError> {
    let cae_bound = cae.bind(tape, false);
    let h = mae.encode(tape, bound, mix, Mode::Train, rng)?;
    let clean = cae.decode_eval(tape, &cae_bound, h.z)?;
    cycle_from(tape, mae, bound, cae, &cae_bound, mix, clean, h.mu, weights)
}

/// Noise-example loss: noise-only input reconstructs through the MAE and
/// decodes to silence through the CAE decoder.
pub fn loss_noise<F: Real>(
    tape: &mut Tape<F>,
    mae: &mut Vae<F>,
    bound: &Bound,
    cae: &Vae<F>,
    noise: Var,
    weights: &LossWeights,
    rng: &mut dyn RngCore,
) -> Result<NoiseTerms, VaeError> {
    let cae_bound = cae.bind(tape, false);
    let h = mae.encode(tape, bound, noise, Mode::Train, rng)?;
    let recon_n = mae.decode(tape, bound, h.z, Mode::Train)?;
    let clean_n = cae.decode_eval(tape, &cae_bound, h.z)?;
    let recon = mse(tape, noise, recon_n)?;
    let silence = mean_square(tape, clean_n);
    let combined = weighted(tape, recon, weights.lambda3, silence)?;
    Ok(NoiseTerms {
        recon,
        silence,
        combined,
    })
}

/// Full MAE objective of one step.
///
/// Mixture and noise chunks go through `E_m` as one batch, so batch norm
/// sees the composition the step actually trains on; the shared code is
/// decoded once by `D_m` and once by the frozen `D_c`, then split back into
/// the mixture and noise parts. The KL term covers every encoding of the
/// batch.
pub fn loss_mae_total<F: Real>(
    tape: &mut Tape<F>,
    mae: &mut Vae<F>,
    bound: &Bound,
    cae: &Vae<F>,
    mix: Var,
    noise: Option<Var>,
    weights: &LossWeights,
    rng: &mut dyn RngCore,
) -> Result<LossGraph, VaeError> {
    let n_mix = batch_of(tape, mix);
    if n_mix == 0 {
        return Err(VaeError::Nn(NnError::EmptyBatch));
    }
    let noise = noise.filter(|&n| batch_of(tape, n) > 0);
    let cae_bound = cae.bind(tape, false);

    let input = match noise {
        Some(n) => tape.concat_batch(&[mix, n])?,
        None => mix,
    };
    let h = mae.encode(tape, bound, input, Mode::Train, rng)?;
    let direct = mae.decode(tape, bound, h.z, Mode::Train)?;
    let clean = cae.decode_eval(tape, &cae_bound, h.z)?;

    let (direct_m, clean_m, mu_m) = match noise {
        Some(_) => (
            tape.slice_batch(direct, 0, n_mix)?,
            tape.slice_batch(clean, 0, n_mix)?,
            tape.slice_batch(h.mu, 0, n_mix)?,
        ),
        None => (direct, clean, h.mu),
    };
    let l_m = mse(tape, mix, direct_m)?;
    let cyc = cycle_from(tape, mae, bound, cae, &cae_bound, mix, clean_m, mu_m, weights)?;
    let kl = kl_divergence(tape, &h)?;

    let mut total = tape.add(l_m, cyc.combined)?;
    let mut report = LossReport {
        l_m: value(tape, l_m),
        l_cyc_recon: value(tape, cyc.recon),
        l_cyc_latent: value(tape, cyc.latent),
        l_kl_mae: value(tape, kl),
        ..Default::default()
    };
    if let Some(n) = noise {
        let n_noise = batch_of(tape, n);
        let direct_n = tape.slice_batch(direct, n_mix, n_noise)?;
        let clean_n = tape.slice_batch(clean, n_mix, n_noise)?;
        let recon = mse(tape, n, direct_n)?;
        let silence = mean_square(tape, clean_n);
        let l_n = weighted(tape, recon, weights.lambda3, silence)?;
        total = tape.add(total, l_n)?;
        report.l_n_recon = value(tape, recon);
        report.l_n_silence = value(tape, silence);
    }
    total = weighted(tape, total, weights.lambda4, kl)?;
    report.total = value(tape, total);
    Ok(LossGraph { total, report })
}
