//! Finite-difference verification of the tape's reverse-mode gradients.
//!
//! Every case runs in `f64`. Analytic gradients come from one backward
//! pass; numeric ones from central differences with step
//! `h = 1e-4 * (1 + |theta|)` on a sample of scalar entries.

use ndarray::{ArrayD, IxDyn};
use rand::seq::index::sample;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::losses::{loss_mae_total, LossWeights};
use crate::nn::{NnError, NormStats, Tape, Var};
use crate::vae::{kl_divergence, reparameterize, Architecture, LatentVars, ModelKind, Vae, VaeError};

pub const TOLERANCE: f64 = 1e-4;
pub const DEFAULT_SAMPLES: usize = 100;

/// Denominator floor: below it, errors are judged in absolute terms.
const ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct CaseReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Location of the worst entry, `tensor[flat index]`.
    pub worst: String,
}

impl CaseReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub seed: u64,
    pub samples: usize,
    /// Use the full 513-bin ladders for the model case, else small toys.
    pub full_size: bool,
    pub frames: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            seed: 0,
            samples: DEFAULT_SAMPLES,
            full_size: true,
            frames: 8,
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

pub fn fd_step(theta: f64) -> f64 {
    1e-4 * (1.0 + theta.abs())
}

/// At least one entry of every non-empty tensor, the rest uniformly over all
/// entries, without repetition.
fn sample_probes(sizes: &[usize], n: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let total: usize = sizes.iter().sum();
    let mut chosen = std::collections::BTreeSet::new();
    let mut offsets = Vec::with_capacity(sizes.len());
    let mut acc = 0;
    for &s in sizes {
        offsets.push(acc);
        if s > 0 && chosen.len() < n {
            chosen.insert(acc + rng.random_range(0..s));
        }
        acc += s;
    }
    let want = n.min(total);
    if chosen.len() < want {
        for flat in sample(rng, total, total.min(want * 4 + 16)).into_iter() {
            if chosen.len() >= want {
                break;
            }
            chosen.insert(flat);
        }
    }
    chosen
        .into_iter()
        .map(|flat| {
            let t = offsets.partition_point(|&o| o <= flat) - 1;
            (t, flat - offsets[t])
        })
        .collect()
}

fn compare(
    name: &str,
    labels: &[String],
    probes: &[(usize, usize)],
    analytic: impl Fn(usize, usize) -> f64,
    value: impl Fn(usize, usize) -> f64,
    mut eval_at: impl FnMut(usize, usize, f64) -> Result<f64, VaeError>,
) -> Result<CaseReport, VaeError> {
    let mut report = CaseReport {
        name: name.to_string(),
        checked: 0,
        max_rel_error: 0.0,
        worst: String::new(),
    };
    for &(t, i) in probes {
        let theta = value(t, i);
        let h = fd_step(theta);
        let plus = eval_at(t, i, theta + h)?;
        let minus = eval_at(t, i, theta - h)?;
        eval_at(t, i, theta)?;
        let numeric = (plus - minus) / (2.0 * h);
        let err = relative_error(analytic(t, i), numeric);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = format!("{}[{i}]", labels[t]);
        }
    }
    Ok(report)
}

type Build<'a> = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var, NnError> + 'a;

/// Checks a scalar function of several input tensors.
pub fn check_function(
    name: &str,
    inputs: Vec<ArrayD<f64>>,
    build: &Build<'_>,
    samples: usize,
    seed: u64,
) -> Result<CaseReport, VaeError> {
    let eval = |inputs: &[ArrayD<f64>], grads: bool| -> Result<(f64, Vec<ArrayD<f64>>), NnError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
        let loss = build(&mut tape, &vars)?;
        let value = tape.scalar(loss);
        if !grads {
            return Ok((value, Vec::new()));
        }
        tape.backward(loss)?;
        let g = vars
            .iter()
            .zip(inputs)
            .map(|(&v, x)| tape.grad(v).cloned().unwrap_or_else(|| ArrayD::zeros(x.raw_dim())))
            .collect();
        Ok((value, g))
    };
    let (_, analytic) = eval(&inputs, true)?;
    let sizes: Vec<usize> = inputs.iter().map(|x| x.len()).collect();
    let labels: Vec<String> = (0..inputs.len()).map(|i| format!("input{i}")).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probes = sample_probes(&sizes, samples, &mut rng);
    let snapshot = inputs.clone();
    let work = std::cell::RefCell::new(inputs);
    compare(
        name,
        &labels,
        &probes,
        |t, i| analytic[t].as_slice().unwrap()[i],
        |t, i| snapshot[t].as_slice().unwrap()[i],
        |t, i, v| {
            work.borrow_mut()[t].as_slice_mut().unwrap()[i] = v;
            Ok(eval(&work.borrow(), false)?.0)
        },
    )
}

fn random(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> ArrayD<f64> {
    ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.random_range(lo..hi))
}

/// `sum(y * w)` for a fixed random weighting `w`, so every output entry
/// contributes with a distinct coefficient.
fn project(tape: &mut Tape<f64>, y: Var, w: &ArrayD<f64>) -> Result<Var, NnError> {
    let wv = tape.constant(w.clone());
    let p = tape.mul(y, wv)?;
    Ok(tape.sum(p))
}

/// conv1d, transposed conv, batch norm, softplus, EQ-norm and the
/// reparameterized KL, each in isolation.
pub fn layer_cases(seed: u64, samples: usize) -> Result<Vec<CaseReport>, VaeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let w = random(&[4, 2, 9], -1.0, 1.0, &mut rng);
    let inputs = vec![
        random(&[3, 2, 9], -1.0, 1.0, &mut rng),
        random(&[4, 3, 7], -0.5, 0.5, &mut rng),
        random(&[4], -0.5, 0.5, &mut rng),
    ];
    out.push(check_function(
        "conv1d",
        inputs,
        &|t, v| {
            let y = t.conv1d(v[0], v[1], v[2])?;
            project(t, y, &w)
        },
        samples,
        seed,
    )?);

    let inputs = vec![
        random(&[3, 2, 9], -1.0, 1.0, &mut rng),
        random(&[3, 4, 7], -0.5, 0.5, &mut rng),
        random(&[4], -0.5, 0.5, &mut rng),
    ];
    out.push(check_function(
        "conv_transpose1d",
        inputs,
        &|t, v| {
            let y = t.conv_transpose1d(v[0], v[1], v[2])?;
            project(t, y, &w)
        },
        samples,
        seed,
    )?);

    let w = random(&[5, 3, 8], -1.0, 1.0, &mut rng);
    let inputs = vec![
        random(&[5, 3, 8], -2.0, 2.0, &mut rng),
        random(&[5], 0.5, 1.5, &mut rng),
        random(&[5], -0.5, 0.5, &mut rng),
    ];
    out.push(check_function(
        "batch_norm",
        inputs,
        &|t, v| {
            let (y, _) = t.batch_norm(v[0], v[1], v[2], NormStats::Batch { eps: 1e-5 })?;
            project(t, y, &w)
        },
        samples,
        seed,
    )?);

    let w = random(&[4, 3, 10], -1.0, 1.0, &mut rng);
    let inputs = vec![random(&[4, 3, 10], -4.0, 4.0, &mut rng)];
    out.push(check_function(
        "softplus",
        inputs,
        &|t, v| {
            let y = t.softplus(v[0]);
            project(t, y, &w)
        },
        samples,
        seed,
    )?);

    let inputs = vec![random(&[4, 3, 10], -2.0, 2.0, &mut rng)];
    out.push(check_function(
        "eq_norm",
        inputs,
        &|t, v| {
            let y = t.eq_norm(v[0])?;
            project(t, y, &w)
        },
        samples,
        seed,
    )?);

    let w = random(&[8, 2, 8], -1.0, 1.0, &mut rng);
    let inputs = vec![
        random(&[8, 2, 8], -1.5, 1.5, &mut rng),
        random(&[8, 2, 8], -1.5, 1.0, &mut rng),
    ];
    out.push(check_function(
        "reparameterized_kl",
        inputs,
        &|t, v| {
            let mut eps_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            let z = reparameterize(t, v[0], v[1], &mut eps_rng as &mut dyn RngCore)?;
            let code = LatentVars {
                mu: v[0],
                logvar: v[1],
                z,
            };
            let kl = kl_divergence(t, &code)?;
            let p = project(t, z, &w)?;
            t.add(kl, p)
        },
        samples,
        seed,
    )?);
    Ok(out)
}

/// The complete MAE objective with a frozen CAE, differentiated with respect
/// to sampled MAE parameters.
pub fn mae_case(cfg: &GradCheckConfig) -> Result<CaseReport, VaeError> {
    let (mae_arch, cae_arch) = if cfg.full_size {
        (Architecture::mae(), Architecture::cae())
    } else {
        (
            Architecture::custom(ModelKind::Mae, &[12, 10, 8, 6], 7),
            Architecture::custom(ModelKind::Cae, &[12, 9, 6], 7),
        )
    };
    let bins = mae_arch.input_bins();
    let mut mae = Vae::<f64>::new(mae_arch, cfg.seed);
    let cae = Vae::<f64>::new(cae_arch, cfg.seed.wrapping_add(1));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mix = random(&[bins, 2, cfg.frames], 0.1, 2.0, &mut rng);
    let noise = random(&[bins, 1, cfg.frames], 0.1, 2.0, &mut rng);
    let weights = LossWeights::default();

    let eval = |mae: &mut Vae<f64>, grads: bool| -> Result<f64, VaeError> {
        let mut tape = Tape::new();
        let bound = mae.bind(&mut tape, true);
        let m = tape.constant(mix.clone());
        let n = tape.constant(noise.clone());
        let mut eps_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
        let g = loss_mae_total(&mut tape, mae, &bound, &cae, m, Some(n), &weights, &mut eps_rng)?;
        if grads {
            tape.backward(g.total)?;
            mae.params_mut().zero_grads();
            mae.params_mut().accumulate_grads(&bound, &tape);
        }
        Ok(g.report.total)
    };
    eval(&mut mae, true)?;

    let ids: Vec<usize> = (0..mae.params().len()).filter(|&i| mae.params().get(i).trainable).collect();
    let sizes: Vec<usize> = ids.iter().map(|&i| mae.params().get(i).value.len()).collect();
    let labels: Vec<String> = ids.iter().map(|&i| mae.params().get(i).name.clone()).collect();
    let probes = sample_probes(&sizes, cfg.samples, &mut rng);
    let analytic: Vec<Vec<f64>> = ids.iter().map(|&i| mae.params().get(i).grad.iter().copied().collect()).collect();
    let values: Vec<Vec<f64>> = ids.iter().map(|&i| mae.params().get(i).value.iter().copied().collect()).collect();
    let work = std::cell::RefCell::new(mae);
    compare(
        "mae_total",
        &labels,
        &probes,
        |t, i| analytic[t][i],
        |t, i| values[t][i],
        |t, i, v| {
            let mut m = work.borrow_mut();
            m.params_mut().get_mut(ids[t]).value.as_slice_mut().unwrap()[i] = v;
            // batch statistics make the value independent of running stats
            eval(&mut m, false)
        },
    )
}

pub fn run_suite(cfg: &GradCheckConfig) -> Result<Vec<CaseReport>, VaeError> {
    let mut cases = layer_cases(cfg.seed, cfg.samples)?;
    cases.push(mae_case(cfg)?);
    Ok(cases)
}
