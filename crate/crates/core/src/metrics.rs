//! Objective quality measures between a reference and an estimate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio_io::Waveform;
use crate::dsp::{self, hann_window, DspError};

/// Reported in place of an infinite SI-SDR.
pub const SI_SDR_CAP_DB: f64 = 100.0;

pub const SEG_FRAME: usize = 512;
pub const SEG_HOP: usize = 256;
pub const SEG_SNR_MIN_DB: f64 = -10.0;
pub const SEG_SNR_MAX_DB: f64 = 35.0;
pub const SEG_GATE_DBFS: f64 = -60.0;

pub const LPC_ORDER: usize = 16;
pub const LLR_FRAME: usize = 512;
pub const LLR_HOP: usize = 256;
pub const LLR_MAX: f64 = 2.0;
pub const LLR_KEEP: f64 = 0.95;
const LPC_LOADING: f64 = 1e-9;

pub const LSD_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("reference signal is silent")]
    SilentReference,
    #[error("length mismatch: reference has {reference} samples, estimate {estimate}")]
    LengthMismatch { reference: usize, estimate: usize },
    #[error("sample rate mismatch: {reference} Hz vs {estimate} Hz")]
    RateMismatch { reference: u32, estimate: u32 },
    #[error("LPC analysis unstable in frame {frame}")]
    UnstableLpc { frame: usize },
    #[error(transparent)]
    Dsp(#[from] DspError),
}

fn check_pair(r: &Waveform, e: &Waveform) -> Result<(), MetricError> {
    if r.len() != e.len() {
        return Err(MetricError::LengthMismatch {
            reference: r.len(),
            estimate: e.len(),
        });
    }
    if r.sample_rate() != e.sample_rate() {
        return Err(MetricError::RateMismatch {
            reference: r.sample_rate(),
            estimate: e.sample_rate(),
        });
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Scale-invariant SDR in dB, capped at [`SI_SDR_CAP_DB`].
pub fn si_sdr(reference: &Waveform, estimate: &Waveform) -> Result<f64, MetricError> {
    check_pair(reference, estimate)?;
    let r = reference.samples();
    let e = estimate.samples();
    let rr = dot(r, r);
    if rr == 0.0 {
        return Err(MetricError::SilentReference);
    }
    let alpha = dot(e, r) / rr;
    let (mut ss, mut ee) = (0.0, 0.0);
    for (&ri, &ei) in r.iter().zip(e) {
        let s = alpha * ri;
        ss += s * s;
        ee += (ei - s) * (ei - s);
    }
    if ee == 0.0 {
        return Ok(SI_SDR_CAP_DB);
    }
    Ok((10.0 * (ss / ee).log10()).min(SI_SDR_CAP_DB))
}

/// Start offsets of `frame`-long windows at `hop`; a signal shorter than
/// one frame yields a single (short) frame.
fn frame_starts(len: usize, frame: usize, hop: usize) -> Vec<usize> {
    if len <= frame {
        return vec![0];
    }
    (0..=(len - frame) / hop).map(|i| i * hop).collect()
}

/// Frame-averaged clamped SNR over frames whose reference level exceeds the
/// gate.
pub fn seg_snr(reference: &Waveform, estimate: &Waveform) -> Result<f64, MetricError> {
    check_pair(reference, estimate)?;
    let r = reference.samples();
    let e = estimate.samples();
    let mut total = 0.0;
    let mut n = 0usize;
    for start in frame_starts(r.len(), SEG_FRAME, SEG_HOP) {
        let end = (start + SEG_FRAME).min(r.len());
        let rf = &r[start..end];
        let sig: f64 = rf.iter().map(|x| x * x).sum();
        if sig == 0.0 || 10.0 * (sig / rf.len() as f64).log10() <= SEG_GATE_DBFS {
            continue;
        }
        let err: f64 = rf.iter().zip(&e[start..end]).map(|(a, b)| (a - b) * (a - b)).sum();
        let snr = if err == 0.0 {
            SEG_SNR_MAX_DB
        } else {
            10.0 * (sig / err).log10()
        };
        total += snr.clamp(SEG_SNR_MIN_DB, SEG_SNR_MAX_DB);
        n += 1;
    }
    if n == 0 {
        return Err(MetricError::SilentReference);
    }
    Ok(total / n as f64)
}

fn autocorrelation(x: &[f64], order: usize) -> Vec<f64> {
    (0..=order)
        .map(|lag| x.iter().zip(x.iter().skip(lag)).map(|(a, b)| a * b).sum())
        .collect()
}

/// Levinson-Durbin recursion. Returns `a` with `a[0] = 1` minimizing
/// `a R a^T` for the Toeplitz matrix of `r`, or `None` if the prediction
/// error stops being positive.
pub fn levinson(r: &[f64]) -> Option<Vec<f64>> {
    let p = r.len() - 1;
    let mut a = vec![0.0; p + 1];
    a[0] = 1.0;
    let mut err = r[0];
    if !(err > 0.0) {
        return None;
    }
    for i in 1..=p {
        let acc: f64 = (0..i).map(|j| a[j] * r[i - j]).sum();
        let k = -acc / err;
        let prev = a.clone();
        for j in 1..i {
            a[j] = prev[j] + k * prev[i - j];
        }
        a[i] = k;
        err *= 1.0 - k * k;
        if !(err > 0.0) || !err.is_finite() {
            return None;
        }
    }
    Some(a)
}

/// `a R a^T` for the symmetric Toeplitz matrix built from `r`.
pub fn toeplitz_form(a: &[f64], r: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        for j in 0..a.len() {
            s += a[i] * a[j] * r[i.abs_diff(j)];
        }
    }
    s
}

/// Unclamped per-frame LLR values.
pub fn llr_frames(reference: &Waveform, estimate: &Waveform) -> Result<Vec<f64>, MetricError> {
    check_pair(reference, estimate)?;
    let r = reference.samples();
    let e = estimate.samples();
    let window = hann_window(LLR_FRAME)?;
    let mut out = Vec::new();
    for (idx, start) in frame_starts(r.len(), LLR_FRAME, LLR_HOP).into_iter().enumerate() {
        let windowed = |x: &[f64]| -> Vec<f64> {
            (0..LLR_FRAME)
                .map(|n| x.get(start + n).copied().unwrap_or(0.0) * window[n])
                .collect()
        };
        let mut rr = autocorrelation(&windowed(r), LPC_ORDER);
        let mut re = autocorrelation(&windowed(e), LPC_ORDER);
        rr[0] += LPC_LOADING;
        re[0] += LPC_LOADING;
        let unstable = MetricError::UnstableLpc { frame: idx };
        let ar = levinson(&rr).ok_or(unstable)?;
        let ae = levinson(&re).ok_or(MetricError::UnstableLpc { frame: idx })?;
        out.push((toeplitz_form(&ae, &rr) / toeplitz_form(&ar, &rr)).ln());
    }
    Ok(out)
}

/// Mean of the smallest 95% of clamped per-frame LLR values.
pub fn llr(reference: &Waveform, estimate: &Waveform) -> Result<f64, MetricError> {
    if reference.power() == 0.0 {
        return Err(MetricError::SilentReference);
    }
    let mut d: Vec<f64> = llr_frames(reference, estimate)?
        .into_iter()
        .map(|v| v.clamp(0.0, LLR_MAX))
        .collect();
    d.sort_by(f64::total_cmp);
    let keep = ((d.len() as f64 * LLR_KEEP).round() as usize).clamp(1, d.len());
    Ok(d[..keep].iter().sum::<f64>() / keep as f64)
}

/// Log-spectral distance in dB over STFT magnitudes.
pub fn lsd(reference: &Waveform, estimate: &Waveform) -> Result<f64, MetricError> {
    check_pair(reference, estimate)?;
    let rm = dsp::magnitude(&dsp::stft(reference)?).values;
    let em = dsp::magnitude(&dsp::stft(estimate)?).values;
    Ok(lsd_magnitudes(&rm, &em))
}

/// Log-spectral distance between two magnitude arrays of equal shape.
pub fn lsd_magnitudes(r: &ndarray::Array2<f64>, e: &ndarray::Array2<f64>) -> f64 {
    let frames = r.ncols();
    let mut total = 0.0;
    for t in 0..frames {
        let mean_sq = r
            .column(t)
            .iter()
            .zip(e.column(t))
            .map(|(&a, &b)| {
                let d = 20.0 * (a.max(LSD_FLOOR) / b.max(LSD_FLOOR)).log10();
                d * d
            })
            .sum::<f64>()
            / r.nrows() as f64;
        total += mean_sq.sqrt();
    }
    total / frames as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub si_sdr_db: f64,
    pub seg_snr_db: f64,
    pub llr: f64,
    pub lsd_db: f64,
}

impl MetricReport {
    pub const COLUMNS: [&'static str; 4] = ["si_sdr_db", "seg_snr_db", "llr", "lsd_db"];

    pub fn values(&self) -> [f64; 4] {
        [self.si_sdr_db, self.seg_snr_db, self.llr, self.lsd_db]
    }

    fn from_values(v: [f64; 4]) -> Self {
        MetricReport {
            si_sdr_db: v[0],
            seg_snr_db: v[1],
            llr: v[2],
            lsd_db: v[3],
        }
    }
}

pub fn evaluate(reference: &Waveform, estimate: &Waveform) -> Result<MetricReport, MetricError> {
    Ok(MetricReport {
        si_sdr_db: si_sdr(reference, estimate)?,
        seg_snr_db: seg_snr(reference, estimate)?,
        llr: llr(reference, estimate)?,
        lsd_db: lsd(reference, estimate)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub mean: MetricReport,
    pub median: MetricReport,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn aggregate(reports: &[MetricReport]) -> Aggregate {
    let mut mean = [0.0; 4];
    let mut med = [0.0; 4];
    for k in 0..4 {
        let col: Vec<f64> = reports.iter().map(|r| r.values()[k]).collect();
        mean[k] = col.iter().sum::<f64>() / col.len().max(1) as f64;
        med[k] = median(&col);
    }
    Aggregate {
        count: reports.len(),
        mean: MetricReport::from_values(mean),
        median: MetricReport::from_values(med),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wave(v: Vec<f64>) -> Waveform {
        Waveform::new(v, 16_000).unwrap()
    }

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| r.random_range(-0.5..0.5)).collect()
    }

    fn voiced(n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| {
                let t = i as f64 / 16_000.0;
                0.3 * (2.0 * std::f64::consts::PI * 180.0 * t).sin()
                    + 0.2 * (2.0 * std::f64::consts::PI * 540.0 * t).sin()
                    + 0.1 * (2.0 * std::f64::consts::PI * 1260.0 * t).cos()
            })
            .collect()
    }

    #[test]
    fn si_sdr_cap_and_scale() {
        let r = wave(noise(4000, 1));
        assert_eq!(si_sdr(&r, &r).unwrap(), SI_SDR_CAP_DB);
        let half = wave(r.samples().iter().map(|x| 0.5 * x).collect());
        assert_eq!(si_sdr(&r, &half).unwrap(), SI_SDR_CAP_DB);
    }

    #[test]
    fn si_sdr_constructed_ten_db() {
        // n orthogonal to r with |r|^2 / |n|^2 = 10
        let r: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let n: Vec<f64> = (0..1000)
            .map(|i| if (i / 2) % 2 == 0 { 1.0 } else { -1.0 } * 0.1f64.sqrt())
            .collect();
        assert!(dot(&r, &n).abs() < 1e-12);
        let est: Vec<f64> = r.iter().zip(&n).map(|(a, b)| a + b).collect();
        let v = si_sdr(&wave(r), &wave(est)).unwrap();
        assert!((v - 10.0).abs() < 1e-9, "{v}");
    }

    #[test]
    fn si_sdr_errors() {
        let z = wave(vec![0.0; 10]);
        assert!(matches!(si_sdr(&z, &z), Err(MetricError::SilentReference)));
        assert!(matches!(
            si_sdr(&wave(vec![1.0; 10]), &wave(vec![1.0; 11])),
            Err(MetricError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn seg_snr_identity_and_negation() {
        let r = wave(noise(4096, 2));
        assert_eq!(seg_snr(&r, &r).unwrap(), 35.0);
        let neg = wave(r.samples().iter().map(|x| -x).collect());
        assert!((seg_snr(&r, &neg).unwrap() - 10.0 * 0.25f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn seg_snr_three_frame_hand_case() {
        // 1024 unit samples give frames [0,512), [256,768), [512,1024).
        // Per-256-block error energies e0..e3 are chosen so the frame error
        // energies e0+e1, e1+e2, e2+e3 equal 512, 5.12 and 0.00512.
        let blocks = [506.88512, 5.11488, 0.00512, 0.0];
        let est: Vec<f64> = (0..1024).map(|i| 1.0 - (blocks[i / 256] / 256.0f64).sqrt()).collect();
        let v = seg_snr(&wave(vec![1.0; 1024]), &wave(est)).unwrap();
        assert!((v - 55.0 / 3.0).abs() < 1e-9, "{v}");
    }

    #[test]
    fn seg_snr_gates_silent_frames() {
        let mut r = noise(2048, 3);
        r.extend(std::iter::repeat_n(0.0, 2048));
        let mut e = r.clone();
        for x in e.iter_mut().skip(2048) {
            *x = 0.3;
        }
        // only frames overlapping the active half count, all exact except
        // the one straddling the boundary
        let v = seg_snr(&wave(r), &wave(e)).unwrap();
        assert!(v > 20.0, "{v}");
    }

    #[test]
    fn llr_of_identical_signals_is_zero() {
        for x in [noise(8000, 4), voiced(8000)] {
            let w = wave(x);
            assert_eq!(llr(&w, &w).unwrap(), 0.0);
        }
    }

    /// Normal equations solved by Gaussian elimination and a full matrix
    /// product, independent of the Levinson path.
    fn direct_llr_frame(r: &[f64], e: &[f64]) -> f64 {
        let p = LPC_ORDER;
        let lpc = |x: &[f64]| -> (Vec<f64>, Vec<Vec<f64>>) {
            let mut c = vec![0.0; p + 1];
            for lag in 0..=p {
                for n in lag..x.len() {
                    c[lag] += x[n] * x[n - lag];
                }
            }
            c[0] += 1e-9;
            let full: Vec<Vec<f64>> = (0..=p).map(|i| (0..=p).map(|j| c[i.abs_diff(j)]).collect()).collect();
            // minimize a R a^T with a0 = 1: R[1..,1..] a' = -R[1..,0]
            let mut m: Vec<Vec<f64>> = (1..=p)
                .map(|i| {
                    let mut row: Vec<f64> = (1..=p).map(|j| full[i][j]).collect();
                    row.push(-full[i][0]);
                    row
                })
                .collect();
            for col in 0..p {
                let piv = (col..p).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())).unwrap();
                m.swap(col, piv);
                for row in 0..p {
                    if row != col {
                        let f = m[row][col] / m[col][col];
                        for k in col..=p {
                            m[row][k] -= f * m[col][k];
                        }
                    }
                }
            }
            let mut a = vec![1.0];
            a.extend((0..p).map(|i| m[i][p] / m[i][i]));
            (a, full)
        };
        let (ar, rmat) = lpc(r);
        let (ae, _) = lpc(e);
        let form = |a: &[f64]| -> f64 {
            let ra: Vec<f64> = rmat.iter().map(|row| dot(row, a)).collect();
            dot(a, &ra)
        };
        (form(&ae) / form(&ar)).ln()
    }

    #[test]
    fn llr_frames_match_direct_quadratic_forms() {
        // a small broadband floor keeps the reference autocorrelation well
        // conditioned, as in real speech
        let r: Vec<f64> = voiced(4096).iter().zip(noise(4096, 9)).map(|(v, n)| v + 0.02 * n).collect();
        let e = noise(4096, 5);
        let got = llr_frames(&wave(r.clone()), &wave(e.clone())).unwrap();
        let w = hann_window(LLR_FRAME).unwrap();
        for (k, start) in frame_starts(4096, LLR_FRAME, LLR_HOP).into_iter().enumerate() {
            let rf: Vec<f64> = (0..LLR_FRAME).map(|n| r[start + n] * w[n]).collect();
            let ef: Vec<f64> = (0..LLR_FRAME).map(|n| e[start + n] * w[n]).collect();
            let want = direct_llr_frame(&rf, &ef);
            assert!((got[k] - want).abs() <= 1e-8 * want.abs().max(1.0), "frame {k}: {} vs {want}", got[k]);
            assert!(got[k] >= 0.0);
        }
    }

    #[test]
    fn lsd_closed_forms() {
        let r = wave(voiced(4096));
        assert_eq!(lsd(&r, &r).unwrap(), 0.0);
        let big = ndarray::Array2::from_shape_fn((5, 3), |(i, j)| 1.0 + (i * 3 + j) as f64);
        let ten = big.mapv(|v| 10.0 * v);
        assert!((lsd_magnitudes(&big, &ten) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn lsd_formula_oracle() {
        let r = wave(noise(3000, 6));
        let e = wave(noise(3000, 7));
        let rm = dsp::magnitude(&dsp::stft(&r).unwrap()).values;
        let em = dsp::magnitude(&dsp::stft(&e).unwrap()).values;
        let mut acc = 0.0;
        for t in 0..rm.ncols() {
            let mut s = 0.0;
            for f in 0..rm.nrows() {
                let d = 20.0 * rm[[f, t]].max(1e-8).log10() - 20.0 * em[[f, t]].max(1e-8).log10();
                s += d * d;
            }
            acc += (s / rm.nrows() as f64).sqrt();
        }
        let want = acc / rm.ncols() as f64;
        let got = lsd(&r, &e).unwrap();
        assert!((got - want).abs() <= 1e-9 * want, "{got} vs {want}");
    }

    #[test]
    fn aggregates() {
        let rs: Vec<MetricReport> = [1.0, 2.0, 4.0]
            .iter()
            .map(|&v| MetricReport {
                si_sdr_db: v,
                seg_snr_db: -v,
                llr: v / 2.0,
                lsd_db: 0.0,
            })
            .collect();
        let a = aggregate(&rs);
        assert_eq!(a.count, 3);
        assert!((a.mean.si_sdr_db - 7.0 / 3.0).abs() < 1e-12);
        assert_eq!(a.median.si_sdr_db, 2.0);
        assert_eq!(a.median.seg_snr_db, -2.0);
        assert_eq!(median(&[3.0, 1.0]), 2.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn si_sdr_is_scale_invariant(seed in 0u64..1000, exp in -6i32..6, k in 0.01f64..100.0) {
            let r = wave(noise(2048, seed));
            let e = wave(noise(2048, seed + 1).iter().zip(r.samples()).map(|(n, s)| s + 0.3 * n).collect());
            let base = si_sdr(&r, &e).unwrap();
            // powers of two scale exactly
            let p2 = 2f64.powi(exp);
            let scaled = wave(e.samples().iter().map(|x| x * p2).collect());
            prop_assert_eq!(si_sdr(&r, &scaled).unwrap(), base);
            let scaled = wave(e.samples().iter().map(|x| x * k).collect());
            prop_assert!((si_sdr(&r, &scaled).unwrap() - base).abs() < 1e-9);
        }

        #[test]
        fn llr_nonnegative_per_frame(seed in 0u64..1000) {
            let r = wave(voiced(2048));
            let e = wave(noise(2048, seed));
            let frames = llr_frames(&r, &e).unwrap();
            prop_assert!(frames.iter().all(|&d| d >= -1e-12));
            let v = llr(&r, &e).unwrap();
            prop_assert!((0.0..=LLR_MAX).contains(&v));
        }
    }
}
