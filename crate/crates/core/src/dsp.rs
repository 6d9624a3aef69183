//! Short-time Fourier analysis and synthesis with a fixed geometry:
//! 1024-sample periodic Hann window, 1024-point DFT, hop 256, 513 bins.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::audio_io::Waveform;

pub const FFT_SIZE: usize = 1024;
pub const HOP: usize = 256;
pub const N_BINS: usize = FFT_SIZE / 2 + 1;

const MAG_MAGIC: &[u8; 8] = b"SSEMAG01";
const CPX_MAGIC: &[u8; 8] = b"SSECPX01";

#[derive(Debug, Error)]
pub enum DspError {
    #[error("window length {0} is too small (need at least 2)")]
    LengthTooSmall(usize),
    #[error("signal too short for one analysis frame")]
    TooShort,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("negative magnitude at bin {bin}, frame {frame}")]
    NegativeMagnitude { bin: usize, frame: usize },
    #[error("malformed spectrogram dump: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One-sided complex STFT, shape `(513, frames)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub values: Array2<Complex64>,
    pub sample_rate: u32,
    pub hop: usize,
}

/// Nonnegative magnitudes, shape `(513, frames)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MagSpectrogram {
    pub values: Array2<f64>,
    pub sample_rate: u32,
    pub hop: usize,
}

/// Phases in `(-pi, pi]`, shape `(513, frames)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpectrogram {
    pub values: Array2<f64>,
}

impl ComplexSpectrogram {
    pub fn frames(&self) -> usize {
        self.values.ncols()
    }
}

impl MagSpectrogram {
    pub fn frames(&self) -> usize {
        self.values.ncols()
    }
}

/// Periodic Hann window, `w[k] = 0.5 (1 - cos(2 pi k / n))`.
pub fn hann_window(n: usize) -> Result<Vec<f64>, DspError> {
    if n < 2 {
        return Err(DspError::LengthTooSmall(n));
    }
    Ok((0..n)
        .map(|k| 0.5 * (1.0 - (2.0 * PI * k as f64 / n as f64).cos()))
        .collect())
}

/// Number of frames for a signal of `len` samples (after zero padding short
/// signals to one window).
pub fn frame_count(len: usize) -> usize {
    let padded = len.max(FFT_SIZE);
    (padded - FFT_SIZE) / HOP + 1
}

/// Frame `t` covers samples `[t * 256, t * 256 + 1024)`; no centering.
/// Signals shorter than one window are zero-padded to 1024 samples.
pub fn stft(w: &Waveform) -> Result<ComplexSpectrogram, DspError> {
    let x = w.samples();
    let mut padded;
    let x: &[f64] = if x.len() < FFT_SIZE {
        padded = x.to_vec();
        padded.resize(FFT_SIZE, 0.0);
        &padded
    } else {
        x
    };
    if x.len() < FFT_SIZE {
        return Err(DspError::TooShort);
    }
    let window = hann_window(FFT_SIZE)?;
    let frames = frame_count(x.len());
    let fft = FftPlanner::<f64>::new().plan_fft_forward(FFT_SIZE);
    let mut values = Array2::<Complex64>::zeros((N_BINS, frames));
    let mut buf = vec![Complex64::new(0.0, 0.0); FFT_SIZE];
    for t in 0..frames {
        let start = t * HOP;
        for (n, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(window[n] * x[start + n], 0.0);
        }
        fft.process(&mut buf);
        for f in 0..N_BINS {
            values[[f, t]] = buf[f];
        }
    }
    Ok(ComplexSpectrogram {
        values,
        sample_rate: w.sample_rate(),
        hop: HOP,
    })
}

/// Weighted overlap-add inverse: each frame is windowed again and the sum is
/// divided per sample by `sum_t w^2[m - t * hop]`. Samples with no window
/// support are zero. The result is truncated or zero-padded to `length`.
/// Floor on the squared-window sum; the interior sum is 1.5, so only the
/// outermost ~100 samples at each edge see it. Without it modified spectra
/// blow up by `1/w` where a single frame's window tapers to zero.
const MIN_WINDOW_NORM: f64 = 0.1;

pub fn istft(s: &ComplexSpectrogram, length: usize) -> Result<Waveform, DspError> {
    if s.values.nrows() != N_BINS || s.hop != HOP {
        return Err(DspError::ShapeMismatch(format!(
            "expected {N_BINS} bins at hop {HOP}, got {} bins at hop {}",
            s.values.nrows(),
            s.hop
        )));
    }
    let frames = s.frames();
    let window = hann_window(FFT_SIZE)?;
    let span = if frames == 0 { 0 } else { (frames - 1) * HOP + FFT_SIZE };
    let mut out = vec![0.0; span.max(length)];
    let mut norm = vec![0.0; span.max(length)];
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(FFT_SIZE);
    let mut buf = vec![Complex64::new(0.0, 0.0); FFT_SIZE];
    for t in 0..frames {
        for f in 0..N_BINS {
            buf[f] = s.values[[f, t]];
        }
        for f in N_BINS..FFT_SIZE {
            buf[f] = s.values[[FFT_SIZE - f, t]].conj();
        }
        ifft.process(&mut buf);
        let start = t * HOP;
        for n in 0..FFT_SIZE {
            let frame_sample = buf[n].re / FFT_SIZE as f64;
            out[start + n] += window[n] * frame_sample;
            norm[start + n] += window[n] * window[n];
        }
    }
    for (o, &d) in out.iter_mut().zip(&norm) {
        *o /= d.max(MIN_WINDOW_NORM);
    }
    out.truncate(length);
    Waveform::new(out, s.sample_rate).map_err(|e| DspError::ShapeMismatch(e.to_string()))
}

pub fn magnitude(s: &ComplexSpectrogram) -> MagSpectrogram {
    MagSpectrogram {
        values: s.values.mapv(|c| c.norm()),
        sample_rate: s.sample_rate,
        hop: s.hop,
    }
}

pub fn phase(s: &ComplexSpectrogram) -> PhaseSpectrogram {
    PhaseSpectrogram {
        values: s.values.mapv(|c| c.arg()),
    }
}

/// Polar recombination `mag * e^{j phase}`.
pub fn combine(mag: &MagSpectrogram, phase: &PhaseSpectrogram) -> Result<ComplexSpectrogram, DspError> {
    if mag.values.dim() != phase.values.dim() {
        return Err(DspError::ShapeMismatch(format!(
            "magnitude {:?} vs phase {:?}",
            mag.values.dim(),
            phase.values.dim()
        )));
    }
    if let Some(((bin, frame), _)) = mag.values.indexed_iter().find(|(_, &m)| m < 0.0 || m.is_nan()) {
        return Err(DspError::NegativeMagnitude { bin, frame });
    }
    let values = ndarray::Zip::from(&mag.values)
        .and(&phase.values)
        .map_collect(|&m, &p| Complex64::from_polar(m, p));
    Ok(ComplexSpectrogram {
        values,
        sample_rate: mag.sample_rate,
        hop: mag.hop,
    })
}

fn write_header(out: &mut Vec<u8>, magic: &[u8; 8], bins: usize, frames: usize, hop: usize, rate: u32) {
    out.extend_from_slice(magic);
    for v in [bins as u32, frames as u32, hop as u32, rate] {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Debug dump: magic, then bins, frames, hop and sample rate as `u32`, then
/// bin-major `f64` data.
pub fn write_magnitude_dump(path: &Path, m: &MagSpectrogram) -> Result<(), DspError> {
    let (bins, frames) = m.values.dim();
    let mut out = Vec::with_capacity(24 + 8 * bins * frames);
    write_header(&mut out, MAG_MAGIC, bins, frames, m.hop, m.sample_rate);
    for &v in m.values.as_standard_layout().iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

/// Same layout as [`write_magnitude_dump`] with interleaved real/imaginary
/// pairs.
pub fn write_complex_dump(path: &Path, s: &ComplexSpectrogram) -> Result<(), DspError> {
    let (bins, frames) = s.values.dim();
    let mut out = Vec::with_capacity(24 + 16 * bins * frames);
    write_header(&mut out, CPX_MAGIC, bins, frames, s.hop, s.sample_rate);
    for c in s.values.as_standard_layout().iter() {
        out.extend_from_slice(&c.re.to_le_bytes());
        out.extend_from_slice(&c.im.to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

fn read_dump(path: &Path, magic: &[u8; 8], per_value: usize) -> Result<(usize, usize, u32, u32, Vec<f64>), DspError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 24 || &bytes[..8] != magic {
        return Err(DspError::Corrupt("bad magic".into()));
    }
    let u = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap());
    let (bins, frames, hop, rate) = (u(0) as usize, u(1) as usize, u(2), u(3));
    let expected = 24 + 8 * per_value * bins * frames;
    if bytes.len() != expected {
        return Err(DspError::Corrupt(format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let data = bytes[24..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((bins, frames, hop, rate, data))
}

pub fn read_magnitude_dump(path: &Path) -> Result<MagSpectrogram, DspError> {
    let (bins, frames, hop, rate, data) = read_dump(path, MAG_MAGIC, 1)?;
    Ok(MagSpectrogram {
        values: Array2::from_shape_vec((bins, frames), data).map_err(|e| DspError::Corrupt(e.to_string()))?,
        sample_rate: rate,
        hop: hop as usize,
    })
}

pub fn read_complex_dump(path: &Path) -> Result<ComplexSpectrogram, DspError> {
    let (bins, frames, hop, rate, data) = read_dump(path, CPX_MAGIC, 2)?;
    let values: Vec<Complex64> = data.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
    Ok(ComplexSpectrogram {
        values: Array2::from_shape_vec((bins, frames), values).map_err(|e| DspError::Corrupt(e.to_string()))?,
        sample_rate: rate,
        hop: hop as usize,
    })
}
