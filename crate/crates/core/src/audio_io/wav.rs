use std::path::Path;

use hound::{SampleFormat, WavSpec, WavWriter};

use super::{AudioError, Waveform};

const I16_SCALE: f64 = 32768.0;

/// Reads a mono 16-bit PCM or 32-bit float WAV. Files at any other rate
/// than `expected_rate` are rejected rather than resampled.
pub fn read_wav(path: &Path, expected_rate: u32) -> Result<Waveform, AudioError> {
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(AudioError::MultiChannel {
            path: path.to_path_buf(),
            channels: spec.channels,
        });
    }
    if spec.sample_rate != expected_rate {
        return Err(AudioError::SampleRateMismatch {
            path: path.to_path_buf(),
            expected: expected_rate,
            actual: spec.sample_rate,
        });
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / I16_SCALE))
            .collect::<Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (fmt, bits) => {
            return Err(AudioError::UnsupportedEncoding {
                path: path.to_path_buf(),
                detail: format!("{fmt:?} {bits}-bit"),
            })
        }
    };
    Waveform::new(samples, spec.sample_rate)
}

/// Writes 16-bit PCM mono. Amplitudes are clipped to `[-1, 1 - 2^-15]`
/// before quantization.
pub fn write_wav(path: &Path, w: &Waveform) -> Result<(), AudioError> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in w.samples() {
        writer
            .write_sample(quantize(s))
            .map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}

fn quantize(s: f64) -> i16 {
    let clipped = s.clamp(-1.0, 1.0 - 1.0 / I16_SCALE);
    (clipped * I16_SCALE).round().clamp(-32768.0, 32767.0) as i16
}

fn map_hound(path: &Path, e: hound::Error) -> AudioError {
    let path = path.to_path_buf();
    match e {
        hound::Error::IoError(source) => AudioError::Io { path, source },
        hound::Error::FormatError(_) => AudioError::NotWav { path },
        other => AudioError::UnsupportedEncoding {
            path,
            detail: other.to_string(),
        },
    }
}
