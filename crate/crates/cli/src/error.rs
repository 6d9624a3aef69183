use std::fmt;

use sse_core::audio_io::AudioError;
use sse_core::baseline_ss::SsError;
use sse_core::dsp::DspError;
use sse_core::enhance::EnhanceError;
use sse_core::metrics::MetricError;
use sse_core::training::TrainError;
use sse_core::vae::VaeError;

/// A command failure, classified by exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    pub const USAGE: u8 = 1;
    pub const DATA: u8 = 2;
    pub const NUMERIC: u8 = 3;

    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => Self::USAGE,
            Failure::Data(_) => Self::DATA,
            Failure::Numeric(_) => Self::NUMERIC,
        }
    }

    pub fn io(path: &std::path::Path, e: impl fmt::Display) -> Self {
        Failure::Data(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(_) => Failure::Usage(e.to_string()),
            TrainError::NonFinite { .. } => Failure::Numeric(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<EnhanceError> for Failure {
    fn from(e: EnhanceError) -> Self {
        match e {
            EnhanceError::Train(t) => t.into(),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<SsError> for Failure {
    fn from(e: SsError) -> Self {
        match e {
            SsError::InvalidConfig(_) => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

macro_rules! data_error {
    ($($t:ty),*) => {
        $(impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::Data(e.to_string())
            }
        })*
    };
}

data_error!(AudioError, DspError, MetricError, VaeError);
