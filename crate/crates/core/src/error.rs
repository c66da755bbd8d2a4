use thiserror::Error;

/// Errors raised by the echo-aware pipeline.
///
/// Variants are split into input validation problems and numerical failures so
/// that front ends can map them to distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("zero distance between microphone {mic} and source {src}")]
    DegenerateDistance { mic: usize, src: usize },
    #[error("RIR buffer too short: need at least {required} samples, got {got}")]
    Truncation { required: usize, got: usize },
    #[error("ill-conditioned design (condition number {cond:.3e})")]
    IllConditioned { cond: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("all-zero signal in {0}")]
    ZeroSignal(String),
    #[error("loop-back alignment failed: normalized correlation peak {peak:.3} below {threshold:.3}")]
    AlignmentFailure { peak: f64, threshold: f64 },
    #[error("energy decay curve never reaches {level_db} dB")]
    DecayRange { level_db: f64 },
    #[error("anchors are coplanar or collinear (singular value ratio {ratio:.3e})")]
    RankDeficient { ratio: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON error in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("WAV error in {path}: {message}")]
    Wav { path: String, message: String },
}

impl Error {
    /// True for failures caused by the numbers rather than by the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::IllConditioned { .. }
                | Error::AlignmentFailure { .. }
                | Error::DecayRange { .. }
                | Error::RankDeficient { .. }
                | Error::Numerical(_)
        )
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
