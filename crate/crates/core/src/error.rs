use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("misaligned rasters: {0}")]
    Misaligned(String),
    #[error("CFL violated: max speed {speed} m/s × dt {dt} s exceeds 0.4 × spacing {spacing} m")]
    Cfl { speed: f64, dt: f64, spacing: f64 },
    #[error("non-finite state in {kind} {index}")]
    NonFinite { kind: &'static str, index: usize },
    #[error("unknown barrier {0}")]
    UnknownBarrier(String),
    #[error("command {command} not allowed in phase {phase}")]
    BadPhase { command: String, phase: String },
    #[error("command log: {0}")]
    CommandLog(String),
    #[error("scenario: {0}")]
    Scenario(String),
    #[error("fabrication: {0}")]
    Fabrication(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
