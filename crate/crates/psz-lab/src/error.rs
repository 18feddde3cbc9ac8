use thiserror::Error;

/// Errors surfaced by the simulation, solver, and training layers.
#[derive(Debug, Error)]
pub enum PszError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("degenerate zone: {0}")]
    DegenerateZone(String),

    #[error("coordinate out of range: {0}")]
    OutOfRange(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("structural error: {0}")]
    Structure(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("insufficient decay in impulse response: {0}")]
    InsufficientDecay(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PszError>;

impl PszError {
    /// Process exit code contract: 2 config, 3 domain, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            PszError::Config(_) | PszError::Format(_) => 2,
            PszError::Geometry(_)
            | PszError::DegenerateZone(_)
            | PszError::OutOfRange(_)
            | PszError::Structure(_) => 3,
            PszError::Singular(_) | PszError::Numerical(_) | PszError::InsufficientDecay(_) => 4,
            PszError::Io(_) => 2,
        }
    }
}
