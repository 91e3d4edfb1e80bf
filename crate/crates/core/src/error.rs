use thiserror::Error;

/// Errors produced by planning, placement and simulation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("degenerate failure probability {prob}: {guidance}")]
    DegenerateProbability { prob: f64, guidance: &'static str },

    #[error("infeasible placement for component {component} of application {app}: {reason}")]
    Infeasible {
        app: String,
        component: String,
        reason: String,
    },

    #[error("insufficient capacity on PM {pm}")]
    InsufficientCapacity { pm: usize },

    #[error("unknown physical machine {0}")]
    UnknownPm(usize),

    #[error("physical machine {0} has already failed")]
    PmAlreadyFailed(usize),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("algorithm step {line} ({step}) failed: {source}")]
    Pipeline {
        line: u8,
        step: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed document: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front-end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Infeasible { .. } => 3,
            Error::Invariant(_) => 4,
            Error::Pipeline { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
