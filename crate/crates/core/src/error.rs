use thiserror::Error;

/// Error type shared across the mesh/bundle/optimization stack.
#[derive(Debug, Error)]
pub enum KareaError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("gluing error: {0}")]
    Gluing(String),

    #[error("surgery plan error: {0}")]
    Plan(String),

    #[error("mesh invariant violated: {0}")]
    Invariant(String),

    #[error("matrix log branch cut: eigenvalue within {distance:.3e} of -1")]
    BranchCut { distance: f64 },

    #[error("branch cut at plaquette {plaquette}: eigenvalue within {distance:.3e} of -1")]
    BranchCutAt { plaquette: usize, distance: f64 },

    #[error("optimizer escaped the topological sector at iteration {iteration}")]
    SectorEscape { iteration: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, KareaError>;
