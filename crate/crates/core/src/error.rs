use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not skew-symmetric (|S + S^T| = {asymmetry:e})")]
    NonSkewInput { asymmetry: f64 },

    /// A rotation sits at (or numerically next to) the cut locus where the
    /// logarithm stops being single valued.
    #[error("rotation angle {angle} is outside the logarithm domain{}", fmt_edge(.edge))]
    AngleAtPi {
        angle: f64,
        edge: Option<(usize, usize)>,
    },

    #[error("graph is disconnected: {reached} of {n} vertices reachable from vertex 0")]
    DisconnectedGraph { reached: usize, n: usize },

    #[error("duplicate measurement on directed edge ({src}, {dst})")]
    DuplicateEdge { src: usize, dst: usize },

    #[error("vertex id {id} out of range for graph with {n} vertices")]
    DanglingVertexId { id: usize, n: usize },

    #[error("self-loop measurement on vertex {id}")]
    SelfLoop { id: usize },

    #[error("directed measurement ({src}, {dst}) has no companion ({dst}, {src})")]
    MissingCompanion { src: usize, dst: usize },

    #[error("vertex {vertex} is missing data for neighbor {neighbor}")]
    MissingNeighborData { vertex: usize, neighbor: usize },

    #[error("step size dt = {dt} is unstable for max degree {max_degree} (dt * max_degree >= 2)")]
    StepSizeUnstable { dt: f64, max_degree: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dataset generation failed: {0}")]
    GenerationFailed(String),

    #[error("parse error at line {line}: {reason} (token `{token}`)")]
    Parse {
        line: usize,
        token: String,
        reason: String,
    },

    #[error("edges reference {referenced} vertices but only {declared} were declared")]
    InconsistentVertexCount { declared: usize, referenced: usize },

    #[error("round {round} stalled for {waited_ms} ms waiting on messages")]
    Deadlock { round: usize, waited_ms: u128 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn fmt_edge(edge: &Option<(usize, usize)>) -> String {
    match edge {
        Some((i, j)) => format!(" on edge ({i}, {j})"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn with_edge(self, i: usize, j: usize) -> Self {
        match self {
            Error::AngleAtPi { angle, .. } => Error::AngleAtPi {
                angle,
                edge: Some((i, j)),
            },
            other => other,
        }
    }
}
