use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("cannot access {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("non-manifold boundary: {0}")]
    NonManifoldBoundary(String),

    #[error("tetrahedron {0} has zero volume")]
    DegenerateTet(usize),

    #[error("boundary vertex {0} has a degenerate normal")]
    DegenerateNormal(usize),

    #[error("boundary has {0} connected components, expected 1")]
    DisconnectedBoundary(usize),

    #[error("unsupported NRRD feature: {0}")]
    UnsupportedNrrd(String),

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("normal at boundary vertex {index} is not unit length (|n| = {norm})")]
    NonUnitNormal { index: usize, norm: f64 },

    #[error("graph vertex {0} is isolated (zero degree)")]
    IsolatedVertex(usize),

    #[error("eigen-solver did not converge after {iterations} iterations (residual {residual:e})")]
    EigenNoConvergence { iterations: usize, residual: f64 },

    #[error("spectral bipartition produced an empty cluster")]
    EmptyCluster,

    #[error("degenerate convex hull: {0}")]
    DegenerateHull(String),

    #[error("margin of half-width {half_width} mm consumes the entire {side} cluster")]
    MarginConsumesCluster { side: &'static str, half_width: f64 },

    #[error("tetrahedron {tet} is flipped or collapsed (det J = {det:e})")]
    FlippedTet { tet: usize, det: f64 },

    #[error("connectivity mismatch: {0}")]
    ConnectivityMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: &std::path::Path, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.display().to_string(),
            line,
            msg: msg.into(),
        }
    }

    /// True for errors caused by bad invocation rather than bad data.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::InvalidParameter(_))
    }
}
