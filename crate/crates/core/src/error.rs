//! Error types shared across the toolkit.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-positive Jacobian det F = {det}")]
    NonPositiveJacobian { det: f64 },

    #[error("Newton solver diverged after {iterations} iterations (residual {residual:.3e})")]
    NewtonDivergence { iterations: usize, residual: f64 },

    #[error("all voxels removed, no matrix material left")]
    EmptyMatrix,

    #[error("matrix phase is not voxel-face-connected")]
    DisconnectedMatrix,

    #[error("boundary node {node} has no periodic partner")]
    UnmatchedBoundaryNode { node: usize },

    #[error("tangent system is singular")]
    SingularTangent,

    #[error("reduced solver diverged: {reason}")]
    RomDivergence { reason: String },

    #[error("requested {requested} modes exceeds numerical rank {rank}")]
    RankDeficient { requested: usize, rank: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("snapshot set carries no integration-point stresses")]
    MissingStressSnapshots,

    #[error("active set stalled: no descent column left with {nonzeros} nonzeros")]
    StalledActiveSet { nonzeros: usize },

    #[error("cubature weight selection is empty")]
    EmptySelection,

    #[error("macro parameter samples span fewer than 9 independent directions")]
    RankDeficientParameters,

    #[error("non-positive Jacobian det F = {det} at cluster {cluster}, snapshot {snapshot}")]
    ObjectiveInadmissible {
        cluster: usize,
        snapshot: usize,
        det: f64,
    },

    #[error("reference strain inverted (det F <= 0) in cluster {cluster}")]
    ReferenceInverted { cluster: usize },

    #[error("reduced system matrix is singular")]
    SingularReducedSystem,

    #[error("validation stress has zero norm, relative error undefined")]
    ZeroReferenceNorm,

    #[error("unsupported store format version {found}")]
    FormatVersionMismatch { found: u32 },

    #[error("checksum mismatch in {path}")]
    ChecksumMismatch { path: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
