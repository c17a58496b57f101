use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("volume metadata missing or malformed: {0}")]
    MetadataMissing(String),
    #[error("data file holds {actual} bytes, expected {expected}")]
    SizeMismatch { expected: u64, actual: u64 },
    #[error("unsupported scalar type `{0}` (expected u8, u16 or f32)")]
    UnsupportedScalarType(String),
    #[error("occupancy mask is empty")]
    EmptyMask,
    #[error("dilation did not connect the mask within {0} iterations")]
    DilationBudgetExceeded(usize),

    #[error("head and tail vertices are not connected in the mesh")]
    Disconnected,
    #[error("conjugate gradient stopped after {iterations} iterations at relative residual {residual:e}")]
    SolverDiverged { iterations: usize, residual: f64 },
    #[error("invalid vertex index {0}")]
    InvalidVertex(usize),

    #[error("harmonic field produced fewer than two level-set centroids")]
    DegenerateField,
    #[error("consecutive skeleton vertices coincide at index {0}")]
    DegenerateTangent(usize),
    #[error("polyline needs at least {needed} vertices, got {got}")]
    TooFewVertices { needed: usize, got: usize },
    #[error("no skeleton parts to merge")]
    EmptyInput,
    #[error("endpoint selection must hold an even number (>= 2) of points, got {0}")]
    BadEndpoints(usize),

    #[error("prism subdivision did not converge")]
    NonConvergence,
    #[error("parameter {value} outside [0, {max}]")]
    OutOfRange { value: f64, max: f64 },
    #[error("keyframe index {index} outside 0..{len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("consecutive keyframe normals are antipodal at keyframe {0}")]
    AntipodalNormals(usize),
    #[error("a rig needs at least two keyframes")]
    LastTwoKeyframes,
    #[error("invalid rig: {0}")]
    InvalidRig(String),
    #[error("invalid edit: {0}")]
    InvalidEdit(String),

    #[error("volume dimensions differ: {a:?} vs {b:?}")]
    DimsMismatch { a: [usize; 3], b: [usize; 3] },
    #[error("synthetic shape does not fit the requested grid: {0}")]
    DoesNotFit(String),

    #[error("session format version {0} is not supported")]
    VersionUnsupported(u64),
    #[error("session schema invalid: {0}")]
    SchemaInvalid(String),

    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
