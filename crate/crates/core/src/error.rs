//! Error type shared by all weightsel modules.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed checkpoint header: {0}")]
    MalformedHeader(String),

    #[error("unknown dtype tag {0:?} (supported: F32, F16, F64)")]
    UnknownDtype(String),

    #[error("duplicate tensor name {0:?}")]
    DuplicateTensor(String),

    #[error(
        "tensor {name:?}: payload window [{start}, {end}) exceeds data section of {len} bytes"
    )]
    OffsetOutOfBounds {
        name: String,
        start: u64,
        end: u64,
        len: u64,
    },

    #[error("tensors {a:?} and {b:?} declare overlapping payload windows")]
    OffsetOverlap { a: String, b: String },

    #[error("invalid tensor {name:?}: {reason}")]
    InvalidTensor { name: String, reason: String },

    #[error("descriptor schema violation: {0}")]
    DescriptorSchema(String),

    #[error("axis role references undefined dim_group {0:?}")]
    DanglingDimGroup(String),

    #[error("checkpoint is missing tensor {name:?} (expanded from template {template:?})")]
    MissingTensor { name: String, template: String },

    #[error(
        "tensor {name:?}: descriptor declares rank {expected} but checkpoint has rank {actual}"
    )]
    RankMismatch {
        name: String,
        expected: usize,
        actual: usize,
    },

    #[error("tensor {name:?} axis {axis}: expected length {expected}, found {actual}")]
    AxisLengthMismatch {
        name: String,
        axis: usize,
        expected: usize,
        actual: usize,
    },

    #[error("descriptors describe different families: {teacher:?} vs {student:?}")]
    FamilyMismatch { teacher: String, student: String },

    #[error("descriptors are structurally incompatible: {0}")]
    IncompatibleDescriptors(String),

    #[error("dim_group {group:?}: student width {student} exceeds teacher width {teacher}")]
    StudentWiderThanTeacher {
        group: String,
        teacher: usize,
        student: usize,
    },

    #[error("stage {stage:?}: student depth {student} exceeds teacher depth {teacher}")]
    StudentDeeperThanTeacher {
        stage: String,
        teacher: usize,
        student: usize,
    },

    #[error("fixed axis mismatch on {name:?} axis {axis}: teacher {teacher}, student {student}")]
    FixedAxisMismatch {
        name: String,
        axis: usize,
        teacher: usize,
        student: usize,
    },

    #[error("cannot select {wanted} slices out of {available}")]
    SelectionTooWide { wanted: usize, available: usize },

    #[error(
        "plan is corrupted: tensor {name:?} axis {axis} selects index {index} out of width {width}"
    )]
    IndexOutOfRange {
        name: String,
        axis: usize,
        index: usize,
        width: usize,
    },

    #[error("method {0:?} requires a seed")]
    SeedRequired(String),

    #[error("vector length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("probability vector not normalized: sum = {sum}")]
    NotNormalized { sum: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
