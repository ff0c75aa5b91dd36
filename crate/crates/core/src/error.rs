use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("label {label} out of range (grid has {num_labels} labels)")]
    LabelOutOfRange { label: u32, num_labels: u32 },

    #[error("voxel region {region:?} exceeds grid dims {dims:?}")]
    RegionOutOfBounds { region: [[usize; 2]; 3], dims: [usize; 3] },

    #[error("invalid object index {0}")]
    InvalidObject(usize),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("invalid object box: {0}")]
    InvalidBox(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("backward requested before forward values exist")]
    NotEvaluated,

    #[error("primitive `{0}` has no second-order rule")]
    NoSecondOrderRule(&'static str),

    #[error("non-finite {what}")]
    NonFinite { what: String },

    #[error("direction is not unit length (norm {0})")]
    NonUnitDirection(f64),

    #[error("point outside feature grid bounds")]
    OutsideGrid,

    #[error("grid dims {dims:?} must be divisible by {factor}")]
    GridNotDivisible { dims: [usize; 3], factor: usize },

    #[error("sample batch is not sorted by depth")]
    UnsortedBatch,

    #[error("empty rectangle")]
    EmptyRect,

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("{path}: {msg}")]
    Format { path: String, msg: String },

    #[error("edit script line {line}: {msg}")]
    EditScript { line: usize, msg: String },

    #[error("fitting diverged at iteration {iter}")]
    Diverged { iter: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn format(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Format { path: path.into(), msg: msg.into() }
    }
}
