use thiserror::Error;

/// Errors surfaced by the optimizer and its evaluation plumbing.
#[derive(Debug, Error)]
pub enum Error {
    #[error("space document: {0}")]
    Document(String),

    #[error("duplicate flag name `{0}`")]
    DuplicateFlag(String),

    #[error("flag `{flag}` is assigned to {count} blocks (must be exactly one)")]
    Partition { flag: String, count: usize },

    #[error("flag `{0}` has an empty candidate set")]
    EmptyDomain(String),

    #[error("flag `{flag}`: {reason}")]
    InvalidFlag { flag: String, reason: String },

    #[error("unknown flag `{0}`")]
    UnknownFlag(String),

    #[error("value {value} is outside the domain of flag `{flag}`")]
    ValueOutOfDomain { flag: String, value: String },

    #[error("stratified fidelity subsets require task categories")]
    MissingCategories,

    #[error("fidelity {m} is outside 1..={full}")]
    InvalidFidelity { m: usize, full: usize },

    #[error("simulator document: {0}")]
    Simulator(String),

    #[error("adapter transport failure on task `{task_id}`: {reason}")]
    Transport { task_id: String, reason: String },

    #[error("malformed adapter response ({reason}): {payload}")]
    Malformed { payload: String, reason: String },

    #[error("no informative evaluation records to fit")]
    EmptyHistory,

    #[error("search budget too small: need about {needed:.3} units, {available:.3} available")]
    Budget { needed: f64, available: f64 },

    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),

    #[error("prior log shares no flags with the current space (log: {log:?}, space: {space:?})")]
    NoOverlap { log: Vec<String>, space: Vec<String> },

    #[error("history: {0}")]
    History(String),

    #[error("trials must be positive")]
    ZeroTrials,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Transport failures may succeed on retry; everything else is fatal.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Transport { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
