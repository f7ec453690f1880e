use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("operator is not Hermitian (max |A - A†| = {0:.3e})")]
    NotHermitian(f64),

    #[error("basis is not orthonormal (max deviation {0:.3e})")]
    NotOrthonormal(f64),

    /// Input failed a structural or numerical contract (not a projection,
    /// not a resolution of the identity, bad fixture, ...).
    #[error("validation failed: {0}")]
    Validation(String),

    #[error("born weights do not normalize (sum {sum:.12}, min {min:.3e})")]
    WeightNormalization { sum: f64, min: f64 },

    #[error("could not repair family member {index} within budget {budget:.3e} after {attempts} draws")]
    RepairExhausted {
        index: usize,
        budget: f64,
        attempts: usize,
    },

    #[error("no candidate within eps = {eps:.3e} of the target (nearest distance {nearest:.6})")]
    NoCandidate { eps: f64, nearest: f64 },

    #[error("precision limit: {0}")]
    Precision(String),

    #[error("target observable has a degenerate spectrum")]
    DegenerateTarget,

    #[error("registry collision: member {member} of registration m={m} coincides with registration m={other} (distance {distance:.3e})")]
    RegistryCollision {
        m: usize,
        other: usize,
        member: usize,
        distance: f64,
    },

    #[error("unknown block index {0}")]
    UnknownBlock(usize),

    #[error("family is empty")]
    EmptyFamily,

    #[error("resolution search exceeded its budget of {0} nodes")]
    SearchCap(u64),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
