use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = AuditError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{}: row {row} has {found} fields, header declares {expected}", path.display())]
    RaggedRow {
        path: PathBuf,
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("{}: row {row}, column {col}: {value:?} is not a finite number", path.display())]
    NonFiniteValue {
        path: PathBuf,
        row: usize,
        col: usize,
        value: String,
    },
    #[error("feature matrix has no rows")]
    EmptyMatrix,
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: malformed CSV: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("report validation failed: {0}")]
    Validation(String),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("alpha {0} is outside [0, 1]")]
    AlphaOutOfRange(f64),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("every row was removed by the outlier filter")]
    AllRowsRemoved,
    #[error("member and non-member populations are indistinguishable; alpha is unidentifiable")]
    DegeneratePopulations,
    #[error("member and non-member kernel embeddings coincide (D = {0:e}); alpha is unidentifiable")]
    DegenerateEmbeddings(f64),
    #[error("all points are identical; supply a kernel bandwidth explicitly")]
    AllPointsIdentical,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("input too large: {0}")]
    TooLarge(String),
    #[error("sets must have equal size ({0} vs {1})")]
    UnequalSizes(usize, usize),
    #[error("Sinkhorn underflow in linear domain; retry with log-domain iterations or a larger epsilon")]
    NumericalUnderflow,
    #[error("weights must be nonnegative and sum to 1: {0}")]
    NonProbabilityWeights(String),
    #[error("{failed} of {total} bootstrap groups failed (limit is 20%)")]
    TooManyFailedGroups { failed: usize, total: usize },
    #[error("covariance is not positive semidefinite")]
    NotPsd,
    #[error("list is empty")]
    EmptyList,
    #[error("value out of range: {0}")]
    InvalidRange(String),
}

impl AuditError {
    /// Errors that mean "this resample carries no information about α"
    /// rather than "the inputs are broken".
    pub fn is_degenerate(&self) -> bool {
        matches!(
            self,
            AuditError::DegeneratePopulations
                | AuditError::DegenerateEmbeddings(_)
                | AuditError::AllPointsIdentical
                | AuditError::NumericalUnderflow
        )
    }
}
