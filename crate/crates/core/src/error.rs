use std::fmt;

use thiserror::Error;

pub type Result<T, E = KowError> = std::result::Result<T, E>;

/// Pipeline stage an error was raised in, used to label propagated failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Load,
    Standardize,
    Tune,
    Gram,
    Assemble,
    Solve,
    Propensity,
    Fit,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Load => "load",
            Stage::Standardize => "standardize",
            Stage::Tune => "tune",
            Stage::Gram => "gram",
            Stage::Assemble => "assemble",
            Stage::Solve => "solve",
            Stage::Propensity => "propensity",
            Stage::Fit => "fit",
        };
        f.write_str(s)
    }
}

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum KowError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("non-binary treatment for unit `{unit}` at time {time}: `{value}`")]
    NonBinaryTreatment { unit: String, time: usize, value: String },

    #[error("non-monotone censoring for unit `{unit}` at time {time}")]
    NonMonotoneCensoring { unit: String, time: usize },

    #[error("duplicate row for unit `{unit}` at time {time}")]
    DuplicateRow { unit: String, time: usize },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("period {period} out of range 1..={periods}")]
    PeriodOutOfRange { period: usize, periods: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid kernel specification: {0}")]
    InvalidKernel(String),

    #[error("gram matrix for period {period} is not positive semidefinite (min eigenvalue below {bound:e})")]
    NotPositiveSemidefinite { period: usize, bound: f64 },

    #[error("balance Hessian is not positive semidefinite (pivot {pivot:e})")]
    IndefiniteHessian { pivot: f64 },

    #[error("quadratic form {value:e} is negative beyond rounding tolerance")]
    NegativeQuadraticForm { value: f64 },

    #[error("infeasible equality constraints: {0}")]
    Infeasible(String),

    #[error("quadratic objective is not bounded below along coordinate {0}")]
    Unbounded(usize),

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("probability denominator {value:e} below 1e-12 for unit `{unit}` at period {period}")]
    SmallDenominator { unit: String, period: usize, value: f64 },

    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    #[error("negative weight {value} at observation {index}")]
    NegativeWeight { index: usize, value: f64 },

    #[error("tuning failed: {0}")]
    Tuning(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{stage}: {source}")]
    Staged {
        stage: Stage,
        #[source]
        source: Box<KowError>,
    },
}

impl KowError {
    pub fn at(self, stage: Stage) -> KowError {
        match self {
            already @ KowError::Staged { .. } => already,
            other => KowError::Staged {
                stage,
                source: Box::new(other),
            },
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            KowError::Config(_) | KowError::InvalidKernel(_) => ErrorClass::Config,
            KowError::Io(_)
            | KowError::Csv(_)
            | KowError::MissingColumn(_)
            | KowError::NonBinaryTreatment { .. }
            | KowError::NonMonotoneCensoring { .. }
            | KowError::DuplicateRow { .. }
            | KowError::InvalidData(_)
            | KowError::PeriodOutOfRange { .. }
            | KowError::DimensionMismatch(_)
            | KowError::NegativeWeight { .. } => ErrorClass::Data,
            KowError::Staged { source, .. } => source.class(),
            _ => ErrorClass::Numerical,
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            KowError::Staged { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: Stage) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: Stage) -> Result<T> {
        self.map_err(|e| e.at(stage))
    }
}
