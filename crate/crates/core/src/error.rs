use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Whether a failure stems from bad input/configuration or from estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Estimation,
}

#[derive(Debug, Error)]
pub enum Error {
    // tabular
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed config: {0}")]
    Config(String),
    #[error("column `{0}` not found")]
    MissingColumn(String),
    #[error("type violation in column `{column}` row {row}: `{value}` is not a valid {expected}")]
    TypeViolation {
        column: String,
        row: usize,
        value: String,
        expected: &'static str,
    },
    #[error("duplicate column `{0}`")]
    DuplicateId(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("no eligible rows for `{0}`")]
    EmptyEligibleSet(String),
    #[error("masked cell in column `{column}` row {row}")]
    MaskedCell { column: String, row: usize },
    #[error("value out of range: {0}")]
    OutOfRange(String),

    // logit
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("design matrix is rank deficient (rank {rank} < {cols} columns)")]
    RankDeficient { rank: usize, cols: usize },
    #[error("perfect separation detected (coefficient {index} diverging)")]
    PerfectSeparation { index: usize },
    #[error("IRLS did not converge after {0} iterations")]
    NotConverged(usize),
    #[error("need at least 2 clusters, found {0}")]
    TooFewClusters(usize),
    #[error("focus column {0} is not binary")]
    FocusNotBinary(usize),

    // patterns
    #[error("country `{0}` has no reporting values")]
    EmptyCountry(String),
    #[error("no complete cases")]
    EmptyCompleteCases,
    #[error("pattern assignment covers {patterns} rows, dataset has {rows}")]
    PatternMismatch { patterns: usize, rows: usize },

    // impute
    #[error("no donors available in country `{0}`")]
    NoDonorsInCountry(String),
    #[error("column `{0}` has no observed values")]
    AllMissingColumn(String),
    #[error("column `{0}` has missing values but no imputation model")]
    NoImputationModel(String),
    #[error("need at least 2 imputations, got {0}")]
    TooFewImputations(usize),

    // averaging
    #[error("model space too large: H = {0} exceeds 20")]
    ModelSpaceTooLarge(usize),
    #[error("non-finite information criterion at position {0}")]
    NonFiniteIC(usize),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("weights are not a valid simplex point")]
    InvalidWeights,

    // simulate
    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    // report
    #[error("bin width must be positive and finite, got {0}")]
    InvalidBinWidth(f64),
}

impl Error {
    /// Module-qualified diagnostic code, e.g. `logit::PerfectSeparation`.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "tabular::Io",
            Error::Csv(_) => "tabular::Csv",
            Error::Config(_) => "config::Malformed",
            Error::MissingColumn(_) => "tabular::MissingColumn",
            Error::TypeViolation { .. } => "tabular::TypeViolation",
            Error::DuplicateId(_) => "tabular::DuplicateId",
            Error::InvalidSchema(_) => "tabular::InvalidSchema",
            Error::EmptyEligibleSet(_) => "tabular::EmptyEligibleSet",
            Error::MaskedCell { .. } => "design::MaskedCell",
            Error::OutOfRange(_) => "tabular::OutOfRange",
            Error::DimensionMismatch(_) => "logit::DimensionMismatch",
            Error::RankDeficient { .. } => "logit::RankDeficient",
            Error::PerfectSeparation { .. } => "logit::PerfectSeparation",
            Error::NotConverged(_) => "logit::NotConverged",
            Error::TooFewClusters(_) => "logit::TooFewClusters",
            Error::FocusNotBinary(_) => "logit::FocusNotBinary",
            Error::EmptyCountry(_) => "patterns::EmptyCountry",
            Error::EmptyCompleteCases => "patterns::EmptyCompleteCases",
            Error::PatternMismatch { .. } => "patterns::PatternMismatch",
            Error::NoDonorsInCountry(_) => "impute::NoDonorsInCountry",
            Error::AllMissingColumn(_) => "impute::AllMissingColumn",
            Error::NoImputationModel(_) => "impute::NoImputationModel",
            Error::TooFewImputations(_) => "impute::TooFewImputations",
            Error::ModelSpaceTooLarge(_) => "averaging::ModelSpaceTooLarge",
            Error::NonFiniteIC(_) => "averaging::NonFiniteIC",
            Error::LengthMismatch(_) => "averaging::LengthMismatch",
            Error::InvalidWeights => "averaging::InvalidWeights",
            Error::DegenerateDesign(_) => "simulate::DegenerateDesign",
            Error::InvalidBinWidth(_) => "report::InvalidBinWidth",
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::RankDeficient { .. }
            | Error::PerfectSeparation { .. }
            | Error::NotConverged(_)
            | Error::TooFewClusters(_)
            | Error::EmptyCompleteCases
            | Error::NoDonorsInCountry(_)
            | Error::AllMissingColumn(_)
            | Error::NonFiniteIC(_)
            | Error::DegenerateDesign(_) => ErrorClass::Estimation,
            _ => ErrorClass::Validation,
        }
    }

    /// Copy of the error; io and csv sources are not clonable and become
    /// `Config` messages.
    pub fn duplicate(&self) -> Error {
        use Error::*;
        match self {
            Io { .. } | Csv(_) => Config(self.to_string()),
            Config(s) => Config(s.clone()),
            MissingColumn(s) => MissingColumn(s.clone()),
            TypeViolation { column, row, value, expected } => TypeViolation {
                column: column.clone(),
                row: *row,
                value: value.clone(),
                expected,
            },
            DuplicateId(s) => DuplicateId(s.clone()),
            InvalidSchema(s) => InvalidSchema(s.clone()),
            EmptyEligibleSet(s) => EmptyEligibleSet(s.clone()),
            MaskedCell { column, row } => MaskedCell { column: column.clone(), row: *row },
            OutOfRange(s) => OutOfRange(s.clone()),
            DimensionMismatch(s) => DimensionMismatch(s.clone()),
            RankDeficient { rank, cols } => RankDeficient { rank: *rank, cols: *cols },
            PerfectSeparation { index } => PerfectSeparation { index: *index },
            NotConverged(n) => NotConverged(*n),
            TooFewClusters(n) => TooFewClusters(*n),
            FocusNotBinary(n) => FocusNotBinary(*n),
            EmptyCountry(s) => EmptyCountry(s.clone()),
            EmptyCompleteCases => EmptyCompleteCases,
            PatternMismatch { patterns, rows } => PatternMismatch { patterns: *patterns, rows: *rows },
            NoDonorsInCountry(s) => NoDonorsInCountry(s.clone()),
            AllMissingColumn(s) => AllMissingColumn(s.clone()),
            NoImputationModel(s) => NoImputationModel(s.clone()),
            TooFewImputations(n) => TooFewImputations(*n),
            ModelSpaceTooLarge(n) => ModelSpaceTooLarge(*n),
            NonFiniteIC(n) => NonFiniteIC(*n),
            LengthMismatch(s) => LengthMismatch(s.clone()),
            InvalidWeights => InvalidWeights,
            DegenerateDesign(s) => DegenerateDesign(s.clone()),
            InvalidBinWidth(w) => InvalidBinWidth(*w),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
