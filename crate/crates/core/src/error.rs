use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid reconstruction: {0}")]
    Invalid(String),

    #[error("point projects behind camera (depth {depth:e} <= {min_depth:e})")]
    BehindCamera { depth: f64, min_depth: f64 },

    #[error("observation {observation}: {source}")]
    Observation {
        observation: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("observation {observation}: covariance is not symmetric positive definite")]
    NonSpdCovariance { observation: usize },

    #[error(
        "camera {camera}: rotation nullspace system is rank deficient \
         (reciprocal condition {rcond:e})"
    )]
    RankDeficientCamera { camera: usize, rcond: f64 },

    #[error("point {point}: information block is singular, point is under-constrained")]
    SingularPoint { point: usize },

    #[error(
        "factorization of the reduced camera system failed (relative pivot {relative_pivot:e}); \
         the gauge is degenerate or the scene is disconnected"
    )]
    Factorization { relative_pivot: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("problem has {params} parameters, above the dense limit of {limit}")]
    SizeGuard { params: usize, limit: usize },

    #[error("singular value decomposition did not converge")]
    SvdFailure,

    #[error("cannot satisfy visibility constraints: {0}")]
    InfeasibleVisibility(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sub-reconstruction around camera {center} is empty")]
    EmptySubscene { center: usize },

    #[error("camera {camera} is not covered by any sub-reconstruction")]
    UncoveredCamera { camera: usize },

    #[error("sub-reconstruction {subset}: {source}")]
    Subscene {
        subset: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub(crate) fn at_observation(self, observation: usize) -> Self {
        Error::Observation {
            observation,
            source: Box::new(self),
        }
    }

    /// Name of the pipeline stage that failed, if the error was annotated with one.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            Error::Subscene { source, .. } => source.stage(),
            _ => None,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
