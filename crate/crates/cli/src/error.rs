use std::path::PathBuf;

use rlbd_core::benders::BendersError;
use rlbd_core::model::ModelError;
use rlbd_core::policy::PolicyError;
use rlbd_core::train::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("time limit reached without an incumbent")]
    NoIncumbent,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Solver(_) => 3,
            CliError::NoIncumbent => 4,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

impl From<BendersError> for CliError {
    fn from(e: BendersError) -> Self {
        match e {
            BendersError::NoIncumbent => CliError::NoIncumbent,
            other => CliError::Solver(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(msg) => CliError::Config(msg),
            TrainError::Benders(b) => b.into(),
        }
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        CliError::Config(format!("checkpoint: {e}"))
    }
}

/// Problems reading or validating an instance are input errors.
impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Lp(_) | ModelError::RecourseInfeasible(_) | ModelError::RecourseUnbounded(_) => {
                CliError::Solver(e.to_string())
            }
            other => CliError::Config(format!("instance: {other}")),
        }
    }
}
