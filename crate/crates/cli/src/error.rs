use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("cannot read {path}: {source}")]
    ReadConfig { path: PathBuf, source: std::io::Error },
    #[error("numerical failure: {0}")]
    Numerical(#[from] mbgp_core::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("run failed: {0}")]
    RunFailed(String),
    #[error("{0} check(s) failed")]
    ChecksFailed(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ChecksFailed(_) => 1,
            CliError::Config(_) | CliError::ReadConfig { .. } => 2,
            CliError::Numerical(_) | CliError::RunFailed(_) | CliError::Io(_) | CliError::Csv(_) => 3,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
