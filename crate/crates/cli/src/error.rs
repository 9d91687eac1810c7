use lobtrend_core::Error as DataError;
use lobtrend_nn::NnError;
use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<CliError>,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Divergence(_) => 4,
            CliError::Internal(_) => 5,
            CliError::Stage { source, .. } => source.exit_code(),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ CliError::Stage { .. } => e,
            e => CliError::Stage { stage, source: Box::new(e) },
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::InvalidParameter(_) | DataError::Unsupported(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Config(_) => CliError::Config(e.to_string()),
            NnError::Divergence { .. } => CliError::Divergence(e.to_string()),
            NnError::Data(d) => d.into(),
            NnError::Autograd(_) => CliError::Internal(e.to_string()),
            NnError::Io(_) | NnError::Csv(_) | NnError::Json(_) => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
