use std::io;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] eigenflow_core::Error),

    #[error("{0}: {1}")]
    Io(String, #[source] io::Error),

    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),

    #[error("invalid spec file: {0}")]
    Spec(String),

    #[error("in `{0}`: {1}")]
    Field(String, #[source] eigenflow_core::Error),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("{failed} of {total} tasks failed")]
    Partial { failed: usize, total: usize },
}

impl Error {
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Core(e) | Error::Field(_, e) => e.kind(),
            Error::Io(..) => "Io",
            Error::Json(_) => "Json",
            Error::Csv(_) => "Csv",
            Error::Spec(_) => "InvalidSpec",
            Error::Argument(_) => "InvalidArgument",
            Error::Partial { .. } => "PartialFailure",
        }
    }
}
