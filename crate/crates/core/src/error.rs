use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not fit the operation.
    #[error("dimension error in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// Invalid configuration or usage. Maps to exit code 2 in the CLI.
    #[error("config error: {0}")]
    Config(String),

    /// A label outside its schema range.
    #[error("label error in record `{record}`: {message}")]
    Label { record: String, message: String },

    /// Malformed binary file.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// Data that is well-formed but unusable (missing modality, dim mismatch).
    #[error("data error: {0}")]
    Data(String),

    /// Bad arguments to a metric function.
    #[error("input error: {0}")]
    Input(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn label(record: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Label {
            record: record.into(),
            message: message.into(),
        }
    }

    /// Whether this error stems from usage or configuration rather than
    /// from runtime data.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
