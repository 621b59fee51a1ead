use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension { context: &'static str, expected: usize, found: usize },

    #[error("degenerate vector: {0}")]
    DegenerateVector(&'static str),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("degenerate projection: pre-normalization norm {norm:e} is below 1e-12")]
    DegenerateProjection { norm: f64 },

    #[error("degenerate groups: pooled standard deviation is zero")]
    DegenerateGroups,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("AUROC undefined: {0}")]
    UndefinedAuroc(&'static str),

    #[error("training error: {0}")]
    Training(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("I/O error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error at {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("format error{}: {message}", sample_suffix(.sample))]
    Format { sample: Option<String>, message: String },

    #[error("unsupported format_version {found} (supported: {supported})")]
    Version { found: u32, supported: u32 },

    #[error("data error{}: {message}", sample_suffix(.sample))]
    Data { sample: Option<String>, message: String },

    #[error("artifact mismatch: {0}")]
    ArtifactMismatch(String),
}

fn sample_suffix(sample: &Option<String>) -> String {
    match sample {
        Some(id) => format!(" in sample `{id}`"),
        None => String::new(),
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }

    pub fn format(sample: Option<&str>, message: impl Into<String>) -> Self {
        Error::Format { sample: sample.map(str::to_owned), message: message.into() }
    }

    pub fn data(sample: Option<&str>, message: impl Into<String>) -> Self {
        Error::Data { sample: sample.map(str::to_owned), message: message.into() }
    }

    pub fn config(field: &str, message: impl Into<String>) -> Self {
        Error::Config { field: field.to_owned(), message: message.into() }
    }
}
