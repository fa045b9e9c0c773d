use std::path::Path;

use serde_json::json;
use woodvol_core::config::ConfigError;

/// Process exit codes.
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration; `path` is the offending key.
    Config(ConfigError),
    /// Bad input data; `record` names the file, entry or value at fault.
    Data { record: String, message: String },
    /// Failure writing outputs.
    Io { path: String, message: String },
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn data(record: impl Into<String>, message: impl ToString) -> Self {
        Self::Data {
            record: record.into(),
            message: message.to_string(),
        }
    }

    pub fn io(path: &Path, err: impl ToString) -> Self {
        Self::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => EXIT_CONFIG,
            Self::Data { .. } => EXIT_DATA,
            Self::Io { .. } => EXIT_IO,
        }
    }

    /// One JSON object on one line.
    pub fn to_line(&self) -> String {
        let v = match self {
            Self::Config(e) => json!({
                "error": "config",
                "path": e.path,
                "line": e.line,
                "message": e.message,
            }),
            Self::Data { record, message } => json!({
                "error": "data",
                "record": record,
                "message": message,
            }),
            Self::Io { path, message } => json!({
                "error": "io",
                "path": path,
                "message": message,
            }),
        };
        v.to_string()
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::Config(e)
    }
}
