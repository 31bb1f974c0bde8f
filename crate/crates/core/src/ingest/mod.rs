//! Case file ingestion: MATPOWER matrix subset and the native JSON schema.

mod json;
mod matpower;

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::network::{NetworkCase, NetworkError};

pub use json::{case_from_json, case_to_json};
pub use matpower::{
    parse_matpower_case, to_network_case, BranchRow, BusRow, GenRow, RawCaseTables,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("missing `mpc.{0}` assignment")]
    Missing(&'static str),
    #[error("bus {bus} is isolated (type 4); isolated buses are not supported")]
    IsolatedBus { bus: usize },
    #[error("generator on line {line} references unknown bus {bus}")]
    UnknownGenBus { line: usize, bus: usize },
    #[error("bus numbering must be consecutive from 1; bus {bus} on line {line} breaks it")]
    BusNumbering { line: usize, bus: usize },
    #[error("invalid case JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported case file extension for {0} (expected .m or .json)")]
    Extension(PathBuf),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

impl IngestError {
    pub(crate) fn syntax(line: usize, message: impl Into<String>) -> Self {
        IngestError::Syntax {
            line,
            message: message.into(),
        }
    }

    /// Line number attached to the error, if any.
    pub fn line(&self) -> Option<usize> {
        match self {
            IngestError::Syntax { line, .. }
            | IngestError::UnknownGenBus { line, .. }
            | IngestError::BusNumbering { line, .. } => Some(*line),
            IngestError::Json(e) => Some(e.line()),
            _ => None,
        }
    }
}

/// Load a case from disk, dispatching on the extension: `.m` is MATPOWER
/// text, `.json` the native schema.
pub fn load_case(path: &Path) -> Result<NetworkCase, IngestError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    let parse: fn(&str) -> Result<NetworkCase, IngestError> = match ext.as_deref() {
        Some("m") => |text| to_network_case(&parse_matpower_case(text)?),
        Some("json") => case_from_json,
        _ => return Err(IngestError::Extension(path.to_path_buf())),
    };
    let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse(&text)
}
