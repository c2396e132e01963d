use std::fmt;

use surfclust::{Error, ErrorKind};

/// An error on its way to becoming a process exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

pub const CONFIG: u8 = 2;
pub const DATA: u8 = 3;
pub const NUMERIC: u8 = 4;

impl Failure {
    pub fn config(msg: impl Into<String>) -> Self {
        Failure {
            code: CONFIG,
            message: msg.into(),
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Failure {
            code: DATA,
            message: msg.into(),
        }
    }

    /// Tags a library error with the pipeline stage that raised it.
    pub fn core(stage: &str, e: Error) -> Self {
        let code = match e.kind() {
            ErrorKind::Config => CONFIG,
            ErrorKind::Data => DATA,
            ErrorKind::Numeric => NUMERIC,
        };
        Failure {
            code,
            message: format!("{stage}: {e}"),
        }
    }

    pub fn io(stage: &str, path: &std::path::Path, e: std::io::Error) -> Self {
        Failure::data(format!("{stage}: {}: {e}", path.display()))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub trait Stage<T> {
    fn stage(self, stage: &str) -> Result<T, Failure>;
}

impl<T> Stage<T> for surfclust::Result<T> {
    fn stage(self, stage: &str) -> Result<T, Failure> {
        self.map_err(|e| Failure::core(stage, e))
    }
}
