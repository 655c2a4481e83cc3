use std::path::PathBuf;

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },

    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },

    #[error("plot {path}: {reason}")]
    Plot { path: PathBuf, reason: String },

    #[error("{context}: {source}")]
    Numerical { context: String, source: rydex::Error },
}

impl CliError {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        CliError::Config { field: field.into(), reason: reason.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numerical { source, .. } if !source.is_config() => 3,
            CliError::Plot { .. } => 3,
            _ => 2,
        }
    }
}

impl From<rydex::Error> for CliError {
    fn from(e: rydex::Error) -> Self {
        match e {
            rydex::Error::Param { field, reason } => CliError::Config { field: field.into(), reason },
            other => CliError::Numerical { context: "computation failed".into(), source: other },
        }
    }
}

/// Attaches command context to library errors.
pub trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> CliResult<T>;
}

impl<T> Context<T> for rydex::Result<T> {
    fn context(self, what: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|e| match e {
            rydex::Error::Param { field, reason } => CliError::Config { field: field.into(), reason },
            source => CliError::Numerical { context: what(), source },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_error_kind() {
        assert_eq!(CliError::config("x", "bad").exit_code(), 2);
        let e: CliError = rydex::Error::Domain("nan".into()).into();
        assert_eq!(e.exit_code(), 3);
        let e: CliError = rydex::Error::MemoryCap { needed: 2, cap: 1 }.into();
        assert_eq!(e.exit_code(), 2);
        let e = rydex::Result::<()>::Err(rydex::Error::RootNotBracketed { lo: 0.0, hi: 1.0 })
            .context(|| "optimize at |a|^2 1".into())
            .unwrap_err();
        assert_eq!(e.exit_code(), 3);
        assert!(e.to_string().starts_with("optimize at"));
    }
}
