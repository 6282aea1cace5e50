use std::fmt;
use std::process::ExitCode;

/// Process exit status per failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Other = 1,
    /// Invalid configuration, flags or incompatible artifacts.
    Config = 2,
    /// Unreadable, missing or malformed input files; unwritable outputs.
    Io = 3,
    /// A model backend or other external dependency failed.
    Dependency = 4,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn new(kind: ExitKind, error: impl Into<anyhow::Error>) -> Self {
        CliError { kind, error: error.into() }
    }

    pub fn config(msg: impl fmt::Display) -> Self {
        CliError { kind: ExitKind::Config, error: anyhow::anyhow!("{msg}") }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.kind as u8)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Causes already embedded in the message above them are not repeated.
        let mut shown = self.error.to_string();
        f.write_str(&shown)?;
        for cause in self.error.chain().skip(1) {
            let text = cause.to_string();
            if !shown.contains(&text) {
                write!(f, ": {text}")?;
                shown = text;
            }
        }
        Ok(())
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub trait Classify<T> {
    fn or_kind(self, kind: ExitKind) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn or_kind(self, kind: ExitKind) -> CliResult<T> {
        self.map_err(|e| CliError::new(kind, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_are_distinct_and_causes_not_repeated() {
        let codes = [ExitKind::Other, ExitKind::Config, ExitKind::Io, ExitKind::Dependency].map(|k| k as u8);
        assert_eq!(codes, [1, 2, 3, 4]);
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        let e = CliError::new(ExitKind::Io, anyhow::Error::new(io).context("cannot read x.toml: gone"));
        assert_eq!(e.to_string(), "cannot read x.toml: gone");
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        let e = CliError::new(ExitKind::Io, anyhow::Error::new(io).context("cannot read x.toml"));
        assert_eq!(e.to_string(), "cannot read x.toml: gone");
    }
}
