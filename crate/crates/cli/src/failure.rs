use std::fmt;

use ror::model::ModelError;

/// An error tagged with the process exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, bad config values, inconsistent options: exit 1.
    Usage(anyhow::Error),
    /// Missing or malformed input files, checkpoint problems: exit 2.
    Data(anyhow::Error),
    /// Non-finite loss or gradient during training: exit 3.
    Diverged(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Diverged(_) => 3,
        }
    }

    pub fn usage(msg: impl fmt::Display) -> Self {
        Failure::Usage(anyhow::anyhow!("{msg}"))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, e) = match self {
            Failure::Usage(e) => ("usage error", e),
            Failure::Data(e) => ("data error", e),
            Failure::Diverged(e) => ("training diverged", e),
        };
        // some causes already quote their source in their own message
        let mut text = e.to_string();
        for cause in e.chain().skip(1) {
            let c = cause.to_string();
            if !text.contains(&c) {
                text.push_str(": ");
                text.push_str(&c);
            }
        }
        write!(f, "{kind}: {text}")
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Divergence { .. } => Failure::Diverged(e.into()),
            ModelError::Config(_) => Failure::Usage(e.into()),
            other => Failure::Data(other.into()),
        }
    }
}

pub type Result<T> = std::result::Result<T, Failure>;

/// Attaches context and classifies a fallible input operation as a data error.
pub trait DataContext<T> {
    fn data(self, what: impl FnOnce() -> String) -> Result<T>;
}

impl<T, E: Into<anyhow::Error>> DataContext<T> for std::result::Result<T, E> {
    fn data(self, what: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| Failure::Data(e.into().context(what())))
    }
}
