use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Format(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] trn_ood_core::Error),
    #[error("{0}")]
    Runtime(String),
    #[error("config hash mismatch: {0} (rerun with --force to ignore)")]
    HashMismatch(String),
    #[error("self-check failed: {0}")]
    Selfcheck(String),
}

impl HarnessError {
    /// Process exit status: 1 for configuration problems, 2 for runtime
    /// failures, 3 for failed self-checks.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::HashMismatch(_) => 1,
            HarnessError::Selfcheck(_) => 3,
            _ => 2,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| HarnessError::Io { path, source }
    }

    /// Prefixes the message with `ctx`, keeping the variant.
    pub fn context(self, ctx: &str) -> Self {
        match self {
            HarnessError::Config(m) => HarnessError::Config(format!("{ctx}: {m}")),
            HarnessError::Format(m) => HarnessError::Format(format!("{ctx}: {m}")),
            HarnessError::Runtime(m) => HarnessError::Runtime(format!("{ctx}: {m}")),
            HarnessError::Core(e) => HarnessError::Runtime(format!("{ctx}: {e}")),
            other => other,
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
