use std::fmt;

/// A one-line diagnostic plus the process exit code of its failure class.
#[derive(Debug)]
pub struct Failure {
    pub class: &'static str,
    pub message: String,
    pub code: i32,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            class: "config",
            message: message.into(),
            code: 2,
        }
    }

    pub fn missing(message: impl Into<String>) -> Self {
        Self {
            class: "missing file",
            message: message.into(),
            code: 3,
        }
    }

    pub fn too_large(message: impl Into<String>) -> Self {
        Self {
            class: "too large",
            message: message.into(),
            code: 8,
        }
    }
}

impl From<sicluster::Error> for Failure {
    fn from(e: sicluster::Error) -> Self {
        use sicluster::Error as E;
        let (class, code, message) = match e {
            E::Io { path, source } => {
                let class = if source.kind() == std::io::ErrorKind::NotFound {
                    "missing file"
                } else {
                    "io"
                };
                (class, 3, format!("{}: {source}", path.display()))
            }
            e @ E::Format { .. } => ("format", 4, e.to_string()),
            E::Dimension(m) => ("dimension mismatch", 5, m),
            E::InvalidArgument(m) => ("invalid argument", 2, m),
            E::Infeasible(m) => ("infeasible pattern", 6, m),
            e @ (E::Divergence { .. } | E::NoConvergence(_)) => ("divergence", 7, e.to_string()),
        };
        Self {
            class,
            message,
            code,
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self {
            class: "io",
            message: e.to_string(),
            code: 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error: {}: {}", self.class, self.message)
    }
}
