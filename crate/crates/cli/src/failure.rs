//! Exit-code classification: 1 for bad input, 2 for upstream model failures.

use std::fmt::Display;

pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

pub const VALIDATION: u8 = 1;
pub const UPSTREAM: u8 = 2;

impl Failure {
    pub fn validation(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: VALIDATION,
            error: error.into(),
        }
    }

    pub fn upstream(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: UPSTREAM,
            error: error.into(),
        }
    }
}

pub trait ResultExt<T> {
    /// Marks the error as a validation failure with context.
    fn invalid(self, context: impl Display) -> Result<T, Failure>;
}

impl<T, E> ResultExt<T> for Result<T, E>
where
    E: Into<anyhow::Error>,
{
    fn invalid(self, context: impl Display) -> Result<T, Failure> {
        self.map_err(|e| Failure::validation(e.into().context(context.to_string())))
    }
}
