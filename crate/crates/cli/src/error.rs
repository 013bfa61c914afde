//! Exit-code classification.

use std::fmt;

pub type CliError = anyhow::Error;

/// Bad flags, bad config, or a request the tool cannot interpret.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> CliError {
    UsageError(msg.into()).into()
}

pub const EXIT_DATA: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// 2 for usage errors, 1 for everything else.
pub fn exit_code(e: &CliError) -> i32 {
    if e.downcast_ref::<UsageError>().is_some() {
        EXIT_USAGE
    } else {
        EXIT_DATA
    }
}
