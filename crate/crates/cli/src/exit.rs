//! Failure classes and their process exit codes.

use std::fmt;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_IO: i32 = 2;

/// Bad input data, arguments or configuration.
#[derive(Debug)]
pub struct ValidationFailure(pub String);

/// A filesystem problem: unreadable input, unwritable output, held lock.
#[derive(Debug)]
pub struct IoFailure(pub String);

impl fmt::Display for ValidationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for IoFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ValidationFailure {}
impl std::error::Error for IoFailure {}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<IoFailure>() || cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
        if let Some(e) = cause.downcast_ref::<eventprompt::Error>() {
            return if e.is_io() { EXIT_IO } else { EXIT_VALIDATION };
        }
        if cause.is::<ValidationFailure>() {
            return EXIT_VALIDATION;
        }
    }
    EXIT_VALIDATION
}
