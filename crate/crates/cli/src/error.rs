use std::fmt;
use std::path::Path;

use condreg::Error;

/// A failure with its process exit code.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

pub const EXIT_PARSE: i32 = 3;
pub const EXIT_SINGULAR: i32 = 4;
pub const EXIT_DEGENERATE: i32 = 5;
pub const EXIT_NUMERICAL: i32 = 6;
pub const EXIT_INVALID: i32 = 7;
pub const EXIT_IO: i32 = 8;

/// Exit code of a library error.
///
/// | code | class |
/// |------|-------|
/// | 3 | unreadable or invalid input data |
/// | 4 | singular design or information matrix |
/// | 5 | degenerate (perfect) fit |
/// | 6 | numerical failure: quadrature, sampling, scores, draw budget |
/// | 7 | invalid argument or configuration |
/// | 8 | file system error |
pub fn exit_code(e: &Error) -> i32 {
    use Error::*;
    match e {
        InvalidData(_) | Parse(_) => EXIT_PARSE,
        SingularDesign | SingularInformation => EXIT_SINGULAR,
        DegenerateFit => EXIT_DEGENERATE,
        UnsupportedPoint(_)
        | IntegrationFailure(_)
        | DimensionTooHigh { .. }
        | ChainDiagnosticsFailure(_)
        | RejectionBudgetExceeded(_)
        | ScoreSingularity(_)
        | InsufficientDraws { .. } => EXIT_NUMERICAL,
        BadBandwidth(_)
        | IndexOutOfRange { .. }
        | OutOfDomain(_)
        | InvalidConfrontation(_)
        | InvalidArgument(_) => EXIT_INVALID,
    }
}

impl CliError {
    pub fn invalid(message: impl Into<String>) -> Self {
        Self { code: EXIT_INVALID, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { code: EXIT_PARSE, message: message.into() }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self { code: EXIT_IO, message: format!("{}: {e}", path.display()) }
    }

    /// Help and version requests map to 0, usage errors to the
    /// invalid-argument code.
    pub fn from_clap(e: &clap::Error) -> Self {
        use clap::error::ErrorKind;
        let code = match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 0,
            _ => EXIT_INVALID,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self { code: exit_code(&e), message: e.to_string() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (exit {})", self.message, self.code)
    }
}

impl std::error::Error for CliError {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_are_distinct_per_class() {
        let samples = [
            Error::Parse("x".into()),
            Error::SingularDesign,
            Error::DegenerateFit,
            Error::IntegrationFailure("x".into()),
            Error::InvalidArgument("x".into()),
        ];
        let codes: Vec<i32> = samples.iter().map(exit_code).collect();
        let mut uniq = codes.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), codes.len());
        assert!(!codes.contains(&EXIT_IO));
    }
}
