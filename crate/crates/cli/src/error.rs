use obsgrass_harness::HarnessError;
use thiserror::Error;

/// Process exit statuses shared by every subcommand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    InputError = 1,
    AssertionFailure = 2,
    Conditioning = 3,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("benchmark assertion failed: {0}")]
    Assertion(String),
    #[error(transparent)]
    Core(#[from] obsgrass::Error),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn core_status(e: &obsgrass::Error) -> ExitStatus {
    use obsgrass::Error as E;
    match e {
        E::IllConditionedGram { .. }
        | E::RankDeficient { .. }
        | E::DegenerateTrace(_)
        | E::NoUniqueSolution { .. }
        | E::DivisionNearOne { .. }
        | E::SingularState { .. }
        | E::SingularTransform { .. }
        | E::NonFinite(_) => ExitStatus::Conditioning,
        _ => ExitStatus::InputError,
    }
}

impl CliError {
    pub fn status(&self) -> ExitStatus {
        match self {
            CliError::Assertion(_) => ExitStatus::AssertionFailure,
            CliError::Core(e) | CliError::Harness(HarnessError::Core(e)) => core_status(e),
            _ => ExitStatus::InputError,
        }
    }

    /// Follow-up advice printed under the error message, if any.
    pub fn hint(&self) -> Option<&'static str> {
        match self {
            CliError::Core(obsgrass::Error::IllConditionedGram { .. }) => {
                Some("hint: retry with --metric simplified, which needs no Gram factorization")
            }
            _ => None,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
