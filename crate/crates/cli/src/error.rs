use thiserror::Error;

use tfis::autodiff::AutodiffError;
use tfis::datasets::DataError;
use tfis::evaluation::EvalError;
use tfis::mixture::MixtureError;
use tfis::samplers::SamplerError;
use tfis::schedule::ScheduleError;
use tfis::score_models::ScoreError;
use tfis::weights::WeightSpecError;

/// Process exit status.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitKind {
    Usage = 2,
    Data = 3,
    Numerical = 4,
    Verification = 5,
}

#[derive(Debug, Error)]
#[error("{msg}")]
pub struct CliError {
    pub kind: ExitKind,
    pub msg: String,
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Usage,
            msg: msg.into(),
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Data,
            msg: msg.into(),
        }
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Numerical,
            msg: msg.into(),
        }
    }

    pub fn verification(msg: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Verification,
            msg: msg.into(),
        }
    }

    pub fn code(&self) -> i32 {
        self.kind as i32
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::data(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<WeightSpecError> for CliError {
    fn from(e: WeightSpecError) -> Self {
        Self::usage(e.to_string())
    }
}

impl From<ScoreError> for CliError {
    fn from(e: ScoreError) -> Self {
        let msg = e.to_string();
        match e {
            ScoreError::Diverged { .. } | ScoreError::Autodiff(_) => Self::numerical(msg),
            ScoreError::BadHyper { .. }
            | ScoreError::Schedule(_)
            | ScoreError::StepZero
            | ScoreError::Dimension { .. } => Self::usage(msg),
            ScoreError::Version { .. }
            | ScoreError::Schema { .. }
            | ScoreError::Json(_)
            | ScoreError::Io(_) => Self::data(msg),
        }
    }
}

impl From<SamplerError> for CliError {
    fn from(e: SamplerError) -> Self {
        let msg = e.to_string();
        match e {
            SamplerError::NonFinite { .. } | SamplerError::LowAcceptance { .. } => {
                Self::numerical(msg)
            }
            SamplerError::Data(_) => Self::data(msg),
            _ => Self::usage(msg),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        let msg = e.to_string();
        match e {
            EvalError::NoOverlap { .. }
            | EvalError::Underflow { .. }
            | EvalError::NotConverged { .. } => Self::numerical(msg),
            EvalError::Sampler(s) => s.into(),
            EvalError::Empty => Self::data(msg),
            _ => Self::usage(msg),
        }
    }
}

impl From<ScheduleError> for CliError {
    fn from(e: ScheduleError) -> Self {
        Self::usage(e.to_string())
    }
}

impl From<MixtureError> for CliError {
    fn from(e: MixtureError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<AutodiffError> for CliError {
    fn from(e: AutodiffError) -> Self {
        Self::numerical(e.to_string())
    }
}
