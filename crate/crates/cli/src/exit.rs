use thiserror::Error;
use tsmin_core::agent::AgentError;
use tsmin_core::embed::EmbedError;
use tsmin_core::evalkit::EvalError;
use tsmin_core::instance::InstanceError;
use tsmin_core::model::ModelError;

pub const USAGE: u8 = 2;
pub const INVALID_INPUT: u8 = 3;
pub const SOLVER_FAILURE: u8 = 4;
pub const INTERNAL: u8 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("solution names test {0:?}, which the instance does not have")]
    UnknownTest(String),
    #[error("no feasible trajectory found; wrote the greedy fallback")]
    Fallback,
}

/// Maps the first recognized error in the chain to an exit code.
pub fn code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::Usage(_) => USAGE,
                CliError::UnknownTest(_) => INVALID_INPUT,
                CliError::Fallback => SOLVER_FAILURE,
            };
        }
        if cause.is::<InstanceError>() || cause.is::<EmbedError>() || cause.is::<EvalError>() {
            return INVALID_INPUT;
        }
        if let Some(e) = cause.downcast_ref::<ModelError>() {
            return match e {
                ModelError::Infeasible(_) => INVALID_INPUT,
                ModelError::LimitExceeded { .. } | ModelError::BudgetExhausted { .. } => SOLVER_FAILURE,
                ModelError::SizeMismatch { .. } | ModelError::IndexOutOfRange { .. } => INTERNAL,
            };
        }
        if let Some(e) = cause.downcast_ref::<AgentError>() {
            return match e {
                AgentError::InvalidConfig(_) => USAGE,
                AgentError::Model(ModelError::Infeasible(_)) => INVALID_INPUT,
                _ => SOLVER_FAILURE,
            };
        }
    }
    INTERNAL
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn codes_follow_the_chain() {
        let e = anyhow::Error::new(ModelError::LimitExceeded { tests: 25, limit: 22 }).context("oracle");
        assert_eq!(code_for(&e), SOLVER_FAILURE);
        let e: anyhow::Error = Err::<(), _>(CliError::UnknownTest("t9".into())).context("evaluate").unwrap_err();
        assert_eq!(code_for(&e), INVALID_INPUT);
        assert_eq!(code_for(&anyhow::anyhow!("disk full")), INTERNAL);
        assert_eq!(code_for(&anyhow::Error::new(ModelError::Infeasible(2))), INVALID_INPUT);
    }
}
