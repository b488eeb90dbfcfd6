//! Structured failures and their exit codes.

use serde::Serialize;

use enskog::{FlowError, KineticError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_GUARD: i32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliError {
    /// Machine-readable code.
    pub code: &'static str,
    pub message: String,
    #[serde(skip)]
    pub exit: i32,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        CliError {
            code: "validation_error",
            message: message.into(),
            exit: EXIT_VALIDATION,
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        CliError {
            code: "io_error",
            message: message.into(),
            exit: EXIT_RUNTIME,
        }
    }

    /// The single JSON line written to stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

impl From<KineticError> for CliError {
    fn from(e: KineticError) -> Self {
        let message = e.to_string();
        let (code, exit) = match &e {
            KineticError::NormGuard { .. } => ("norm_guard", EXIT_GUARD),
            KineticError::Flow(FlowError::PathologicalEvent { .. }) => {
                ("pathological_event", EXIT_RUNTIME)
            }
            KineticError::NoPlateau { .. } => ("no_plateau", EXIT_RUNTIME),
            KineticError::Flow(FlowError::ForbiddenInitialConfiguration(..)) => {
                ("forbidden_configuration", EXIT_VALIDATION)
            }
            KineticError::Flow(FlowError::NonFiniteInput(_)) => {
                ("non_finite_input", EXIT_VALIDATION)
            }
            KineticError::OrderCap { .. } => ("order_cap", EXIT_VALIDATION),
            KineticError::DimensionMismatch { .. } => ("dimension_mismatch", EXIT_VALIDATION),
            KineticError::InvalidArgument(_) => ("invalid_argument", EXIT_VALIDATION),
            KineticError::NotNormalizable => ("not_normalizable", EXIT_VALIDATION),
        };
        CliError {
            code,
            message,
            exit,
        }
    }
}

impl From<FlowError> for CliError {
    fn from(e: FlowError) -> Self {
        KineticError::from(e).into()
    }
}
