use crate::cases::CaseError;
use crate::custody::CustodyError;
use crate::domain::ValidationErrors;
use crate::flows::logs::LogError;
use crate::flows::FlowError;
use crate::reporting::{AmountError, CostError, ReportError};
use crate::workflow::WorkflowError;

/// How an error maps onto an HTTP status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Unauthenticated,
    Forbidden,
    NotFound,
    Conflict,
    InsufficientStorage,
    Internal,
}

impl ErrorClass {
    pub fn http_status(self) -> u16 {
        match self {
            ErrorClass::Validation => 400,
            ErrorClass::Unauthenticated => 401,
            ErrorClass::Forbidden => 403,
            ErrorClass::NotFound => 404,
            ErrorClass::Conflict => 409,
            ErrorClass::InsufficientStorage => 507,
            ErrorClass::Internal => 500,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("ValidationErrors: {} problem(s)", .0.errors.len())]
    Validation(ValidationErrors),
    #[error("BadInput: {0}")]
    BadInput(String),
    #[error("Unauthenticated")]
    Unauthenticated,
    #[error("Forbidden: {0}")]
    Forbidden(String),
    #[error("NotFound: {0}")]
    NotFound(String),
    #[error("Conflict: {0}")]
    Conflict(String),
    #[error("UnknownRecipient({0})")]
    UnknownRecipient(String),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error(transparent)]
    Custody(#[from] CustodyError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Amount(#[from] AmountError),
    #[error("CorruptLog({seq}): {reason}")]
    CorruptLog { seq: u64, reason: String },
    #[error("StorageFailure: {0}")]
    Storage(String),
}

impl From<ValidationErrors> for ServiceError {
    fn from(e: ValidationErrors) -> Self {
        ServiceError::Validation(e)
    }
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        ServiceError::Storage(e.to_string())
    }
}

impl ServiceError {
    /// The module-level error name carried in API error bodies.
    pub fn name(&self) -> &'static str {
        match self {
            ServiceError::Validation(_) => "ValidationErrors",
            ServiceError::BadInput(_) => "BadInput",
            ServiceError::Unauthenticated => "Unauthenticated",
            ServiceError::Forbidden(_) => "Forbidden",
            ServiceError::NotFound(_) => "NotFound",
            ServiceError::Conflict(_) => "Conflict",
            ServiceError::UnknownRecipient(_) => "UnknownRecipient",
            ServiceError::Workflow(e) => e.name(),
            ServiceError::Case(e) => e.name(),
            ServiceError::Custody(e) => e.name(),
            ServiceError::Flow(e) => e.name(),
            ServiceError::Log(_) => "EmptyFilter",
            ServiceError::Report(e) => e.name(),
            ServiceError::Cost(e) => e.name(),
            ServiceError::Amount(_) => "InvalidAmount",
            ServiceError::CorruptLog { .. } => "CorruptLog",
            ServiceError::Storage(_) => "StorageFailure",
        }
    }

    pub fn class(&self) -> ErrorClass {
        use ErrorClass::*;
        match self {
            ServiceError::Validation(_)
            | ServiceError::BadInput(_)
            | ServiceError::UnknownRecipient(_)
            | ServiceError::Log(_)
            | ServiceError::Report(_)
            | ServiceError::Cost(_)
            | ServiceError::Amount(_) => Validation,
            ServiceError::Unauthenticated => Unauthenticated,
            ServiceError::Forbidden(_) => Forbidden,
            ServiceError::NotFound(_) => NotFound,
            ServiceError::Conflict(_) => Conflict,
            ServiceError::CorruptLog { .. } | ServiceError::Storage(_) => Internal,
            ServiceError::Workflow(e) => match e {
                WorkflowError::UnknownRequest(_) | WorkflowError::UnknownDocument(_) => NotFound,
                WorkflowError::MissingCrisisManager | WorkflowError::MissingDataClass | WorkflowError::NoDocuments => {
                    Validation
                }
                _ => Conflict,
            },
            ServiceError::Case(e) => match e {
                CaseError::NotFound(_) | CaseError::UnknownDocument(_) | CaseError::UnknownTask(_) => NotFound,
                CaseError::Forbidden(_) => Forbidden,
                CaseError::CorruptAudit(_) => Internal,
                _ => Conflict,
            },
            ServiceError::Custody(e) => match e {
                CustodyError::NotFound(_) => NotFound,
                CustodyError::InsufficientAuthorization => Forbidden,
                CustodyError::StorageFull { .. } => InsufficientStorage,
                CustodyError::Io(_) | CustodyError::Serialization(_) => Internal,
                _ => Conflict,
            },
            ServiceError::Flow(e) => match e {
                FlowError::UnknownAgent(_) | FlowError::UnknownFlow(_) => NotFound,
                FlowError::Forbidden(_) => Forbidden,
                FlowError::MalformedHello(_) | FlowError::InvalidFlow(_) | FlowError::PathEscape(_) => Validation,
                FlowError::AgentIoError(_) => Internal,
                _ => Conflict,
            },
        }
    }
}
