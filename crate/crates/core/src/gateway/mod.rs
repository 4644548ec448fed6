//! Service surface: principals and the role matrix, ticket threads,
//! notifications, event-sourced persistence and the [`Clerms`] facade.
//!
//! Data directory layout:
//!
//! ```text
//! events.jsonl      append-only event log
//! snapshots/        periodic state snapshots
//! logsindex/        log-index snapshots taken with each state snapshot
//! objects/          evidence blobs by digest
//! chains/           custody chains, one JSON-lines file per item
//! ```

pub mod auth;
pub mod config;
pub mod error;
pub mod events;
pub mod service;
pub mod state;
pub mod tickets;

pub use auth::{Access, Action, AuthzDecision, Principal, Resource, RoleMatrix};
pub use config::Config;
pub use error::{ErrorClass, ServiceError};
pub use events::{Event, EventLog, EventLogRecord};
pub use service::{
    AgentGateway, CaseView, Clerms, DecisionInput, InvoiceInput, LaborLineInput, OpenReport, ResourceLineInput, SharedClerms,
};
pub use state::SystemState;
pub use tickets::{LogSender, Notification, NotificationSender, Recipient, Ticket, TicketMessage, TicketStatus};
