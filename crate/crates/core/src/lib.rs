//! Law-enforcement request management.
//!
//! A request moves from online pre-submission through evaluation and an
//! optional forensic investigation to a formal response. The crate is split
//! along those lines:
//!
//! - [`domain`]: request types, submission validation, priority.
//! - [`workflow`]: the request lifecycle state machine.
//! - [`custody`]: content-addressed evidence with a hash-chained custody log.
//! - [`flows`]: agent registration, remote collection flows, wire protocol, log index.
//! - [`cases`]: the per-investigation dossier.
//! - [`reporting`]: transparency reports and cost-reimbursement invoices.
//! - [`gateway`]: principals, tickets, notifications, event-sourced persistence
//!   and the [`gateway::Clerms`] service that ties the rest together.

pub mod canonical;
pub mod cases;
pub mod custody;
pub mod domain;
pub mod flows;
pub mod gateway;
pub mod reporting;
pub mod ids;
pub mod time;
pub mod workflow;
