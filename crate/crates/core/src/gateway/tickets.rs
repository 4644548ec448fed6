//! Ticket threads and notifications.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::{Priority, Role};
use crate::ids::{NotificationId, PrincipalId, RequestId, TicketId};
use crate::time::Timestamp;
use crate::workflow::StateValue;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TicketStatus {
    Open,
    PendingRequester,
    Resolved,
}

impl TicketStatus {
    /// Ticket status follows the request: waiting on the requester only while
    /// documents are outstanding or a response awaits acknowledgment.
    pub fn for_state(state: StateValue) -> Self {
        match state {
            StateValue::PreSubmitted | StateValue::AwaitingDocuments | StateValue::ResponseIssued => {
                TicketStatus::PendingRequester
            }
            StateValue::Closed => TicketStatus::Resolved,
            _ => TicketStatus::Open,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TicketMessage {
    /// `None` for system messages.
    pub author: Option<PrincipalId>,
    pub body: String,
    pub timestamp: Timestamp,
    pub system: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ticket {
    pub ticket_id: TicketId,
    pub request_id: RequestId,
    pub priority: Priority,
    pub status: TicketStatus,
    pub messages: Vec<TicketMessage>,
}

impl Ticket {
    pub fn new(ticket_id: TicketId, request_id: RequestId, priority: Priority, state: StateValue) -> Self {
        Self { ticket_id, request_id, priority, status: TicketStatus::for_state(state), messages: Vec::new() }
    }

    pub fn post(&mut self, author: PrincipalId, body: &str, at: Timestamp) {
        self.messages.push(TicketMessage { author: Some(author), body: body.to_owned(), timestamp: at, system: false });
    }

    pub fn post_system(&mut self, body: impl Into<String>, at: Timestamp) {
        self.messages.push(TicketMessage { author: None, body: body.into(), timestamp: at, system: true });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum Recipient {
    Role(Role),
    Principal(PrincipalId),
}

impl fmt::Display for Recipient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Recipient::Role(r) => write!(f, "role:{}", r.as_str()),
            Recipient::Principal(p) => write!(f, "principal:{p}"),
        }
    }
}

/// `role:<name>` or `principal:<uuid>`; a bare role name is also accepted.
impl FromStr for Recipient {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let unknown = || format!("UnknownRecipient({s})");
        match s.split_once(':') {
            Some(("role", r)) => Role::parse(r).map(Recipient::Role).ok_or_else(unknown),
            Some(("principal", p)) => p.parse().map(Recipient::Principal).map_err(|_| unknown()),
            None => Role::parse(s).map(Recipient::Role).ok_or_else(unknown),
            Some(_) => Err(unknown()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Notification {
    pub id: NotificationId,
    pub recipient: Recipient,
    pub subject: String,
    pub body: String,
    pub created_at: Timestamp,
    pub delivered: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delivered_at: Option<Timestamp>,
}

impl Notification {
    pub fn new(id: NotificationId, recipient: Recipient, subject: &str, body: &str, at: Timestamp) -> Self {
        Self {
            id,
            recipient,
            subject: subject.to_owned(),
            body: body.to_owned(),
            created_at: at,
            delivered: false,
            delivered_at: None,
        }
    }
}

/// Delivery channel for notifications. Failures leave the notification
/// undelivered for a later attempt.
pub trait NotificationSender: Send + Sync {
    fn send(&self, notification: &Notification) -> Result<(), String>;
}

/// Writes each notification to the log and reports success.
#[derive(Debug, Default, Clone, Copy)]
pub struct LogSender;

impl NotificationSender for LogSender {
    fn send(&self, n: &Notification) -> Result<(), String> {
        log::info!("notification {} to {}: {}", n.id, n.recipient, n.subject);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recipient_parsing() {
        assert_eq!("role:crisis_manager".parse(), Ok(Recipient::Role(Role::CrisisManager)));
        assert_eq!("admin".parse(), Ok(Recipient::Role(Role::Admin)));
        let p = PrincipalId::new();
        assert_eq!(format!("principal:{p}").parse(), Ok(Recipient::Principal(p)));
        assert!("role:janitor".parse::<Recipient>().unwrap_err().starts_with("UnknownRecipient"));
        assert!("principal:nope".parse::<Recipient>().is_err());
        assert!("team:x".parse::<Recipient>().is_err());
        let r = Recipient::Role(Role::LegalAdvisor);
        assert_eq!(r.to_string().parse(), Ok(r));
    }

    #[test]
    fn status_tracks_requester_wait() {
        for s in StateValue::ALL {
            let expected = matches!(s, StateValue::PreSubmitted | StateValue::AwaitingDocuments | StateValue::ResponseIssued);
            assert_eq!(TicketStatus::for_state(s) == TicketStatus::PendingRequester, expected, "{s}");
        }
        assert_eq!(TicketStatus::for_state(StateValue::Closed), TicketStatus::Resolved);
    }
}
