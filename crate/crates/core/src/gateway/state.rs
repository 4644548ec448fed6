//! The full system state and the pure event-application function.
//!
//! Every arm of [`SystemState::apply`] checks all of its preconditions
//! before mutating anything, so a rejected event leaves the state as it was.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::auth::Principal;
use super::error::ServiceError;
use super::events::{CorruptLog, Event, EventLogRecord};
use super::tickets::{Notification, Recipient, Ticket, TicketStatus};
use crate::canonical::canonical_digest;
use crate::cases::{check_can_open, Case, CaseError, DocumentKind};
use crate::custody::{DestructionRecord, EvidenceItem, TransportManifest};
use crate::domain::{classify_priority, Role};
use crate::flows::logs::LogIndex;
use crate::flows::{FileAction, FlowBoard, FlowError, FlowKind};
use crate::ids::{CaseId, EvidenceId, InvoiceId, ManifestId, NotificationId, PrincipalId, RequestId, TicketId};
use crate::reporting::Invoice;
use crate::time::Timestamp;
use crate::workflow::{RequestRecord, WorkflowError};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub principals: BTreeMap<PrincipalId, Principal>,
    pub evidence: BTreeMap<EvidenceId, EvidenceItem>,
    pub requests: BTreeMap<RequestId, RequestRecord>,
    pub tickets: BTreeMap<TicketId, Ticket>,
    pub ticket_by_request: BTreeMap<RequestId, TicketId>,
    pub notifications: BTreeMap<NotificationId, Notification>,
    pub cases: BTreeMap<CaseId, Case>,
    pub flows: FlowBoard,
    pub manifests: BTreeMap<ManifestId, TransportManifest>,
    pub destructions: BTreeMap<EvidenceId, DestructionRecord>,
    pub invoices: BTreeMap<InvoiceId, Invoice>,
    /// Persisted separately under `logsindex/`.
    #[serde(skip)]
    pub logs: LogIndex,
}

fn unknown_request(id: RequestId) -> ServiceError {
    WorkflowError::UnknownRequest(id).into()
}

impl SystemState {
    /// Digest over the canonical JSON of everything, log index included.
    pub fn digest(&self) -> String {
        canonical_digest(&json!({"state": self, "logs": self.logs})).expect("state serializes")
    }

    pub fn principal_by_token_hash(&self, hash: &str) -> Option<&Principal> {
        self.principals.values().find(|p| p.credential_ref == hash)
    }

    pub fn ticket_for(&self, request: &RequestId) -> Option<&Ticket> {
        self.ticket_by_request.get(request).and_then(|t| self.tickets.get(t))
    }

    /// Rebuild a state by applying `records` to `base`.
    pub fn replay(base: SystemState, records: &[EventLogRecord]) -> Result<SystemState, CorruptLog> {
        let mut state = base;
        for r in records {
            let event = r.event().map_err(|e| CorruptLog { seq: r.seq, reason: e.to_string() })?;
            state.apply(&event).map_err(|e| CorruptLog { seq: r.seq, reason: e.to_string() })?;
        }
        Ok(state)
    }

    /// Run `op` on a copy of one request record; commit the copy, sync its
    /// ticket and post an optional system message only if `op` succeeds.
    fn with_request<F>(&mut self, id: RequestId, at: Timestamp, op: F) -> Result<(), ServiceError>
    where
        F: FnOnce(&mut RequestRecord) -> Result<Option<String>, ServiceError>,
    {
        let mut rec = self.requests.get(&id).cloned().ok_or_else(|| unknown_request(id))?;
        let message = op(&mut rec)?;
        let state = rec.state();
        self.requests.insert(id, rec);
        if let Some(ticket) = self.ticket_by_request.get(&id).and_then(|t| self.tickets.get_mut(t)) {
            ticket.status = TicketStatus::for_state(state);
            if let Some(m) = message {
                ticket.post_system(m, at);
            }
        }
        Ok(())
    }

    fn with_case<F>(&mut self, id: CaseId, op: F) -> Result<(), ServiceError>
    where
        F: FnOnce(&mut Case) -> Result<(), CaseError>,
    {
        let mut case = self.cases.get(&id).cloned().ok_or(CaseError::NotFound(id))?;
        op(&mut case)?;
        self.cases.insert(id, case);
        Ok(())
    }

    fn require_evidence(&self, id: &EvidenceId) -> Result<(), ServiceError> {
        if self.evidence.contains_key(id) {
            Ok(())
        } else {
            Err(ServiceError::NotFound(format!("evidence {id}")))
        }
    }

    fn new_notification(&self, n: Notification) -> Result<Notification, ServiceError> {
        if self.notifications.contains_key(&n.id) {
            return Err(ServiceError::Conflict(format!("notification {} exists", n.id)));
        }
        if let Recipient::Principal(p) = n.recipient {
            if !self.principals.contains_key(&p) {
                return Err(ServiceError::UnknownRecipient(n.recipient.to_string()));
            }
        }
        Ok(n)
    }

    pub fn apply(&mut self, event: &Event) -> Result<(), ServiceError> {
        match event.clone() {
            Event::PrincipalAdded { principal } => {
                if self.principals.contains_key(&principal.principal_id) {
                    return Err(ServiceError::Conflict(format!("principal {} exists", principal.principal_id)));
                }
                if self.principal_by_token_hash(&principal.credential_ref).is_some() {
                    return Err(ServiceError::Conflict("token already in use".into()));
                }
                self.principals.insert(principal.principal_id, principal);
            }
            Event::EvidenceRegistered { item } => {
                self.evidence.entry(item.evidence_id.clone()).or_insert(item);
            }
            Event::RequestSubmitted { request, owner, ticket_id, notification_id, at } => {
                let id = request.request_id;
                if self.requests.contains_key(&id) {
                    return Err(WorkflowError::DuplicateRequest(id).into());
                }
                if self.tickets.contains_key(&ticket_id) {
                    return Err(ServiceError::Conflict(format!("ticket {ticket_id} exists")));
                }
                for r in request.instruments.iter().flat_map(|i| &i.document_refs) {
                    if !self.evidence.contains_key(r) {
                        return Err(WorkflowError::UnknownDocument(r.clone()).into());
                    }
                }
                let priority = classify_priority(&request);
                let rec = RequestRecord::submit(request, owner, at)?;
                let mut ticket = Ticket::new(ticket_id, id, priority, rec.state());
                ticket.post_system("Request received; awaiting supporting documents.", at);
                let note = self.new_notification(Notification::new(
                    notification_id,
                    Recipient::Role(Role::CrisisManager),
                    &format!("New request {id} ({priority:?})"),
                    &format!("Request {id} was submitted and awaits documents."),
                    at,
                ))?;
                self.notifications.insert(note.id, note);
                self.tickets.insert(ticket_id, ticket);
                self.ticket_by_request.insert(id, ticket_id);
                self.requests.insert(id, rec);
            }
            Event::DocumentsReceived { request_id, documents, at } => {
                if let Some(d) = documents.iter().find(|d| !self.evidence.contains_key(*d)) {
                    return Err(WorkflowError::UnknownDocument(d.clone()).into());
                }
                self.with_request(request_id, at, |r| {
                    r.receive_documents(&documents, at)?;
                    Ok(Some(format!("{} document(s) received; evaluation pending.", documents.len())))
                })?;
            }
            Event::EvaluationBegun { request_id, at } => {
                self.with_request(request_id, at, |r| {
                    r.begin_evaluation(at)?;
                    Ok(Some("Evaluation started.".into()))
                })?;
            }
            Event::EvaluationReopened { request_id, at } => {
                self.with_request(request_id, at, |r| {
                    r.reopen_evaluation(at)?;
                    Ok(Some("Evaluation reopened.".into()))
                })?;
            }
            Event::ProvisionalApplied { request_id, measure, actor, at, config } => {
                self.with_request(request_id, at, |r| {
                    r.apply_provisional_measures(&measure, actor, at, &config)?;
                    Ok(Some("Provisional measures applied.".into()))
                })?;
            }
            Event::PreservationExtended { request_id, config, at } => {
                self.with_request(request_id, at, |r| {
                    r.extend_preservation(&config)?;
                    Ok(None)
                })?;
            }
            Event::DecisionRecorded { request_id, decision } => {
                let at = decision.decided_at;
                let kind = serde_json::to_value(decision.decision).ok().and_then(|v| v.as_str().map(str::to_owned));
                let public = format!("Decision: {}. {}", kind.unwrap_or_default(), decision.public_summary);
                self.with_request(request_id, at, |r| {
                    r.record_decision(decision)?;
                    Ok(Some(public))
                })?;
            }
            Event::Escalated { request_id, case_id, override_guard, opener, notification_id, at } => {
                if self.cases.contains_key(&case_id) {
                    return Err(ServiceError::Conflict(format!("case {case_id} exists")));
                }
                let rec = self.requests.get(&request_id).ok_or_else(|| unknown_request(request_id))?;
                if let Some(existing) = rec.case_id {
                    check_can_open(request_id, rec.state(), Some(existing))?;
                }
                let note = self.new_notification(Notification::new(
                    notification_id,
                    Recipient::Role(Role::ForensicExpert),
                    &format!("Case {case_id} opened"),
                    &format!("Request {request_id} was escalated for investigation."),
                    at,
                ))?;
                self.with_request(request_id, at, |r| {
                    r.escalate(case_id, override_guard, at)?;
                    check_can_open(request_id, r.state(), None)?;
                    Ok(Some("Request escalated for investigation.".into()))
                })?;
                self.cases.insert(case_id, Case::open(case_id, request_id, opener, at));
                self.notifications.insert(note.id, note);
            }
            Event::ActionApplied { request_id, summary, at } => {
                self.with_request(request_id, at, |r| {
                    r.apply_action(&summary, at)?;
                    Ok(Some("Requested action applied.".into()))
                })?;
            }
            Event::ResponseIssued { request_id, body, suppress_target_notification, at } => {
                self.with_request(request_id, at, |r| {
                    let kind = r.issue_response(&body, suppress_target_notification, at)?.kind;
                    let kind = serde_json::to_value(kind).ok().and_then(|v| v.as_str().map(str::to_owned));
                    Ok(Some(format!("Formal response issued ({}).", kind.unwrap_or_default())))
                })?;
            }
            Event::Acknowledged { request_id, at } => {
                self.with_request(request_id, at, |r| {
                    r.acknowledge(at)?;
                    Ok(Some("Response acknowledged; request closed.".into()))
                })?;
            }
            Event::AcknowledgmentExpired { request_id, at, config } => {
                self.with_request(request_id, at, |r| {
                    r.expire_acknowledgment(at, &config)?;
                    Ok(Some("Acknowledgment window elapsed; request closed.".into()))
                })?;
            }
            Event::TicketMessagePosted { ticket_id, author, body, at } => {
                let ticket =
                    self.tickets.get_mut(&ticket_id).ok_or_else(|| ServiceError::NotFound(format!("ticket {ticket_id}")))?;
                ticket.post(author, &body, at);
            }
            Event::NotificationCreated { notification } => {
                let n = self.new_notification(notification)?;
                self.notifications.insert(n.id, n);
            }
            Event::NotificationDelivered { id, at } => {
                let n = self.notifications.get_mut(&id).ok_or_else(|| ServiceError::NotFound(format!("notification {id}")))?;
                if n.delivered {
                    return Err(ServiceError::Conflict(format!("notification {id} already delivered")));
                }
                n.delivered = true;
                n.delivered_at = Some(at.max(n.created_at));
            }
            Event::ParticipantAdded { case_id, participant, actor, at } => {
                self.with_case(case_id, |c| c.add_participant(participant, actor, at))?;
            }
            Event::EvidenceLinked { case_id, evidence_id, actor, at } => {
                self.require_evidence(&evidence_id)?;
                self.with_case(case_id, |c| c.link_evidence(evidence_id, actor, at).map(|_| ()))?;
            }
            Event::CaseDocumentAttached { case_id, document } => {
                if !self.evidence.contains_key(&document.doc_id) {
                    return Err(CaseError::UnknownDocument(document.doc_id).into());
                }
                let at = document.uploaded_at;
                let is_report = document.kind == DocumentKind::ForensicReport;
                self.with_case(case_id, |c| c.add_report(document))?;
                if is_report {
                    let request_id = self.cases[&case_id].request_id;
                    if let Some(t) = self.ticket_by_request.get(&request_id).and_then(|t| self.tickets.get_mut(t)) {
                        t.post_system("Forensic findings are available; a response is being prepared.", at);
                    }
                }
            }
            Event::TaskAssigned { case_id, task_id, description, assignee_role, due, actor, at } => {
                self.with_case(case_id, |c| c.assign_task(task_id, &description, assignee_role, due, actor, at).map(|_| ()))?;
            }
            Event::TaskUpdated { case_id, task_id, status, actor, at } => {
                self.with_case(case_id, |c| c.update_task(task_id, status, actor, at))?;
            }
            Event::CaseClosed { case_id, verified_chains, actor, at } => {
                self.with_case(case_id, |c| c.close(verified_chains, actor, at))?;
            }
            Event::AgentRegistered { agent } => {
                self.flows.register(agent)?;
            }
            Event::FlowLaunched { request } => {
                let case = self.cases.get(&request.case_id).ok_or(CaseError::NotFound(request.case_id))?;
                if !case.is_open() {
                    return Err(FlowError::CaseClosed(request.case_id).into());
                }
                self.flows.launch(request)?;
            }
            Event::FlowsAssigned { agent_id, at } => {
                self.flows.poll(&agent_id, at)?;
            }
            Event::FlowCompleted { agent_id, result, at } => {
                let record = self.flows.flow(&result.flow_id).ok_or(FlowError::UnknownFlow(result.flow_id))?;
                if matches!(record.request.kind, FlowKind::FileFinder { action: FileAction::Fetch, .. }) {
                    for item in result.files() {
                        if let Some(id) = &item.evidence_id {
                            if !self.evidence.contains_key(id) {
                                return Err(FlowError::FetchIntegrity(format!("{} was never stored", item.path)).into());
                            }
                        }
                    }
                }
                self.flows.complete(&agent_id, result, at)?;
            }
            Event::LogsIngested { records } => {
                for r in records {
                    self.logs.insert(r);
                }
            }
            Event::EvidenceExported { manifest } => {
                if self.manifests.contains_key(&manifest.manifest_id) {
                    return Err(ServiceError::Conflict(format!("manifest {} exists", manifest.manifest_id)));
                }
                self.manifests.insert(manifest.manifest_id, manifest);
            }
            Event::EvidenceDestroyed { record } => {
                self.require_evidence(&record.evidence_id)?;
                if self.destructions.contains_key(&record.evidence_id) {
                    return Err(ServiceError::Conflict(format!("{} already destroyed", record.evidence_id)));
                }
                self.destructions.insert(record.evidence_id.clone(), record);
            }
            Event::InvoiceIssued { invoice } => {
                if self.invoices.contains_key(&invoice.invoice_id) {
                    return Err(ServiceError::Conflict(format!("invoice {} exists", invoice.invoice_id)));
                }
                self.invoices.insert(invoice.invoice_id, invoice);
            }
        }
        Ok(())
    }
}
