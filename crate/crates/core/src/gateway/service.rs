//! The service facade. Every state-changing operation authorizes the
//! caller, builds an [`Event`], applies it to the live state and appends
//! it to the log. Evidence blobs and custody chains live in the
//! [`EvidenceStore`] and are written before the event that references them.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::auth::{hash_token, Action, AuthzDecision, Principal, Resource, RoleMatrix};
use super::config::Config;
use super::error::ServiceError;
use super::events::{CorruptLog, Event, EventLog, SnapshotDir};
use super::state::SystemState;
use super::tickets::{Notification, NotificationSender, Recipient, Ticket};
use crate::cases::{Assignment, Case, CaseDocument, CaseError, DocumentKind, Participant, TaskStatus};
use crate::custody::{
    ChainStatus, CustodyAction, CustodyEvent, DestructionRecord, EvidenceFormat, EvidenceItem, EvidenceSource,
    EvidenceStore, TransportManifest,
};
use crate::domain::{classify_priority, validate_submission, Role};
use crate::flows::logs::{LogFilter, LogIndex, LogRecord, MalformedRecord};
use crate::flows::protocol::{RegisterPayload, ResultChunk};
use crate::flows::transport::{AgentHandler, ChunkAssembler, RemoteError};
use crate::flows::{AgentInfo, FileAction, FlowError, FlowItems, FlowKind, FlowRecord, FlowRequest, FlowResult};
use crate::ids::{AgentId, CaseId, EvidenceId, FlowId, NotificationId, PrincipalId, RequestId, TaskId, TicketId};
use crate::reporting::{
    compute_invoice, generate_transparency_report, BillingUnit, Cents, CostError, Invoice, LaborLine, Micros, Period,
    Quantity, ResourceLine, TransparencyReport,
};
use crate::time::{Clock, Timestamp};
use crate::workflow::{
    DataClass, Decision, EvaluationDecision, FormalResponse, PreservationOrder, ProvisionalOutcome, RequestRecord,
    Signer, StateValue, WorkflowConfig,
};

/// What a staff member submits to decide a request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionInput {
    pub decision: Decision,
    pub rationale: String,
    #[serde(default)]
    pub public_summary: String,
    #[serde(default = "no_data_class")]
    pub response_data_class: DataClass,
    /// Further principals signing alongside the caller.
    #[serde(default)]
    pub co_signers: Vec<PrincipalId>,
}

fn no_data_class() -> DataClass {
    DataClass::None
}

/// A resource line as submitted. The cost is computed; a supplied cost
/// must match it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceLineInput {
    pub name: String,
    pub hourly_rate: Micros,
    pub hours: Quantity,
    #[serde(default = "one")]
    pub quantity: u32,
    #[serde(default)]
    pub unit: BillingUnit,
    #[serde(default)]
    pub line_cost: Option<Cents>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaborLineInput {
    pub role: String,
    pub hours: Quantity,
    pub rate: Micros,
    #[serde(default)]
    pub cost: Option<Cents>,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvoiceInput {
    #[serde(default)]
    pub case_id: Option<CaseId>,
    #[serde(default)]
    pub resource_lines: Vec<ResourceLineInput>,
    #[serde(default)]
    pub labor_lines: Vec<LaborLineInput>,
    #[serde(default)]
    pub support_fees: Cents,
}

impl InvoiceInput {
    fn lines(self) -> Result<(Vec<ResourceLine>, Vec<LaborLine>), CostError> {
        let mut resources = Vec::with_capacity(self.resource_lines.len());
        for l in self.resource_lines {
            let line = ResourceLine::new(&l.name, l.hourly_rate, l.hours, l.quantity, l.unit)?;
            if l.line_cost.is_some_and(|c| c != line.line_cost) {
                return Err(CostError::LineMismatch(l.name));
            }
            resources.push(line);
        }
        let mut labor = Vec::with_capacity(self.labor_lines.len());
        for l in self.labor_lines {
            let line = LaborLine::new(&l.role, l.hours, l.rate)?;
            if l.cost.is_some_and(|c| c != line.cost) {
                return Err(CostError::LineMismatch(l.role));
            }
            labor.push(line);
        }
        Ok((resources, labor))
    }
}

/// A case with the current status of each linked item's custody chain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseView {
    pub case: Case,
    pub chains: BTreeMap<EvidenceId, ChainStatus>,
}

/// What [`Clerms::open`] found on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenReport {
    pub events: u64,
    pub snapshot_seq: Option<u64>,
    pub torn_tail: Option<CorruptLog>,
}

pub struct Clerms {
    state: SystemState,
    log: EventLog,
    store: EvidenceStore,
    snapshots: Option<SnapshotDir>,
    matrix: RoleMatrix,
    config: Config,
    clock: Arc<dyn Clock>,
    sender: Arc<dyn NotificationSender>,
    assembler: ChunkAssembler,
    fetched: HashMap<(FlowId, String), EvidenceId>,
    since_snapshot: u64,
    /// Set when an event was applied but could not be persisted.
    poisoned: bool,
    /// Held for the service's lifetime so one process owns the data directory.
    _lock: std::fs::File,
}

impl std::fmt::Debug for Clerms {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Clerms").field("log", &self.log).field("data_dir", &self.config.data_dir).finish()
    }
}

pub type SharedClerms = Arc<Mutex<Clerms>>;

fn forbidden(action: Action) -> ServiceError {
    ServiceError::Forbidden(format!("not allowed to {}", action.as_str()))
}

fn lock_data_dir(dir: &std::path::Path) -> Result<std::fs::File, ServiceError> {
    let file = std::fs::OpenOptions::new().create(true).truncate(false).write(true).open(dir.join("lock"))?;
    match file.try_lock() {
        Ok(()) => Ok(file),
        Err(std::fs::TryLockError::WouldBlock) => {
            Err(ServiceError::Conflict(format!("data directory {} is in use by another process", dir.display())))
        }
        Err(std::fs::TryLockError::Error(e)) => Err(e.into()),
    }
}

impl Clerms {
    /// Open the data directory: load the newest usable snapshot, replay the
    /// log tail and provision the principals listed in the config.
    pub fn open(
        config: Config,
        clock: Arc<dyn Clock>,
        sender: Arc<dyn NotificationSender>,
    ) -> Result<(Self, OpenReport), ServiceError> {
        let dir = config.data_dir.clone();
        std::fs::create_dir_all(&dir)?;
        let lock = lock_data_dir(&dir)?;
        let store = EvidenceStore::with_capacity(&dir, config.storage.capacity_bytes)?;
        let (log, contents) = EventLog::open(&dir.join("events.jsonl"), config.storage.fsync)
            .map_err(|e| ServiceError::Storage(e.to_string()))?;
        let snapshots = SnapshotDir::new(&dir);
        let records = &contents.records;

        let mut candidates = snapshots.list()?;
        candidates.retain(|s| *s <= records.len() as u64);
        candidates.sort_unstable_by(|a, b| b.cmp(a));
        let mut restored = None;
        for seq in candidates {
            let Some((state, logs)) = snapshots.read(seq) else { continue };
            let (Ok(mut base), Ok(index)) =
                (serde_json::from_value::<SystemState>(state), serde_json::from_value::<LogIndex>(logs))
            else {
                continue;
            };
            base.logs = index;
            match SystemState::replay(base, &records[seq as usize..]) {
                Ok(s) => {
                    restored = Some((s, seq));
                    break;
                }
                Err(e) => log::warn!("snapshot {seq} unusable: {e}"),
            }
        }
        let (state, snapshot_seq) = match restored {
            Some((s, seq)) => (s, Some(seq)),
            None => {
                let s = SystemState::replay(SystemState::default(), records)
                    .map_err(|e| ServiceError::CorruptLog { seq: e.seq, reason: e.reason })?;
                (s, None)
            }
        };
        if let Some(t) = &contents.torn_tail {
            log::warn!("dropped torn final event: {t}");
        }
        let matrix = config.role_matrix().map_err(|e| ServiceError::BadInput(e.to_string()))?;
        let mut svc = Self {
            state,
            log,
            store,
            snapshots: Some(snapshots),
            matrix,
            config,
            clock,
            sender,
            assembler: ChunkAssembler::default(),
            fetched: HashMap::new(),
            since_snapshot: 0,
            poisoned: false,
            _lock: lock,
        };
        svc.provision_principals()?;
        let report = OpenReport { events: records.len() as u64, snapshot_seq, torn_tail: contents.torn_tail };
        Ok((svc, report))
    }

    fn provision_principals(&mut self) -> Result<(), ServiceError> {
        for p in self.config.principals.clone() {
            if self.state.principal_by_token_hash(&p.token_sha256).is_some() {
                continue;
            }
            let principal = Principal {
                principal_id: p.principal_id.unwrap_or_default(),
                role: p.role,
                credential_ref: p.token_sha256,
                display_name: p.name,
            };
            self.commit(Event::PrincipalAdded { principal })?;
        }
        Ok(())
    }

    pub fn shared(self) -> SharedClerms {
        Arc::new(Mutex::new(self))
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn digest(&self) -> String {
        self.state.digest()
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn matrix(&self) -> &RoleMatrix {
        &self.matrix
    }

    pub fn store(&self) -> &EvidenceStore {
        &self.store
    }

    pub fn events_appended(&self) -> u64 {
        self.log.next_seq()
    }

    fn workflow_config(&self) -> WorkflowConfig {
        self.config.workflow_config()
    }

    fn now(&self) -> Timestamp {
        self.clock.now()
    }

    fn commit(&mut self, event: Event) -> Result<(), ServiceError> {
        if self.poisoned {
            return Err(ServiceError::Storage("event log is unavailable; restart to recover".into()));
        }
        self.state.apply(&event)?;
        let at = self.now();
        if let Err(e) = self.log.append(&event, at) {
            self.poisoned = true;
            return Err(ServiceError::Storage(e.to_string()));
        }
        self.since_snapshot += 1;
        let every = self.config.storage.snapshot_every;
        if every > 0 && self.since_snapshot >= every {
            if let Err(e) = self.snapshot() {
                log::warn!("snapshot failed: {e}");
            }
        }
        Ok(())
    }

    /// Write a snapshot of the current state.
    pub fn snapshot(&mut self) -> std::io::Result<u64> {
        let seq = self.log.next_seq();
        if let Some(dir) = &self.snapshots {
            let state = serde_json::to_value(&self.state)?;
            let logs = serde_json::to_value(&self.state.logs)?;
            dir.write(seq, &state, &logs)?;
        }
        self.since_snapshot = 0;
        Ok(seq)
    }

    fn authorize(&self, who: &Principal, action: Action, resource: Resource) -> Result<(), ServiceError> {
        match self.matrix.authorize(who, action, resource) {
            AuthzDecision::Allow => Ok(()),
            AuthzDecision::Deny => Err(forbidden(action)),
        }
    }

    fn record(&self, id: RequestId) -> Result<&RequestRecord, ServiceError> {
        self.state.requests.get(&id).ok_or_else(|| crate::workflow::WorkflowError::UnknownRequest(id).into())
    }

    /// Authorize an action on a request, honoring ownership.
    fn authorize_request(&self, who: &Principal, action: Action, id: RequestId) -> Result<&RequestRecord, ServiceError> {
        let rec = self.record(id)?;
        self.authorize(who, action, Resource::OwnedBy(rec.owner))?;
        Ok(rec)
    }

    fn case(&self, id: CaseId) -> Result<&Case, ServiceError> {
        self.state.cases.get(&id).ok_or_else(|| CaseError::NotFound(id).into())
    }

    fn open_case(&self, id: CaseId) -> Result<&Case, ServiceError> {
        let case = self.case(id)?;
        if !case.is_open() {
            return Err(CaseError::CaseClosed(id).into());
        }
        Ok(case)
    }

    // ── principals ─────────────────────────────────────────────────────

    pub fn authenticate(&self, token: &str) -> Result<Principal, ServiceError> {
        self.state.principal_by_token_hash(&hash_token(token)).cloned().ok_or(ServiceError::Unauthenticated)
    }

    /// Provision a principal with a bearer token (local administration).
    pub fn add_principal(&mut self, role: Role, token: &str, name: &str) -> Result<Principal, ServiceError> {
        if token.len() < 16 {
            return Err(ServiceError::BadInput("tokens must be at least 16 characters".into()));
        }
        let principal = Principal {
            principal_id: PrincipalId::new(),
            role,
            credential_ref: hash_token(token),
            display_name: name.to_owned(),
        };
        self.commit(Event::PrincipalAdded { principal: principal.clone() })?;
        Ok(principal)
    }

    pub fn add_principal_as(&mut self, who: &Principal, role: Role, token: &str, name: &str) -> Result<Principal, ServiceError> {
        self.authorize(who, Action::ManagePrincipals, Resource::Global)?;
        self.add_principal(role, token, name)
    }

    pub fn principal(&self, id: &PrincipalId) -> Option<&Principal> {
        self.state.principals.get(id)
    }

    // ── requests ───────────────────────────────────────────────────────

    pub fn submit_request(&mut self, who: &Principal, raw: &Value) -> Result<(RequestRecord, Ticket), ServiceError> {
        self.authorize(who, Action::SubmitRequest, Resource::Global)?;
        let at = self.now();
        let request = validate_submission(raw, at)?;
        let id = request.request_id;
        self.commit(Event::RequestSubmitted {
            request,
            owner: who.principal_id,
            ticket_id: TicketId::new(),
            notification_id: NotificationId::new(),
            at,
        })?;
        let rec = self.state.requests[&id].clone();
        let ticket = self.state.ticket_for(&id).cloned().expect("submission opens a ticket");
        Ok((rec, ticket))
    }

    /// The request as the caller may see it. Requesters get the decision
    /// kind and public summary only; staff get the full record.
    pub fn request_view(&self, who: &Principal, id: RequestId) -> Result<Value, ServiceError> {
        let rec = self.authorize_request(who, Action::ReadRequest, id)?;
        let ticket_id = self.state.ticket_by_request.get(&id);
        if who.role.is_staff() {
            let mut v = serde_json::to_value(rec).expect("record serializes");
            let obj = v.as_object_mut().expect("record is an object");
            obj.insert("ticket_id".into(), json!(ticket_id));
            obj.insert("priority".into(), json!(classify_priority(&rec.request)));
            obj.insert("allowed_transitions".into(), json!(rec.allowed()));
            return Ok(v);
        }
        Ok(json!({
            "request": rec.request,
            "ticket_id": ticket_id,
            "priority": classify_priority(&rec.request),
            "history": rec.history,
            "documents": rec.documents,
            "decisions": rec.decisions.iter().map(|d| json!({
                "decision": d.decision,
                "public_summary": d.public_summary,
                "decided_at": d.decided_at,
            })).collect::<Vec<_>>(),
            "preservation": rec.preservation,
            "response": rec.response,
        }))
    }

    /// Requests the caller may read, most urgent first.
    pub fn list_requests(&self, who: &Principal) -> Result<Vec<Value>, ServiceError> {
        let mut visible: Vec<&RequestRecord> = self
            .state
            .requests
            .values()
            .filter(|r| self.matrix.authorize(who, Action::ListRequests, Resource::OwnedBy(r.owner)) == AuthzDecision::Allow)
            .collect();
        if visible.is_empty() && self.matrix.authorize(who, Action::ListRequests, Resource::OwnedBy(who.principal_id)) == AuthzDecision::Deny {
            return Err(forbidden(Action::ListRequests));
        }
        visible.sort_by_key(|r| (classify_priority(&r.request), r.request.submitted_at));
        Ok(visible
            .into_iter()
            .map(|r| {
                json!({
                    "request_id": r.id(),
                    "state": r.state(),
                    "priority": classify_priority(&r.request),
                    "objective": r.request.objective,
                    "regime": r.request.regime,
                    "submitted_at": r.request.submitted_at,
                    "ticket_id": self.state.ticket_by_request.get(&r.id()),
                })
            })
            .collect())
    }

    pub fn upload_document(&mut self, who: &Principal, content: &[u8], format: EvidenceFormat) -> Result<EvidenceItem, ServiceError> {
        self.authorize(who, Action::UploadDocument, Resource::Global)?;
        let at = self.now();
        let item = self.store.store(
            content,
            format,
            EvidenceSource::Upload { uploader: who.principal_id },
            &who.principal_id.to_string(),
            at,
        )?;
        if !self.state.evidence.contains_key(&item.evidence_id) {
            self.commit(Event::EvidenceRegistered { item: item.clone() })?;
        }
        Ok(item)
    }

    pub fn receive_documents(&mut self, who: &Principal, id: RequestId, documents: Vec<EvidenceId>) -> Result<StateValue, ServiceError> {
        self.authorize_request(who, Action::ReceiveDocuments, id)?;
        let at = self.now();
        self.commit(Event::DocumentsReceived { request_id: id, documents, at })?;
        Ok(self.state.requests[&id].state())
    }

    pub fn begin_evaluation(&mut self, who: &Principal, id: RequestId) -> Result<StateValue, ServiceError> {
        self.authorize_request(who, Action::BeginEvaluation, id)?;
        let at = self.now();
        self.commit(Event::EvaluationBegun { request_id: id, at })?;
        Ok(self.state.requests[&id].state())
    }

    pub fn reopen_evaluation(&mut self, who: &Principal, id: RequestId) -> Result<StateValue, ServiceError> {
        self.authorize_request(who, Action::BeginEvaluation, id)?;
        let at = self.now();
        self.commit(Event::EvaluationReopened { request_id: id, at })?;
        Ok(self.state.requests[&id].state())
    }

    pub fn apply_provisional_measures(&mut self, who: &Principal, id: RequestId, measure: &str) -> Result<ProvisionalOutcome, ServiceError> {
        self.authorize_request(who, Action::ProvisionalMeasures, id)?;
        let had_order = self.record(id)?.preservation.is_some();
        let at = self.now();
        let config = self.workflow_config();
        self.commit(Event::ProvisionalApplied { request_id: id, measure: measure.to_owned(), actor: who.principal_id, at, config })?;
        let rec = &self.state.requests[&id];
        Ok(match (&rec.preservation, had_order) {
            (Some(order), false) => ProvisionalOutcome::PreservationOrder(order.clone()),
            _ => ProvisionalOutcome::Acknowledged,
        })
    }

    pub fn extend_preservation(&mut self, who: &Principal, id: RequestId) -> Result<PreservationOrder, ServiceError> {
        self.authorize_request(who, Action::ExtendPreservation, id)?;
        let at = self.now();
        let config = self.workflow_config();
        self.commit(Event::PreservationExtended { request_id: id, config, at })?;
        Ok(self.state.requests[&id].preservation.clone().expect("extension requires an order"))
    }

    pub fn record_decision(&mut self, who: &Principal, id: RequestId, input: DecisionInput) -> Result<StateValue, ServiceError> {
        self.authorize_request(who, Action::RecordDecision, id)?;
        let mut decided_by = vec![Signer { principal: who.principal_id, role: who.role }];
        for p in &input.co_signers {
            let signer = self.principal(p).ok_or_else(|| ServiceError::NotFound(format!("principal {p}")))?;
            if !decided_by.iter().any(|s| s.principal == *p) {
                decided_by.push(Signer { principal: *p, role: signer.role });
            }
        }
        let decision = EvaluationDecision {
            decision: input.decision,
            rationale: input.rationale,
            public_summary: input.public_summary,
            decided_by,
            decided_at: self.now(),
            response_data_class: input.response_data_class,
        };
        self.commit(Event::DecisionRecorded { request_id: id, decision })?;
        Ok(self.state.requests[&id].state())
    }

    /// Approved → Escalated, opening the case. `override_guard` escalates an
    /// approved request whose objective would not normally escalate.
    pub fn escalate(&mut self, who: &Principal, id: RequestId, override_guard: bool) -> Result<CaseId, ServiceError> {
        self.authorize_request(who, Action::Escalate, id)?;
        let case_id = CaseId::new();
        let at = self.now();
        self.commit(Event::Escalated {
            request_id: id,
            case_id,
            override_guard,
            opener: Participant { principal: who.principal_id, role: who.role },
            notification_id: NotificationId::new(),
            at,
        })?;
        Ok(case_id)
    }

    pub fn apply_action(&mut self, who: &Principal, id: RequestId, summary: &str) -> Result<StateValue, ServiceError> {
        self.authorize_request(who, Action::ApplyAction, id)?;
        let at = self.now();
        self.commit(Event::ActionApplied { request_id: id, summary: summary.to_owned(), at })?;
        Ok(self.state.requests[&id].state())
    }

    pub fn issue_response(&mut self, who: &Principal, id: RequestId, body: &str, suppress: bool) -> Result<FormalResponse, ServiceError> {
        self.authorize_request(who, Action::IssueResponse, id)?;
        let at = self.now();
        self.commit(Event::ResponseIssued { request_id: id, body: body.to_owned(), suppress_target_notification: suppress, at })?;
        Ok(self.state.requests[&id].response.clone().expect("response just issued"))
    }

    pub fn acknowledge(&mut self, who: &Principal, id: RequestId) -> Result<StateValue, ServiceError> {
        self.authorize_request(who, Action::AcknowledgeResponse, id)?;
        let at = self.now();
        self.commit(Event::Acknowledged { request_id: id, at })?;
        Ok(self.state.requests[&id].state())
    }

    /// Close every issued response whose acknowledgment window has elapsed.
    pub fn expire_acknowledgments(&mut self) -> Result<Vec<RequestId>, ServiceError> {
        let now = self.now();
        let config = self.workflow_config();
        let due: Vec<RequestId> =
            self.state.requests.values().filter(|r| r.acknowledgment_expired(now, &config)).map(|r| r.id()).collect();
        for id in &due {
            self.commit(Event::AcknowledgmentExpired { request_id: *id, at: now, config })?;
        }
        Ok(due)
    }

    // ── tickets and notifications ─────────────────────────────────────

    fn authorize_ticket(&self, who: &Principal, action: Action, id: TicketId) -> Result<&Ticket, ServiceError> {
        let ticket = self.state.tickets.get(&id).ok_or_else(|| ServiceError::NotFound(format!("ticket {id}")))?;
        let owner = self.record(ticket.request_id)?.owner;
        self.authorize(who, action, Resource::OwnedBy(owner))?;
        Ok(ticket)
    }

    pub fn ticket(&self, who: &Principal, id: TicketId) -> Result<Ticket, ServiceError> {
        self.authorize_ticket(who, Action::ReadTicket, id).cloned()
    }

    pub fn post_ticket_message(&mut self, who: &Principal, id: TicketId, body: &str) -> Result<Ticket, ServiceError> {
        self.authorize_ticket(who, Action::PostTicketMessage, id)?;
        if body.trim().is_empty() {
            return Err(ServiceError::BadInput("message body is empty".into()));
        }
        let at = self.now();
        self.commit(Event::TicketMessagePosted { ticket_id: id, author: who.principal_id, body: body.to_owned(), at })?;
        Ok(self.state.tickets[&id].clone())
    }

    /// Persist a notification for `recipient` (`role:<name>`,
    /// `principal:<uuid>` or a bare role name). Delivery happens later.
    pub fn notify(&mut self, recipient: &str, subject: &str, body: &str) -> Result<Notification, ServiceError> {
        let to: Recipient = recipient.parse().map_err(|_| ServiceError::UnknownRecipient(recipient.to_owned()))?;
        let n = Notification::new(NotificationId::new(), to, subject, body, self.now());
        self.commit(Event::NotificationCreated { notification: n.clone() })?;
        Ok(n)
    }

    pub fn notifications(&self, who: &Principal) -> Result<Vec<Notification>, ServiceError> {
        self.authorize(who, Action::ReadNotifications, Resource::OwnedBy(who.principal_id))?;
        let mut out: Vec<Notification> = self
            .state
            .notifications
            .values()
            .filter(|n| match n.recipient {
                Recipient::Principal(p) => p == who.principal_id,
                Recipient::Role(r) => r == who.role,
            })
            .cloned()
            .collect();
        out.sort_by_key(|n| n.created_at);
        Ok(out)
    }

    /// Hand undelivered notifications to the sender. Returns
    /// (delivered, failed); failures stay queued.
    pub fn deliver_pending(&mut self) -> Result<(usize, usize), ServiceError> {
        let mut pending: Vec<Notification> = self.state.notifications.values().filter(|n| !n.delivered).cloned().collect();
        pending.sort_by_key(|n| n.created_at);
        let (mut ok, mut failed) = (0, 0);
        for n in pending {
            match self.sender.send(&n) {
                Ok(()) => {
                    let at = self.now();
                    self.commit(Event::NotificationDelivered { id: n.id, at })?;
                    ok += 1;
                }
                Err(e) => {
                    log::warn!("delivery of {} failed: {e}", n.id);
                    failed += 1;
                }
            }
        }
        Ok((ok, failed))
    }

    // ── cases ──────────────────────────────────────────────────────────

    pub fn case_view(&self, who: &Principal, id: CaseId) -> Result<CaseView, ServiceError> {
        self.authorize(who, Action::ReadCase, Resource::Global)?;
        let case = self.case(id)?.clone();
        let mut chains = BTreeMap::new();
        for e in &case.evidence_ids {
            chains.insert(e.clone(), self.store.verify_chain(e)?);
        }
        Ok(CaseView { case, chains })
    }

    pub fn add_case_participant(&mut self, who: &Principal, id: CaseId, principal: PrincipalId) -> Result<(), ServiceError> {
        self.authorize(who, Action::AssignTask, Resource::Global)?;
        self.open_case(id)?;
        let role = self.principal(&principal).ok_or_else(|| ServiceError::NotFound(format!("principal {principal}")))?.role;
        if !crate::cases::can_read(role) {
            return Err(CaseError::Forbidden(format!("{role} may not take part in cases")).into());
        }
        let at = self.now();
        self.commit(Event::ParticipantAdded { case_id: id, participant: Participant { principal, role }, actor: who.principal_id, at })
    }

    fn verified(&self, id: &EvidenceId) -> Result<(), ServiceError> {
        match self.store.verify_chain(id)? {
            ChainStatus::Ok => Ok(()),
            ChainStatus::BrokenAt(seq) => Err(CaseError::ChainBroken { evidence_id: id.clone(), seq }.into()),
        }
    }

    /// Link evidence into a case after verifying its chain. Returns false
    /// when it was already linked.
    pub fn link_evidence(&mut self, who: &Principal, id: CaseId, evidence: &EvidenceId) -> Result<bool, ServiceError> {
        self.authorize(who, Action::LinkEvidence, Resource::Global)?;
        if self.open_case(id)?.evidence_ids.contains(evidence) {
            return Ok(false);
        }
        if !self.state.evidence.contains_key(evidence) {
            return Err(ServiceError::NotFound(format!("evidence {evidence}")));
        }
        self.verified(evidence)?;
        let at = self.now();
        self.store.append_custody_event(
            evidence,
            CustodyAction::Transferred,
            &who.principal_id.to_string(),
            &format!("linked to case {id}"),
            at,
        )?;
        self.commit(Event::EvidenceLinked { case_id: id, evidence_id: evidence.clone(), actor: who.principal_id, at })?;
        Ok(true)
    }

    pub fn attach_case_document(&mut self, who: &Principal, id: CaseId, doc: &EvidenceId, kind: DocumentKind) -> Result<CaseDocument, ServiceError> {
        self.authorize(who, Action::AttachCaseDocument, Resource::Global)?;
        self.open_case(id)?;
        let document = CaseDocument { doc_id: doc.clone(), kind, uploaded_by: who.principal_id, uploaded_at: self.now() };
        self.commit(Event::CaseDocumentAttached { case_id: id, document: document.clone() })?;
        Ok(document)
    }

    pub fn assign_task(
        &mut self,
        who: &Principal,
        id: CaseId,
        description: &str,
        assignee_role: Role,
        due: Option<Timestamp>,
    ) -> Result<Assignment, ServiceError> {
        self.authorize(who, Action::AssignTask, Resource::Global)?;
        let task_id = TaskId::new();
        let at = self.now();
        self.commit(Event::TaskAssigned {
            case_id: id,
            task_id,
            description: description.to_owned(),
            assignee_role,
            due,
            actor: who.principal_id,
            at,
        })?;
        Ok(self.state.cases[&id].task(&task_id).cloned().expect("task just assigned"))
    }

    pub fn update_task(&mut self, who: &Principal, id: CaseId, task: TaskId, status: TaskStatus) -> Result<Assignment, ServiceError> {
        self.authorize(who, Action::UpdateTask, Resource::Global)?;
        let at = self.now();
        self.commit(Event::TaskUpdated { case_id: id, task_id: task, status, actor: who.principal_id, at })?;
        Ok(self.state.cases[&id].task(&task).cloned().expect("task exists"))
    }

    /// Close a case once every linked chain verifies.
    pub fn close_case(&mut self, who: &Principal, id: CaseId) -> Result<Case, ServiceError> {
        self.authorize(who, Action::CloseCase, Resource::Global)?;
        let linked = self.case(id)?.evidence_ids.clone();
        for e in &linked {
            self.verified(e)?;
        }
        let at = self.now();
        self.commit(Event::CaseClosed { case_id: id, verified_chains: linked, actor: who.principal_id, at })?;
        Ok(self.state.cases[&id].clone())
    }

    /// Package a case's evidence for transfer to `recipient`.
    pub fn export_case(&mut self, who: &Principal, id: CaseId, recipient: &str) -> Result<(TransportManifest, PathBuf), ServiceError> {
        self.authorize(who, Action::ExportCase, Resource::Global)?;
        let case = self.case(id)?;
        let mut heads = BTreeMap::new();
        for e in &case.evidence_ids {
            heads.insert(e.clone(), self.store.chain_head(e)?);
        }
        let dossier = case.dossier(&heads);
        let evidence = case.evidence_ids.clone();
        let at = self.now();
        let (manifest, path) =
            self.store.export_transport_package(id, &evidence, &dossier, recipient, &who.principal_id.to_string(), at)?;
        self.commit(Event::EvidenceExported { manifest: manifest.clone() })?;
        Ok((manifest, path))
    }

    // ── evidence ───────────────────────────────────────────────────────

    pub fn evidence_item(&self, who: &Principal, id: &EvidenceId) -> Result<EvidenceItem, ServiceError> {
        self.authorize(who, Action::VerifyEvidence, Resource::Global)?;
        Ok(self.store.item(id)?)
    }

    pub fn verify_evidence(&self, who: &Principal, id: &EvidenceId) -> Result<ChainStatus, ServiceError> {
        self.authorize(who, Action::VerifyEvidence, Resource::Global)?;
        Ok(self.store.verify_chain(id)?)
    }

    pub fn custody_chain(&self, who: &Principal, id: &EvidenceId) -> Result<Vec<CustodyEvent>, ServiceError> {
        self.authorize(who, Action::VerifyEvidence, Resource::Global)?;
        Ok(self.store.chain(id)?)
    }

    /// Read evidence bytes, recording an `examined` custody event.
    pub fn retrieve_evidence(&self, who: &Principal, id: &EvidenceId) -> Result<Vec<u8>, ServiceError> {
        self.authorize(who, Action::ReadEvidence, Resource::Global)?;
        let at = self.now();
        Ok(self.store.retrieve(id, Some((&who.principal_id.to_string(), at)))?)
    }

    /// Destroy a blob under dual control: the caller and `co_authorizer`
    /// must be distinct and both allowed to authorize destruction.
    pub fn destroy_evidence(
        &mut self,
        who: &Principal,
        id: &EvidenceId,
        co_authorizers: &[PrincipalId],
        reason: &str,
    ) -> Result<DestructionRecord, ServiceError> {
        self.authorize(who, Action::AuthorizeDestruction, Resource::Global)?;
        let mut authorized_by = vec![who.principal_id];
        for p in co_authorizers {
            let co = self.principal(p).ok_or_else(|| ServiceError::NotFound(format!("principal {p}")))?;
            self.authorize(co, Action::AuthorizeDestruction, Resource::Global)?;
            if !authorized_by.contains(p) {
                authorized_by.push(*p);
            }
        }
        if authorized_by.len() < self.config.destruction.min_authorizers {
            return Err(crate::custody::CustodyError::InsufficientAuthorization.into());
        }
        if !self.state.evidence.contains_key(id) {
            return Err(ServiceError::NotFound(format!("evidence {id}")));
        }
        let record = DestructionRecord { evidence_id: id.clone(), authorized_by, reason: reason.to_owned(), destroyed_at: self.now() };
        self.store.destroy(&record)?;
        self.commit(Event::EvidenceDestroyed { record: record.clone() })?;
        Ok(record)
    }

    // ── collection ────────────────────────────────────────────────────

    pub fn list_agents(&self, who: &Principal) -> Result<Vec<AgentInfo>, ServiceError> {
        self.authorize(who, Action::ListAgents, Resource::Global)?;
        Ok(self.state.flows.agents().cloned().collect())
    }

    pub fn launch_flow(&mut self, who: &Principal, agent: AgentId, case: CaseId, kind: FlowKind) -> Result<FlowRequest, ServiceError> {
        self.authorize(who, Action::LaunchFlow, Resource::Global)?;
        if self.state.flows.agent(&agent).is_none() {
            return Err(FlowError::UnknownAgent(agent).into());
        }
        if !self.case(case)?.is_open() {
            return Err(FlowError::CaseClosed(case).into());
        }
        let request = FlowRequest { flow_id: FlowId::new(), agent_id: agent, kind, issued_by: who.principal_id, case_id: case, issued_at: self.now() };
        self.commit(Event::FlowLaunched { request: request.clone() })?;
        Ok(request)
    }

    pub fn flow(&self, who: &Principal, id: FlowId) -> Result<FlowRecord, ServiceError> {
        self.authorize(who, Action::ReadFlow, Resource::Global)?;
        self.state.flows.flow(&id).cloned().ok_or_else(|| FlowError::UnknownFlow(id).into())
    }

    pub fn query_logs(&self, who: &Principal, filter: &LogFilter) -> Result<Vec<LogRecord>, ServiceError> {
        self.authorize(who, Action::QueryLogs, Resource::Global)?;
        Ok(self.state.logs.query(filter)?)
    }

    pub fn register_agent(&mut self, hello: RegisterPayload) -> Result<AgentInfo, ServiceError> {
        let agent = AgentInfo {
            agent_id: hello.agent_id.unwrap_or_default(),
            hostname: hello.hostname,
            os: hello.os,
            last_seen: self.now(),
            labels: hello.labels,
        };
        let id = agent.agent_id;
        self.commit(Event::AgentRegistered { agent })?;
        Ok(self.state.flows.agent(&id).cloned().expect("agent just registered"))
    }

    pub fn poll_agent(&mut self, agent: AgentId) -> Result<Vec<FlowRequest>, ServiceError> {
        if self.state.flows.agent(&agent).is_none() {
            return Err(FlowError::UnknownAgent(agent).into());
        }
        if self.state.flows.queued(&agent) == 0 {
            return Ok(Vec::new());
        }
        let at = self.now();
        let mut board = self.state.flows.clone();
        let assigned = board.poll(&agent, at)?;
        self.commit(Event::FlowsAssigned { agent_id: agent, at })?;
        Ok(assigned)
    }

    fn running_fetch(&self, agent: AgentId, flow: FlowId) -> Result<&FlowRecord, FlowError> {
        let rec = self.state.flows.flow(&flow).ok_or(FlowError::UnknownFlow(flow))?;
        if rec.request.agent_id != agent {
            return Err(FlowError::WrongAgent { flow });
        }
        if rec.result.status != crate::flows::FlowStatus::Running {
            return Err(FlowError::FlowNotRunning(flow));
        }
        Ok(rec)
    }

    /// Accept one chunk of a fetched file. When the file completes it is
    /// stored as evidence with `collected` and `stored` custody events.
    pub fn accept_chunk(&mut self, agent: AgentId, chunk: ResultChunk) -> Result<Option<EvidenceItem>, ServiceError> {
        let rec = self.running_fetch(agent, chunk.flow_id)?;
        let FlowKind::FileFinder { glob, action: FileAction::Fetch } = &rec.request.kind else {
            return Err(FlowError::InvalidFlow(format!("flow {} does not fetch files", chunk.flow_id)).into());
        };
        let pattern = crate::flows::glob::PathGlob::parse(glob)?;
        if chunk.path.split(['/', '\\']).any(|s| s == "..") || !pattern.matches_path(&chunk.path) {
            self.assembler.discard_flow(chunk.flow_id);
            return Err(FlowError::PathEscape(chunk.path).into());
        }
        let Some(file) = self.assembler.accept(chunk)? else { return Ok(None) };
        let at = self.now();
        let item = self.store.store(
            &file.content,
            EvidenceFormat::Raw,
            EvidenceSource::Agent { agent_id: agent, path: file.path.clone(), flow_id: file.flow_id },
            &format!("agent:{agent}"),
            at,
        )?;
        if !self.state.evidence.contains_key(&item.evidence_id) {
            self.commit(Event::EvidenceRegistered { item: item.clone() })?;
        }
        self.fetched.insert((file.flow_id, file.path), item.evidence_id.clone());
        Ok(Some(item))
    }

    /// Record a flow's final result. Fetched items get the evidence id of
    /// the file actually received for their path.
    pub fn finish_flow(&mut self, agent: AgentId, mut result: FlowResult) -> Result<(), ServiceError> {
        let flow = result.flow_id;
        if let Some(FlowItems::Files(files)) = &mut result.items {
            for f in files.iter_mut() {
                f.evidence_id = self.fetched.get(&(flow, f.path.clone())).cloned();
            }
        }
        let is_fetch = self
            .state
            .flows
            .flow(&flow)
            .is_some_and(|r| matches!(r.request.kind, FlowKind::FileFinder { action: FileAction::Fetch, .. }));
        if !is_fetch {
            if let Some(FlowItems::Files(files)) = &mut result.items {
                files.iter_mut().for_each(|f| f.evidence_id = None);
            }
        }
        let at = self.now();
        let outcome = self.commit(Event::FlowCompleted { agent_id: agent, result, at });
        if outcome.is_ok() {
            self.assembler.discard_flow(flow);
            self.fetched.retain(|(f, _), _| *f != flow);
        }
        outcome
    }

    pub fn ingest_logs(&mut self, records: &[Value]) -> Result<(usize, Vec<MalformedRecord>), ServiceError> {
        let (fresh, bad) = self.state.logs.prepare(records);
        let n = fresh.len();
        if n > 0 {
            self.commit(Event::LogsIngested { records: fresh })?;
        }
        Ok((n, bad))
    }

    // ── reporting ──────────────────────────────────────────────────────

    pub fn transparency_report(&self, who: &Principal, period: Period) -> Result<TransparencyReport, ServiceError> {
        self.authorize(who, Action::TransparencyReport, Resource::Global)?;
        let records: Vec<RequestRecord> = self.state.requests.values().cloned().collect();
        Ok(generate_transparency_report(&records, period)?)
    }

    pub fn compute_invoice(&mut self, who: &Principal, input: InvoiceInput) -> Result<Invoice, ServiceError> {
        self.authorize(who, Action::ComputeInvoice, Resource::Global)?;
        if let Some(c) = input.case_id {
            self.case(c)?;
        }
        let (case_id, support_fees) = (input.case_id, input.support_fees);
        let (resources, labor) = input.lines()?;
        let invoice = compute_invoice(case_id, resources, labor, support_fees)?;
        self.commit(Event::InvoiceIssued { invoice: invoice.clone() })?;
        Ok(invoice)
    }
}

/// The agent channel's view of a shared service.
#[derive(Clone)]
pub struct AgentGateway(pub SharedClerms);

impl AgentGateway {
    fn with<T>(&self, f: impl FnOnce(&mut Clerms) -> Result<T, ServiceError>) -> Result<T, RemoteError> {
        let mut svc = self.0.lock().unwrap_or_else(|p| p.into_inner());
        f(&mut svc).map_err(|e| RemoteError::new(e.name(), e.to_string()))
    }
}

impl AgentHandler for AgentGateway {
    fn register(&self, hello: RegisterPayload) -> Result<AgentInfo, RemoteError> {
        self.with(|s| s.register_agent(hello))
    }

    fn poll(&self, agent: AgentId) -> Result<Vec<FlowRequest>, RemoteError> {
        self.with(|s| s.poll_agent(agent))
    }

    fn result_chunk(&self, agent: AgentId, chunk: ResultChunk) -> Result<(), RemoteError> {
        self.with(|s| s.accept_chunk(agent, chunk).map(|_| ()))
    }

    fn flow_done(&self, agent: AgentId, result: FlowResult) -> Result<(), RemoteError> {
        self.with(|s| s.finish_flow(agent, result))
    }

    fn log_batch(&self, agent: AgentId, records: Vec<Value>) -> Result<Vec<MalformedRecord>, RemoteError> {
        self.with(|s| {
            if s.state.flows.agent(&agent).is_none() {
                return Err(FlowError::UnknownAgent(agent).into());
            }
            s.ingest_logs(&records).map(|(_, bad)| bad)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::fixtures::scenario_one;
    use crate::flows::{FileItem, FlowStatus, Os};
    use crate::time::ManualClock;
    use crate::workflow::StateValue as S;
    use base64::Engine;

    struct Harness {
        _dir: tempfile::TempDir,
        config: Config,
        clock: Arc<ManualClock>,
    }

    impl Harness {
        fn new(snapshot_every: u64) -> Self {
            let dir = tempfile::tempdir().unwrap();
            let mut config = Config::default();
            config.data_dir = dir.path().to_path_buf();
            config.storage.fsync = false;
            config.storage.snapshot_every = snapshot_every;
            let clock = Arc::new(ManualClock::new(Timestamp::parse("2024-06-01T09:00:00Z").unwrap()));
            Self { _dir: dir, config, clock }
        }

        fn open(&self) -> (Clerms, OpenReport) {
            Clerms::open(self.config.clone(), self.clock.clone(), Arc::new(super::super::tickets::LogSender)).unwrap()
        }
    }

    struct Staff {
        le: Principal,
        cm: Principal,
        fe: Principal,
        la: Principal,
    }

    fn staff(svc: &mut Clerms) -> Staff {
        Staff {
            le: svc.add_principal(Role::LeAgent, "le-token-0123456789", "Mike Davies").unwrap(),
            cm: svc.add_principal(Role::CrisisManager, "cm-token-0123456789", "Crisis").unwrap(),
            fe: svc.add_principal(Role::ForensicExpert, "fe-token-0123456789", "Forensics").unwrap(),
            la: svc.add_principal(Role::LegalAdvisor, "la-token-0123456789", "Legal").unwrap(),
        }
    }

    fn approve(svc: &mut Clerms, p: &Staff) -> RequestId {
        let (rec, _) = svc.submit_request(&p.le, &scenario_one()).unwrap();
        let id = rec.id();
        let doc = svc.upload_document(&p.le, b"court order scan", EvidenceFormat::Document).unwrap();
        svc.receive_documents(&p.cm, id, vec![doc.evidence_id]).unwrap();
        svc.begin_evaluation(&p.la, id).unwrap();
        let input = DecisionInput {
            decision: Decision::Approve,
            rationale: "order is valid".into(),
            public_summary: "approved".into(),
            response_data_class: DataClass::NonContent,
            co_signers: vec![p.la.principal_id],
        };
        assert_eq!(svc.record_decision(&p.cm, id, input).unwrap(), S::Approved);
        id
    }

    /// Drive a fetch flow end to end through the service API.
    fn collect(svc: &mut Clerms, p: &Staff, case: CaseId) -> EvidenceId {
        let agent = svc
            .register_agent(RegisterPayload { agent_id: None, hostname: "web01".into(), os: Os::Linux, labels: vec![] })
            .unwrap()
            .agent_id;
        let kind = FlowKind::FileFinder { glob: "/var/lib/mysql/fluxbb/*".into(), action: FileAction::Fetch };
        let flow = svc.launch_flow(&p.fe, agent, case, kind).unwrap().flow_id;
        assert_eq!(svc.poll_agent(agent).unwrap().len(), 1);
        assert!(svc.poll_agent(agent).unwrap().is_empty());
        let content = b"CREATE TABLE users (id INT);";
        let chunk = ResultChunk {
            flow_id: flow,
            path: "/var/lib/mysql/fluxbb/users.frm".into(),
            offset: 0,
            data: base64::engine::general_purpose::STANDARD.encode(content),
            eof: true,
            size_bytes: Some(content.len() as u64),
            sha256: Some(crate::canonical::sha256_hex(content)),
        };
        let item = svc.accept_chunk(agent, chunk).unwrap().unwrap();
        let result = FlowResult {
            flow_id: flow,
            status: FlowStatus::Complete,
            items: Some(FlowItems::Files(vec![FileItem {
                path: "/var/lib/mysql/fluxbb/users.frm".into(),
                size_bytes: content.len() as u64,
                sha256: Some(crate::canonical::sha256_hex(content)),
                evidence_id: None,
            }])),
            error: None,
            completed_at: None,
        };
        svc.finish_flow(agent, result).unwrap();
        let rec = svc.flow(&p.fe, flow).unwrap();
        let Some(FlowItems::Files(files)) = rec.result.items else { panic!("files expected") };
        assert_eq!(files[0].evidence_id.as_ref(), Some(&item.evidence_id));
        item.evidence_id
    }

    #[test]
    fn disclosure_lifecycle_and_replay() {
        let h = Harness::new(0);
        let (mut svc, _) = h.open();
        let p = staff(&mut svc);
        let id = approve(&mut svc, &p);
        let case = svc.escalate(&p.cm, id, false).unwrap();
        let evidence = collect(&mut svc, &p, case);
        assert!(svc.link_evidence(&p.fe, case, &evidence).unwrap());
        assert!(!svc.link_evidence(&p.fe, case, &evidence).unwrap());
        assert_eq!(svc.case_view(&p.la, case).unwrap().chains[&evidence], ChainStatus::Ok);
        assert_eq!(svc.close_case(&p.cm, case).unwrap_err().name(), "MissingForensicReport");
        let report = svc.upload_document(&p.fe, b"forensic report", EvidenceFormat::Document).unwrap();
        svc.attach_case_document(&p.fe, case, &report.evidence_id, DocumentKind::ForensicReport).unwrap();
        svc.close_case(&p.cm, case).unwrap();
        svc.apply_action(&p.cm, id, "subscriber records extracted").unwrap();
        svc.issue_response(&p.cm, id, "account data attached", false).unwrap();
        assert_eq!(svc.acknowledge(&p.le, id).unwrap(), S::Closed);

        let digest = svc.digest();
        let appended = svc.events_appended();
        drop(svc);
        let (again, report) = h.open();
        assert_eq!(report.events, appended);
        assert_eq!(report.snapshot_seq, None);
        assert_eq!(again.digest(), digest);
    }

    #[test]
    fn snapshot_restore_matches_full_replay() {
        let h = Harness::new(5);
        let (mut svc, _) = h.open();
        let p = staff(&mut svc);
        let id = approve(&mut svc, &p);
        svc.apply_action(&p.cm, id, "records retrieved").unwrap();
        let record = json!({"source": "nginx", "timestamp": "2024-06-01T08:00:00Z", "client_ip": "203.0.113.7", "message": "login"});
        assert_eq!(svc.ingest_logs(&[record]).unwrap().0, 1);
        let digest = svc.digest();
        drop(svc);

        let (snap, report) = h.open();
        assert!(report.snapshot_seq.is_some());
        assert_eq!(snap.digest(), digest);
        drop(snap);

        std::fs::remove_dir_all(h.config.data_dir.join("snapshots")).unwrap();
        let (full, report) = h.open();
        assert_eq!(report.snapshot_seq, None);
        assert_eq!(full.digest(), digest);
    }

    #[test]
    fn torn_final_event_is_dropped() {
        let h = Harness::new(0);
        let (mut svc, _) = h.open();
        let p = staff(&mut svc);
        svc.submit_request(&p.le, &scenario_one()).unwrap();
        let digest = svc.digest();
        drop(svc);
        let log = h.config.data_dir.join("events.jsonl");
        let mut bytes = std::fs::read(&log).unwrap();
        bytes.extend_from_slice(b"{\"seq\":99,\"timest");
        std::fs::write(&log, bytes).unwrap();
        let (svc, report) = h.open();
        assert!(report.torn_tail.is_some());
        assert_eq!(svc.digest(), digest);
    }

    #[test]
    fn requester_sees_a_redacted_view() {
        let h = Harness::new(0);
        let (mut svc, _) = h.open();
        let p = staff(&mut svc);
        let id = approve(&mut svc, &p);
        let view = svc.request_view(&p.le, id).unwrap();
        let decision = &view["decisions"][0];
        assert_eq!(decision["public_summary"], "approved");
        assert!(decision.get("rationale").is_none());
        assert!(view.get("owner").is_none());
        let full = svc.request_view(&p.cm, id).unwrap();
        assert_eq!(full["decisions"][0]["rationale"], "order is valid");

        let other = svc.add_principal(Role::LeAgent, "other-le-0123456789", "Other").unwrap();
        assert!(matches!(svc.request_view(&other, id), Err(ServiceError::Forbidden(_))));
        assert!(svc.list_requests(&other).unwrap().is_empty());
        assert_eq!(svc.list_requests(&p.le).unwrap().len(), 1);
    }

    #[test]
    fn role_checks_precede_workflow_checks() {
        let h = Harness::new(0);
        let (mut svc, _) = h.open();
        let p = staff(&mut svc);
        let id = approve(&mut svc, &p);
        let err = svc.escalate(&p.le, id, false).unwrap_err();
        assert_eq!(err.class().http_status(), 403);
        let err = svc.apply_provisional_measures(&p.cm, id, "freeze").unwrap_err();
        assert_eq!(err.name(), "NotEligible");
        let events = svc.events_appended();
        assert!(svc.begin_evaluation(&p.cm, id).is_err());
        assert_eq!(svc.events_appended(), events);
    }

    #[test]
    fn decision_without_crisis_manager_is_rejected() {
        let h = Harness::new(0);
        let (mut svc, _) = h.open();
        let p = staff(&mut svc);
        let (rec, _) = svc.submit_request(&p.le, &scenario_one()).unwrap();
        let doc = svc.upload_document(&p.le, b"order", EvidenceFormat::Document).unwrap();
        svc.receive_documents(&p.la, rec.id(), vec![doc.evidence_id]).unwrap();
        svc.begin_evaluation(&p.la, rec.id()).unwrap();
        let mut cm_less = svc.config.access.clone();
        cm_less.insert("record_decision".into(), vec!["legal_advisor".into()]);
        svc.matrix = Config { access: cm_less, ..Config::default() }.role_matrix().unwrap();
        let input = DecisionInput {
            decision: Decision::Reject,
            rationale: "no".into(),
            public_summary: String::new(),
            response_data_class: DataClass::None,
            co_signers: vec![],
        };
        let err = svc.record_decision(&p.la, rec.id(), input).unwrap_err();
        assert_eq!(err.name(), "MissingCrisisManager");
        assert_eq!(err.class().http_status(), 400);
    }

    #[test]
    fn destruction_needs_two_authorizers() {
        let h = Harness::new(0);
        let (mut svc, _) = h.open();
        let p = staff(&mut svc);
        let doc = svc.upload_document(&p.le, b"to be destroyed", EvidenceFormat::Document).unwrap();
        let err = svc.destroy_evidence(&p.cm, &doc.evidence_id, &[], "retention").unwrap_err();
        assert_eq!(err.class().http_status(), 403);
        let err = svc.destroy_evidence(&p.cm, &doc.evidence_id, &[p.fe.principal_id], "retention").unwrap_err();
        assert_eq!(err.class().http_status(), 403);
        let rec = svc.destroy_evidence(&p.cm, &doc.evidence_id, &[p.la.principal_id], "retention").unwrap();
        assert_eq!(rec.authorized_by.len(), 2);
        assert_eq!(svc.state().destructions.len(), 1);
    }

    #[test]
    fn fetched_chunk_outside_the_glob_is_refused() {
        let h = Harness::new(0);
        let (mut svc, _) = h.open();
        let p = staff(&mut svc);
        let id = approve(&mut svc, &p);
        let case = svc.escalate(&p.cm, id, false).unwrap();
        let agent = svc
            .register_agent(RegisterPayload { agent_id: None, hostname: "web01".into(), os: Os::Linux, labels: vec![] })
            .unwrap()
            .agent_id;
        let kind = FlowKind::FileFinder { glob: "/var/lib/mysql/fluxbb/*".into(), action: FileAction::Fetch };
        let flow = svc.launch_flow(&p.fe, agent, case, kind).unwrap().flow_id;
        svc.poll_agent(agent).unwrap();
        let chunk = |path: &str| ResultChunk {
            flow_id: flow,
            path: path.into(),
            offset: 0,
            data: String::new(),
            eof: true,
            size_bytes: Some(0),
            sha256: None,
        };
        for bad in ["/etc/shadow", "/var/lib/mysql/fluxbb/../../../etc/shadow"] {
            let err = svc.accept_chunk(agent, chunk(bad)).unwrap_err();
            assert_eq!(err.name(), "PathEscape");
        }
        let err = svc.accept_chunk(AgentId::new(), chunk("/var/lib/mysql/fluxbb/a")).unwrap_err();
        assert_eq!(err.class().http_status(), 409);
    }

    #[test]
    fn notifications_reach_role_members() {
        let h = Harness::new(0);
        let (mut svc, _) = h.open();
        let p = staff(&mut svc);
        svc.submit_request(&p.le, &scenario_one()).unwrap();
        assert_eq!(svc.notifications(&p.cm).unwrap().len(), 1);
        assert!(svc.notifications(&p.fe).unwrap().is_empty());
        svc.notify(&format!("principal:{}", p.fe.principal_id), "hello", "body").unwrap();
        assert_eq!(svc.notifications(&p.fe).unwrap().len(), 1);
        assert_eq!(svc.notify("role:janitor", "x", "y").unwrap_err().name(), "UnknownRecipient");
        assert_eq!(svc.deliver_pending().unwrap(), (2, 0));
        assert!(svc.state().notifications.values().all(|n| n.delivered));
    }

    #[test]
    fn data_directory_has_one_owner() {
        let h = Harness::new(0);
        let (_svc, _) = h.open();
        let err = Clerms::open(h.config.clone(), h.clock.clone(), Arc::new(super::super::tickets::LogSender)).unwrap_err();
        assert_eq!(err.class().http_status(), 409);
    }

    #[test]
    fn acknowledgment_window_closes_requests() {
        let h = Harness::new(0);
        let (mut svc, _) = h.open();
        let p = staff(&mut svc);
        let id = approve(&mut svc, &p);
        svc.apply_action(&p.cm, id, "done").unwrap();
        svc.issue_response(&p.cm, id, "here", false).unwrap();
        assert!(svc.expire_acknowledgments().unwrap().is_empty());
        h.clock.advance_days(31);
        assert_eq!(svc.expire_acknowledgments().unwrap(), vec![id]);
        assert_eq!(svc.state().requests[&id].state(), S::Closed);
    }
}
