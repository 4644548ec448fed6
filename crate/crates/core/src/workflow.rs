//! Request lifecycle: submission, evaluation and response.
//!
//! The transition table below is the single source for both the guards
//! enforced by [`RequestRecord`] operations and the successor sets reported
//! by [`allowed_transitions`]. Every operation is all-or-nothing: on error
//! the record is left untouched.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::{LeRequest, Objective, Regime, Role};
use crate::ids::{CaseId, EvidenceId, PrincipalId, RequestId};
use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StateValue {
    PreSubmitted,
    AwaitingDocuments,
    DocumentsReceived,
    UnderEvaluation,
    Approved,
    Rejected,
    Challenged,
    Escalated,
    ActionApplied,
    ResponseIssued,
    Closed,
}

impl StateValue {
    pub const ALL: [StateValue; 11] = [
        StateValue::PreSubmitted,
        StateValue::AwaitingDocuments,
        StateValue::DocumentsReceived,
        StateValue::UnderEvaluation,
        StateValue::Approved,
        StateValue::Rejected,
        StateValue::Challenged,
        StateValue::Escalated,
        StateValue::ActionApplied,
        StateValue::ResponseIssued,
        StateValue::Closed,
    ];
}

impl fmt::Display for StateValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowState {
    pub value: StateValue,
    pub provisional_active: bool,
    /// Set once the single Challenged → UnderEvaluation loop has been used.
    #[serde(default)]
    pub reevaluated: bool,
}

impl Default for WorkflowState {
    fn default() -> Self {
        Self {
            value: StateValue::PreSubmitted,
            provisional_active: false,
            reevaluated: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Approve,
    Reject,
    Challenge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataClass {
    Content,
    NonContent,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signer {
    pub principal: PrincipalId,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationDecision {
    pub decision: Decision,
    /// Internal rationale; never shown to the requester.
    pub rationale: String,
    /// Staff-authored summary the requester may see.
    #[serde(default)]
    pub public_summary: String,
    pub decided_by: Vec<Signer>,
    pub decided_at: Timestamp,
    pub response_data_class: DataClass,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreservationOrder {
    pub request_id: RequestId,
    pub issued_at: Timestamp,
    pub deadline: Timestamp,
    pub extended: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvisionalMeasure {
    pub measure: String,
    pub actor: PrincipalId,
    pub at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ProvisionalOutcome {
    PreservationOrder(PreservationOrder),
    Acknowledged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseKind {
    /// Testimony is never given live; a records certificate is offered instead.
    Certificate,
    Disclosure,
    ActionNotice,
    Refusal,
    Challenge,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormalResponse {
    pub kind: ResponseKind,
    pub body: String,
    pub data_class: DataClass,
    pub issued_at: Timestamp,
    /// Deployment policy decides what this means for target notification.
    pub target_notification_suppressed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub state: StateValue,
    pub at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowConfig {
    pub preservation_delay_days: i64,
    pub preservation_extension_days: i64,
    pub ack_timeout_days: i64,
}

impl Default for WorkflowConfig {
    fn default() -> Self {
        Self {
            preservation_delay_days: 90,
            preservation_extension_days: 90,
            ack_timeout_days: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WorkflowError {
    #[error("DuplicateRequest({0})")]
    DuplicateRequest(RequestId),
    #[error("UnknownRequest({0})")]
    UnknownRequest(RequestId),
    #[error("UnknownDocument({0})")]
    UnknownDocument(EvidenceId),
    #[error("InvalidState: {operation} not allowed from {from}")]
    InvalidState { from: StateValue, operation: Operation },
    #[error("NotEligible: provisional measures need an emergency or preservation request")]
    NotEligible,
    #[error("MissingCrisisManager")]
    MissingCrisisManager,
    #[error("MissingDataClass: approved disclosure must state content or non_content")]
    MissingDataClass,
    #[error("NoDocuments")]
    NoDocuments,
    #[error("PreservationAlreadyOrdered")]
    PreservationAlreadyOrdered,
    #[error("NoPreservationOrder")]
    NoPreservationOrder,
    #[error("ExtensionExhausted")]
    ExtensionExhausted,
}

impl WorkflowError {
    pub fn name(&self) -> &'static str {
        match self {
            WorkflowError::DuplicateRequest(_) => "DuplicateRequest",
            WorkflowError::UnknownRequest(_) => "UnknownRequest",
            WorkflowError::UnknownDocument(_) => "UnknownDocument",
            WorkflowError::InvalidState { .. } => "InvalidState",
            WorkflowError::NotEligible => "NotEligible",
            WorkflowError::MissingCrisisManager => "MissingCrisisManager",
            WorkflowError::MissingDataClass => "MissingDataClass",
            WorkflowError::NoDocuments => "NoDocuments",
            WorkflowError::PreservationAlreadyOrdered => "PreservationAlreadyOrdered",
            WorkflowError::NoPreservationOrder => "NoPreservationOrder",
            WorkflowError::ExtensionExhausted => "ExtensionExhausted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operation {
    Submit,
    ReceiveDocuments,
    BeginEvaluation,
    RecordDecision,
    ReopenEvaluation,
    Escalate,
    ApplyAction,
    IssueResponse,
    Acknowledge,
    ExpireAcknowledgment,
    ProvisionalMeasures,
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok();
        f.write_str(s.as_ref().and_then(|v| v.as_str()).unwrap_or("operation"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Guard {
    Always,
    DecisionApprove,
    DecisionReject,
    DecisionChallenge,
    /// objective is disclosure or preservation (a crisis-manager override lifts it)
    DisclosureOrPreservation,
    NotYetReevaluated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionRule {
    pub from: StateValue,
    pub to: StateValue,
    pub operation: Operation,
    pub guard: Guard,
}

const fn rule(from: StateValue, to: StateValue, operation: Operation, guard: Guard) -> TransitionRule {
    TransitionRule { from, to, operation, guard }
}

use StateValue as S;

pub const TRANSITIONS: &[TransitionRule] = &[
    rule(S::PreSubmitted, S::AwaitingDocuments, Operation::Submit, Guard::Always),
    rule(S::AwaitingDocuments, S::DocumentsReceived, Operation::ReceiveDocuments, Guard::Always),
    rule(S::DocumentsReceived, S::UnderEvaluation, Operation::BeginEvaluation, Guard::Always),
    rule(S::DocumentsReceived, S::Approved, Operation::RecordDecision, Guard::DecisionApprove),
    rule(S::DocumentsReceived, S::Rejected, Operation::RecordDecision, Guard::DecisionReject),
    rule(S::DocumentsReceived, S::Challenged, Operation::RecordDecision, Guard::DecisionChallenge),
    rule(S::UnderEvaluation, S::Approved, Operation::RecordDecision, Guard::DecisionApprove),
    rule(S::UnderEvaluation, S::Rejected, Operation::RecordDecision, Guard::DecisionReject),
    rule(S::UnderEvaluation, S::Challenged, Operation::RecordDecision, Guard::DecisionChallenge),
    rule(S::Approved, S::Escalated, Operation::Escalate, Guard::DisclosureOrPreservation),
    rule(S::Approved, S::ActionApplied, Operation::ApplyAction, Guard::Always),
    rule(S::Escalated, S::ActionApplied, Operation::ApplyAction, Guard::Always),
    rule(S::Rejected, S::ResponseIssued, Operation::IssueResponse, Guard::Always),
    rule(S::Challenged, S::ResponseIssued, Operation::IssueResponse, Guard::Always),
    rule(S::Challenged, S::UnderEvaluation, Operation::ReopenEvaluation, Guard::NotYetReevaluated),
    rule(S::ActionApplied, S::ResponseIssued, Operation::IssueResponse, Guard::Always),
    rule(S::ResponseIssued, S::Closed, Operation::Acknowledge, Guard::Always),
    rule(S::ResponseIssued, S::Closed, Operation::ExpireAcknowledgment, Guard::Always),
];

/// The transition table as a document the UI can render.
pub fn transition_table() -> &'static [TransitionRule] {
    TRANSITIONS
}

fn guard_holds(guard: Guard, state: &WorkflowState, request: &LeRequest) -> bool {
    match guard {
        Guard::Always | Guard::DecisionApprove | Guard::DecisionReject | Guard::DecisionChallenge => true,
        Guard::DisclosureOrPreservation => {
            matches!(request.objective, Objective::Disclosure | Objective::Preservation)
        }
        Guard::NotYetReevaluated => !state.reevaluated,
    }
}

/// Successor states reachable from `state` under the table's guards.
pub fn allowed_transitions(state: &WorkflowState, request: &LeRequest) -> BTreeSet<StateValue> {
    TRANSITIONS
        .iter()
        .filter(|r| r.from == state.value && guard_holds(r.guard, state, request))
        .map(|r| r.to)
        .collect()
}

/// Whether provisional measures may be taken on a request of this kind.
pub fn provisional_eligible(regime: Regime, objective: Objective) -> bool {
    regime == Regime::Emergency || objective == Objective::Preservation
}

pub fn certificate_template(request: &LeRequest) -> String {
    format!(
        "CERTIFICATE OF RECORDS\n\
         In response to request {} from {} ({}), the provider does not offer live testimony. \
         This certificate attests that any records produced were kept in the regular course of \
         business and are true copies of the originals.",
        request.request_id, request.requester.agency_name, request.requester.agent_name
    )
}

/// A request plus everything the lifecycle has attached to it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub request: LeRequest,
    pub owner: PrincipalId,
    pub documents: Vec<EvidenceId>,
    pub history: Vec<HistoryEntry>,
    pub decisions: Vec<EvaluationDecision>,
    pub provisional: Vec<ProvisionalMeasure>,
    pub preservation: Option<PreservationOrder>,
    pub action_summary: Option<String>,
    pub case_id: Option<CaseId>,
    pub response: Option<FormalResponse>,
}

impl RequestRecord {
    /// Submit a freshly validated request: PreSubmitted → AwaitingDocuments.
    pub fn submit(mut request: LeRequest, owner: PrincipalId, at: Timestamp) -> Result<Self, WorkflowError> {
        if request.state.value != S::PreSubmitted {
            return Err(WorkflowError::InvalidState {
                from: request.state.value,
                operation: Operation::Submit,
            });
        }
        request.state = WorkflowState {
            value: S::AwaitingDocuments,
            provisional_active: false,
            reevaluated: false,
        };
        Ok(Self {
            history: vec![
                HistoryEntry { state: S::PreSubmitted, at: request.submitted_at },
                HistoryEntry { state: S::AwaitingDocuments, at },
            ],
            request,
            owner,
            documents: Vec::new(),
            decisions: Vec::new(),
            provisional: Vec::new(),
            preservation: None,
            action_summary: None,
            case_id: None,
            response: None,
        })
    }

    pub fn id(&self) -> RequestId {
        self.request.request_id
    }

    pub fn state(&self) -> StateValue {
        self.request.state.value
    }

    pub fn allowed(&self) -> BTreeSet<StateValue> {
        allowed_transitions(&self.request.state, &self.request)
    }

    /// The decision currently in force (the latest one).
    pub fn effective_decision(&self) -> Option<&EvaluationDecision> {
        self.decisions.last()
    }

    fn require(&self, operation: Operation, to: StateValue) -> Result<(), WorkflowError> {
        let ok = TRANSITIONS.iter().any(|r| {
            r.from == self.state()
                && r.to == to
                && r.operation == operation
                && guard_holds(r.guard, &self.request.state, &self.request)
        });
        if ok {
            Ok(())
        } else {
            Err(WorkflowError::InvalidState {
                from: self.state(),
                operation,
            })
        }
    }

    fn enter(&mut self, to: StateValue, at: Timestamp) {
        self.request.state.value = to;
        if matches!(to, S::ResponseIssued | S::Closed) {
            self.request.state.provisional_active = false;
        }
        self.history.push(HistoryEntry { state: to, at });
    }

    pub fn receive_documents(&mut self, refs: &[EvidenceId], at: Timestamp) -> Result<(), WorkflowError> {
        self.require(Operation::ReceiveDocuments, S::DocumentsReceived)?;
        if refs.is_empty() {
            return Err(WorkflowError::NoDocuments);
        }
        for r in refs {
            if !self.documents.contains(r) {
                self.documents.push(r.clone());
            }
        }
        self.enter(S::DocumentsReceived, at);
        Ok(())
    }

    pub fn begin_evaluation(&mut self, at: Timestamp) -> Result<(), WorkflowError> {
        self.require(Operation::BeginEvaluation, S::UnderEvaluation)?;
        self.enter(S::UnderEvaluation, at);
        Ok(())
    }

    pub fn reopen_evaluation(&mut self, at: Timestamp) -> Result<(), WorkflowError> {
        self.require(Operation::ReopenEvaluation, S::UnderEvaluation)?;
        self.request.state.reevaluated = true;
        self.enter(S::UnderEvaluation, at);
        Ok(())
    }

    pub fn apply_provisional_measures(
        &mut self,
        measure: &str,
        actor: PrincipalId,
        at: Timestamp,
        config: &WorkflowConfig,
    ) -> Result<ProvisionalOutcome, WorkflowError> {
        if !provisional_eligible(self.request.regime, self.request.objective) {
            return Err(WorkflowError::NotEligible);
        }
        if matches!(self.state(), S::PreSubmitted | S::Rejected | S::ResponseIssued | S::Closed) {
            return Err(WorkflowError::InvalidState {
                from: self.state(),
                operation: Operation::ProvisionalMeasures,
            });
        }
        let outcome = if self.request.objective == Objective::Preservation {
            if self.preservation.is_some() {
                return Err(WorkflowError::PreservationAlreadyOrdered);
            }
            let order = PreservationOrder {
                request_id: self.id(),
                issued_at: at,
                deadline: at.plus_days(config.preservation_delay_days),
                extended: false,
            };
            self.preservation = Some(order.clone());
            ProvisionalOutcome::PreservationOrder(order)
        } else {
            ProvisionalOutcome::Acknowledged
        };
        self.request.state.provisional_active = true;
        self.provisional.push(ProvisionalMeasure {
            measure: measure.to_owned(),
            actor,
            at,
        });
        Ok(outcome)
    }

    pub fn extend_preservation(&mut self, config: &WorkflowConfig) -> Result<PreservationOrder, WorkflowError> {
        let order = self.preservation.as_mut().ok_or(WorkflowError::NoPreservationOrder)?;
        if order.extended {
            return Err(WorkflowError::ExtensionExhausted);
        }
        order.deadline = order.deadline.plus_days(config.preservation_extension_days);
        order.extended = true;
        Ok(order.clone())
    }

    pub fn record_decision(&mut self, decision: EvaluationDecision) -> Result<StateValue, WorkflowError> {
        let to = match decision.decision {
            Decision::Approve => S::Approved,
            Decision::Reject => S::Rejected,
            Decision::Challenge => S::Challenged,
        };
        self.require(Operation::RecordDecision, to)?;
        if !decision.decided_by.iter().any(|s| s.role == Role::CrisisManager) {
            return Err(WorkflowError::MissingCrisisManager);
        }
        if decision.decision == Decision::Approve
            && self.request.objective == Objective::Disclosure
            && decision.response_data_class == DataClass::None
        {
            return Err(WorkflowError::MissingDataClass);
        }
        let at = decision.decided_at;
        self.decisions.push(decision);
        self.enter(to, at);
        Ok(to)
    }

    /// Approved → Escalated. `override_guard` lets a crisis manager escalate
    /// an approved request whose objective would not normally escalate.
    pub fn escalate(&mut self, case_id: CaseId, override_guard: bool, at: Timestamp) -> Result<(), WorkflowError> {
        let invalid = WorkflowError::InvalidState {
            from: self.state(),
            operation: Operation::Escalate,
        };
        if self.case_id.is_some() || self.state() != S::Approved {
            return Err(invalid);
        }
        if !override_guard {
            self.require(Operation::Escalate, S::Escalated)?;
        }
        self.case_id = Some(case_id);
        self.enter(S::Escalated, at);
        Ok(())
    }

    pub fn apply_action(&mut self, summary: &str, at: Timestamp) -> Result<(), WorkflowError> {
        self.require(Operation::ApplyAction, S::ActionApplied)?;
        self.action_summary = Some(summary.to_owned());
        self.enter(S::ActionApplied, at);
        Ok(())
    }

    pub fn issue_response(
        &mut self,
        body: &str,
        suppress_target_notification: bool,
        at: Timestamp,
    ) -> Result<&FormalResponse, WorkflowError> {
        self.require(Operation::IssueResponse, S::ResponseIssued)?;
        let decision = self.effective_decision();
        let data_class = match (self.request.objective, decision) {
            (Objective::Disclosure, Some(d)) if d.decision == Decision::Approve => d.response_data_class,
            _ => DataClass::None,
        };
        let (kind, body) = match self.state() {
            S::Rejected => {
                let grounds = decision.map(|d| d.public_summary.as_str()).unwrap_or("");
                (ResponseKind::Refusal, format!("{body}\nGrounds for refusal: {grounds}"))
            }
            S::Challenged => (ResponseKind::Challenge, body.to_owned()),
            _ => match self.request.objective {
                Objective::Testimony => (ResponseKind::Certificate, certificate_template(&self.request)),
                Objective::Disclosure => (ResponseKind::Disclosure, body.to_owned()),
                Objective::Preservation | Objective::Removal => (ResponseKind::ActionNotice, body.to_owned()),
            },
        };
        self.enter(S::ResponseIssued, at);
        self.response = Some(FormalResponse {
            kind,
            body,
            data_class,
            issued_at: at,
            target_notification_suppressed: suppress_target_notification,
        });
        Ok(self.response.as_ref().expect("just set"))
    }

    pub fn acknowledge(&mut self, at: Timestamp) -> Result<(), WorkflowError> {
        self.require(Operation::Acknowledge, S::Closed)?;
        self.enter(S::Closed, at);
        Ok(())
    }

    /// Whether the acknowledgment window of an issued response has elapsed.
    pub fn acknowledgment_expired(&self, now: Timestamp, config: &WorkflowConfig) -> bool {
        match (&self.response, self.state()) {
            (Some(r), S::ResponseIssued) => now >= r.issued_at.plus_days(config.ack_timeout_days),
            _ => false,
        }
    }

    pub fn expire_acknowledgment(&mut self, now: Timestamp, config: &WorkflowConfig) -> Result<(), WorkflowError> {
        self.require(Operation::ExpireAcknowledgment, S::Closed)?;
        if !self.acknowledgment_expired(now, config) {
            return Err(WorkflowError::InvalidState {
                from: self.state(),
                operation: Operation::ExpireAcknowledgment,
            });
        }
        self.enter(S::Closed, now);
        Ok(())
    }

    /// Check the lifecycle invariants over this record's history.
    pub fn check_invariants(&self) -> Result<(), String> {
        let st = &self.request.state;
        if st.provisional_active
            && (!provisional_eligible(self.request.regime, self.request.objective)
                || matches!(st.value, S::ResponseIssued | S::Closed))
        {
            return Err("provisional measures active on an ineligible request".into());
        }
        if !self.provisional.is_empty() && !provisional_eligible(self.request.regime, self.request.objective) {
            return Err("provisional measures recorded on an ineligible request".into());
        }
        if self.history.last().map(|h| h.state) != Some(st.value) {
            return Err("history head does not match state".into());
        }
        // Each step of the history must be an edge of the table (escalation
        // by override is the one step the guard may not cover).
        for w in self.history.windows(2) {
            let edge = TRANSITIONS.iter().any(|r| r.from == w[0].state && r.to == w[1].state);
            if !edge {
                return Err(format!("illegal step {} -> {}", w[0].state, w[1].state));
            }
            if w[1].state == S::ActionApplied && matches!(w[0].state, S::Rejected | S::Challenged) {
                return Err("rejected or challenged request reached ActionApplied".into());
            }
        }
        // No repeats inside a segment delimited by the re-evaluation edge.
        let mut seen: BTreeSet<StateValue> = self.history.first().map(|h| h.state).into_iter().collect();
        for w in self.history.windows(2) {
            if w[0].state == S::Challenged && w[1].state == S::UnderEvaluation {
                seen.clear();
            }
            if !seen.insert(w[1].state) {
                return Err(format!("state {} repeated", w[1].state));
            }
        }
        let approvals = self.decisions.iter().filter(|d| d.decision == Decision::Approve).count();
        if approvals > 1 {
            return Err("more than one approval recorded".into());
        }
        if self.request.objective == Objective::Disclosure
            && approvals == 1
            && self.history.iter().any(|h| h.state == S::ResponseIssued)
        {
            let escalated = self.history.iter().any(|h| h.state == S::Escalated);
            if escalated != self.case_id.is_some() {
                return Err("escalated disclosure must reference exactly one case".into());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{fixtures::scenario_one, validate_submission};

    fn t0() -> Timestamp {
        Timestamp::parse("2024-06-01T09:00:00Z").unwrap()
    }

    fn record(objective: Objective, regime: Regime) -> RequestRecord {
        let mut req = validate_submission(&scenario_one(), t0()).unwrap();
        req.objective = objective;
        req.regime = regime;
        if regime == Regime::Emergency {
            req.narrative = "imminent threat".into();
        }
        RequestRecord::submit(req, PrincipalId::new(), t0()).unwrap()
    }

    fn doc() -> EvidenceId {
        EvidenceId::parse(crate::canonical::ZERO_HASH).unwrap()
    }

    fn decision(d: Decision, class: DataClass, role: Role) -> EvaluationDecision {
        EvaluationDecision {
            decision: d,
            rationale: "reviewed".into(),
            public_summary: "insufficient legal basis".into(),
            decided_by: vec![Signer { principal: PrincipalId::new(), role }],
            decided_at: t0(),
            response_data_class: class,
        }
    }

    fn evaluated(objective: Objective, d: Decision) -> RequestRecord {
        let mut r = record(objective, Regime::Routine);
        r.receive_documents(&[doc()], t0()).unwrap();
        r.record_decision(decision(d, DataClass::Content, Role::CrisisManager)).unwrap();
        r
    }

    #[test]
    fn submit_moves_to_awaiting_documents() {
        let r = record(Objective::Disclosure, Regime::Routine);
        assert_eq!(r.state(), S::AwaitingDocuments);
    }

    #[test]
    fn documents_single_transition() {
        let mut r = record(Objective::Disclosure, Regime::Routine);
        assert_eq!(r.receive_documents(&[], t0()), Err(WorkflowError::NoDocuments));
        r.receive_documents(&[doc()], t0()).unwrap();
        assert_eq!(r.state(), S::DocumentsReceived);
        assert!(matches!(
            r.receive_documents(&[doc()], t0()),
            Err(WorkflowError::InvalidState { .. })
        ));
    }

    #[test]
    fn preservation_order_deadline() {
        let mut r = record(Objective::Preservation, Regime::Routine);
        let cfg = WorkflowConfig::default();
        let out = r.apply_provisional_measures("freeze account", PrincipalId::new(), t0(), &cfg).unwrap();
        let ProvisionalOutcome::PreservationOrder(order) = out else { panic!("expected order") };
        assert_eq!(order.deadline, Timestamp::parse("2024-08-30T09:00:00Z").unwrap());
        assert!(r.request.state.provisional_active);
        let ext = r.extend_preservation(&cfg).unwrap();
        assert_eq!(ext.deadline, Timestamp::parse("2024-11-28T09:00:00Z").unwrap());
        assert_eq!(r.extend_preservation(&cfg), Err(WorkflowError::ExtensionExhausted));
    }

    #[test]
    fn provisional_guards() {
        let cfg = WorkflowConfig::default();
        let mut removal = record(Objective::Removal, Regime::Routine);
        assert_eq!(
            removal.apply_provisional_measures("x", PrincipalId::new(), t0(), &cfg),
            Err(WorkflowError::NotEligible)
        );
        let mut emergency = record(Objective::Disclosure, Regime::Emergency);
        assert_eq!(
            emergency.apply_provisional_measures("x", PrincipalId::new(), t0(), &cfg),
            Ok(ProvisionalOutcome::Acknowledged)
        );
        assert!(emergency.request.state.provisional_active);
    }

    #[test]
    fn decision_guards() {
        let mut r = record(Objective::Disclosure, Regime::Routine);
        r.receive_documents(&[doc()], t0()).unwrap();
        assert_eq!(
            r.record_decision(decision(Decision::Approve, DataClass::Content, Role::LegalAdvisor)),
            Err(WorkflowError::MissingCrisisManager)
        );
        assert_eq!(
            r.record_decision(decision(Decision::Approve, DataClass::None, Role::CrisisManager)),
            Err(WorkflowError::MissingDataClass)
        );
        assert_eq!(
            r.record_decision(decision(Decision::Approve, DataClass::Content, Role::CrisisManager)),
            Ok(S::Approved)
        );
        assert!(r
            .record_decision(decision(Decision::Approve, DataClass::Content, Role::CrisisManager))
            .is_err());
    }

    #[test]
    fn rejected_only_responds() {
        let mut r = evaluated(Objective::Disclosure, Decision::Reject);
        assert_eq!(r.allowed(), BTreeSet::from([S::ResponseIssued]));
        assert!(r.apply_action("x", t0()).is_err());
        assert!(r.escalate(CaseId::new(), true, t0()).is_err());
        let resp = r.issue_response("We decline.", false, t0()).unwrap();
        assert_eq!(resp.kind, ResponseKind::Refusal);
        assert!(resp.body.contains("insufficient legal basis"));
    }

    #[test]
    fn approved_successors_depend_on_objective() {
        let r = evaluated(Objective::Disclosure, Decision::Approve);
        assert_eq!(r.allowed(), BTreeSet::from([S::Escalated, S::ActionApplied]));
        let r = evaluated(Objective::Removal, Decision::Approve);
        assert_eq!(r.allowed(), BTreeSet::from([S::ActionApplied]));
    }

    #[test]
    fn escalate_once() {
        let mut r = evaluated(Objective::Disclosure, Decision::Approve);
        r.escalate(CaseId::new(), false, t0()).unwrap();
        assert!(r.escalate(CaseId::new(), false, t0()).is_err());
        let mut removal = evaluated(Objective::Removal, Decision::Approve);
        assert!(removal.escalate(CaseId::new(), false, t0()).is_err());
        removal.escalate(CaseId::new(), true, t0()).unwrap();
        assert_eq!(removal.state(), S::Escalated);
    }

    #[test]
    fn testimony_gets_certificate() {
        let mut r = evaluated(Objective::Testimony, Decision::Approve);
        r.apply_action("certificate prepared", t0()).unwrap();
        let resp = r.issue_response("ignored body", false, t0()).unwrap();
        assert_eq!(resp.kind, ResponseKind::Certificate);
        assert!(resp.body.starts_with("CERTIFICATE OF RECORDS"));
    }

    #[test]
    fn closed_is_terminal() {
        let mut r = evaluated(Objective::Removal, Decision::Approve);
        r.apply_action("removed", t0()).unwrap();
        r.issue_response("done", true, t0()).unwrap();
        let cfg = WorkflowConfig::default();
        assert!(r.expire_acknowledgment(t0().plus_days(29), &cfg).is_err());
        r.expire_acknowledgment(t0().plus_days(30), &cfg).unwrap();
        assert_eq!(r.state(), S::Closed);
        assert!(r.allowed().is_empty());
        r.check_invariants().unwrap();
    }

    #[test]
    fn challenge_loops_once() {
        let mut r = evaluated(Objective::Disclosure, Decision::Challenge);
        assert_eq!(r.allowed(), BTreeSet::from([S::ResponseIssued, S::UnderEvaluation]));
        r.reopen_evaluation(t0()).unwrap();
        r.record_decision(decision(Decision::Challenge, DataClass::None, Role::CrisisManager)).unwrap();
        assert_eq!(r.allowed(), BTreeSet::from([S::ResponseIssued]));
        assert!(r.reopen_evaluation(t0()).is_err());
        r.check_invariants().unwrap();
    }

    #[test]
    fn table_covers_every_non_terminal_state() {
        for s in StateValue::ALL {
            let has_out = TRANSITIONS.iter().any(|r| r.from == s);
            assert_eq!(has_out, s != S::Closed, "{s}");
        }
    }
}
