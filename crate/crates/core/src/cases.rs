//! The per-investigation dossier opened when a request is escalated.
//!
//! Every mutation is recorded as an [`AuditEntry`] and applied through the
//! same code path used by [`Case::replay`], so the participant, evidence,
//! document and task lists are always a function of the audit trail.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::domain::Role;
use crate::ids::{CaseId, EvidenceId, PrincipalId, RequestId, TaskId};
use crate::time::Timestamp;
use crate::workflow::StateValue;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseStatus {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub principal: PrincipalId,
    pub role: Role,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocumentKind {
    RequestScan,
    EvaluationReport,
    BriefingMemo,
    ForensicReport,
    CustodyExport,
    Invoice,
    ResponseLetter,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseDocument {
    pub doc_id: EvidenceId,
    pub kind: DocumentKind,
    pub uploaded_by: PrincipalId,
    pub uploaded_at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Open,
    Done,
    Cancelled,
}

impl TaskStatus {
    pub fn is_terminal(self) -> bool {
        self != TaskStatus::Open
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub task_id: TaskId,
    pub case_id: CaseId,
    pub description: String,
    pub assignee_role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub due: Option<Timestamp>,
    pub status: TaskStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AuditAction {
    Opened { request_id: RequestId },
    ParticipantAdded { participant: Participant },
    EvidenceLinked { evidence_id: EvidenceId },
    DocumentAttached { document: CaseDocument },
    TaskAssigned { assignment: Assignment },
    TaskUpdated { task_id: TaskId, status: TaskStatus },
    /// Chains of every linked item, verified when the case closed.
    Closed { verified_chains: Vec<EvidenceId> },
}

impl AuditAction {
    pub fn summary(&self) -> String {
        match self {
            AuditAction::Opened { request_id } => format!("case opened for request {request_id}"),
            AuditAction::ParticipantAdded { participant } => {
                format!("participant {} added as {}", participant.principal, participant.role.as_str())
            }
            AuditAction::EvidenceLinked { evidence_id } => format!("evidence {evidence_id} linked"),
            AuditAction::DocumentAttached { document } => {
                format!("{} {} attached", kind_name(document.kind), document.doc_id)
            }
            AuditAction::TaskAssigned { assignment } => {
                format!("task {} assigned to {}", assignment.task_id, assignment.assignee_role.as_str())
            }
            AuditAction::TaskUpdated { task_id, status } => format!("task {task_id} marked {status:?}"),
            AuditAction::Closed { verified_chains } => {
                format!("case closed, {} custody chains verified", verified_chains.len())
            }
        }
    }
}

fn kind_name(kind: DocumentKind) -> String {
    serde_json::to_value(kind).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u64,
    pub case_id: CaseId,
    pub actor: PrincipalId,
    pub action: AuditAction,
    pub timestamp: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CaseError {
    #[error("NotFound({0})")]
    NotFound(CaseId),
    #[error("CaseClosed({0})")]
    CaseClosed(CaseId),
    #[error("DuplicateCase: request {0} already has a case")]
    DuplicateCase(RequestId),
    #[error("InvalidRequestState: request is {0}, expected Escalated")]
    InvalidRequestState(StateValue),
    #[error("UnknownDocument({0})")]
    UnknownDocument(EvidenceId),
    #[error("UnknownTask({0})")]
    UnknownTask(TaskId),
    #[error("TaskTerminal: task {0} is already done or cancelled")]
    TaskTerminal(TaskId),
    #[error("OpenTasks: {0} assignments still open")]
    OpenTasks(usize),
    #[error("MissingForensicReport: evidence is linked but no forensic report is attached")]
    MissingForensicReport,
    #[error("ChainBroken({evidence_id}) at seq {seq}")]
    ChainBroken { evidence_id: EvidenceId, seq: u64 },
    #[error("Forbidden: {0}")]
    Forbidden(String),
    #[error("CorruptAudit: {0}")]
    CorruptAudit(String),
}

impl CaseError {
    pub fn name(&self) -> &'static str {
        match self {
            CaseError::NotFound(_) => "NotFound",
            CaseError::CaseClosed(_) => "CaseClosed",
            CaseError::DuplicateCase(_) => "DuplicateCase",
            CaseError::InvalidRequestState(_) => "InvalidRequestState",
            CaseError::UnknownDocument(_) => "UnknownDocument",
            CaseError::UnknownTask(_) => "UnknownTask",
            CaseError::TaskTerminal(_) => "TaskTerminal",
            CaseError::OpenTasks(_) => "OpenTasks",
            CaseError::MissingForensicReport => "MissingForensicReport",
            CaseError::ChainBroken { .. } => "ChainBroken",
            CaseError::Forbidden(_) => "Forbidden",
            CaseError::CorruptAudit(_) => "CorruptAudit",
        }
    }
}

/// Roles allowed to read a case. Requesters never see cases.
pub fn can_read(role: Role) -> bool {
    matches!(role, Role::CrisisManager | Role::ForensicExpert | Role::LegalAdvisor | Role::Admin)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Case {
    pub case_id: CaseId,
    pub request_id: RequestId,
    pub opened_at: Timestamp,
    pub status: CaseStatus,
    pub participants: Vec<Participant>,
    pub evidence_ids: Vec<EvidenceId>,
    pub document_ids: Vec<EvidenceId>,
    pub documents: Vec<CaseDocument>,
    pub tasks: Vec<Assignment>,
    pub audit: Vec<AuditEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed_at: Option<Timestamp>,
}

impl Case {
    /// Open a case. The caller checks the request is Escalated and has no
    /// case yet (see [`check_can_open`]).
    pub fn open(case_id: CaseId, request_id: RequestId, opener: Participant, at: Timestamp) -> Self {
        let mut case = Self::empty(case_id, request_id, at);
        case.record(opener.principal, AuditAction::Opened { request_id }, at).expect("new case is open");
        case.record(opener.principal, AuditAction::ParticipantAdded { participant: opener }, at)
            .expect("new case is open");
        case
    }

    fn empty(case_id: CaseId, request_id: RequestId, opened_at: Timestamp) -> Self {
        Self {
            case_id,
            request_id,
            opened_at,
            status: CaseStatus::Open,
            participants: vec![],
            evidence_ids: vec![],
            document_ids: vec![],
            documents: vec![],
            tasks: vec![],
            audit: vec![],
            closed_at: None,
        }
    }

    /// Rebuild a case from its audit trail alone.
    pub fn replay(audit: &[AuditEntry]) -> Result<Self, CaseError> {
        let first = audit.first().ok_or_else(|| CaseError::CorruptAudit("empty audit trail".into()))?;
        let AuditAction::Opened { request_id } = &first.action else {
            return Err(CaseError::CorruptAudit("first entry is not an opening".into()));
        };
        let mut case = Self::empty(first.case_id, *request_id, first.timestamp);
        for (i, e) in audit.iter().enumerate() {
            if e.seq != i as u64 || e.case_id != case.case_id {
                return Err(CaseError::CorruptAudit(format!("entry {i} out of sequence")));
            }
            if i > 0 && matches!(e.action, AuditAction::Opened { .. }) {
                return Err(CaseError::CorruptAudit(format!("entry {i} reopens the case")));
            }
            case.record(e.actor, e.action.clone(), e.timestamp)?;
        }
        Ok(case)
    }

    pub fn is_open(&self) -> bool {
        self.status == CaseStatus::Open
    }

    fn ensure_open(&self) -> Result<(), CaseError> {
        if self.is_open() {
            Ok(())
        } else {
            Err(CaseError::CaseClosed(self.case_id))
        }
    }

    /// Validate `action` against the current case, apply it, and append the
    /// audit entry. Nothing changes on error.
    fn record(&mut self, actor: PrincipalId, action: AuditAction, at: Timestamp) -> Result<(), CaseError> {
        self.ensure_open()?;
        match &action {
            AuditAction::Opened { .. } => {}
            AuditAction::ParticipantAdded { participant } => {
                if !self.participants.contains(participant) {
                    self.participants.push(participant.clone());
                }
            }
            AuditAction::EvidenceLinked { evidence_id } => {
                if !self.evidence_ids.contains(evidence_id) {
                    self.evidence_ids.push(evidence_id.clone());
                }
            }
            AuditAction::DocumentAttached { document } => {
                if !self.document_ids.contains(&document.doc_id) {
                    self.document_ids.push(document.doc_id.clone());
                }
                self.documents.push(document.clone());
            }
            AuditAction::TaskAssigned { assignment } => {
                if assignment.status != TaskStatus::Open || assignment.case_id != self.case_id {
                    return Err(CaseError::CorruptAudit("new task must be open and belong to this case".into()));
                }
                self.tasks.push(assignment.clone());
            }
            AuditAction::TaskUpdated { task_id, status } => {
                let task = self.tasks.iter_mut().find(|t| t.task_id == *task_id).ok_or(CaseError::UnknownTask(*task_id))?;
                if task.status.is_terminal() || !status.is_terminal() {
                    return Err(CaseError::TaskTerminal(*task_id));
                }
                task.status = *status;
            }
            AuditAction::Closed { .. } => {
                let open = self.tasks.iter().filter(|t| !t.status.is_terminal()).count();
                if open > 0 {
                    return Err(CaseError::OpenTasks(open));
                }
                if !self.evidence_ids.is_empty() && !self.has_forensic_report() {
                    return Err(CaseError::MissingForensicReport);
                }
                self.status = CaseStatus::Closed;
                self.closed_at = Some(at);
            }
        }
        self.audit.push(AuditEntry { seq: self.audit.len() as u64, case_id: self.case_id, actor, action, timestamp: at });
        Ok(())
    }

    pub fn has_forensic_report(&self) -> bool {
        self.documents.iter().any(|d| d.kind == DocumentKind::ForensicReport)
    }

    pub fn task(&self, id: &TaskId) -> Option<&Assignment> {
        self.tasks.iter().find(|t| t.task_id == *id)
    }

    pub fn add_participant(&mut self, participant: Participant, actor: PrincipalId, at: Timestamp) -> Result<(), CaseError> {
        if self.participants.contains(&participant) {
            return self.ensure_open();
        }
        self.record(actor, AuditAction::ParticipantAdded { participant }, at)
    }

    /// Link evidence whose chain the caller has verified. Linking twice is a no-op.
    pub fn link_evidence(&mut self, evidence_id: EvidenceId, actor: PrincipalId, at: Timestamp) -> Result<bool, CaseError> {
        self.ensure_open()?;
        if self.evidence_ids.contains(&evidence_id) {
            return Ok(false);
        }
        self.record(actor, AuditAction::EvidenceLinked { evidence_id }, at)?;
        Ok(true)
    }

    pub fn add_report(&mut self, document: CaseDocument) -> Result<(), CaseError> {
        let (actor, at) = (document.uploaded_by, document.uploaded_at);
        self.record(actor, AuditAction::DocumentAttached { document }, at)
    }

    pub fn assign_task(
        &mut self,
        task_id: TaskId,
        description: &str,
        assignee_role: Role,
        due: Option<Timestamp>,
        actor: PrincipalId,
        at: Timestamp,
    ) -> Result<Assignment, CaseError> {
        let assignment = Assignment {
            task_id,
            case_id: self.case_id,
            description: description.to_owned(),
            assignee_role,
            due,
            status: TaskStatus::Open,
        };
        self.record(actor, AuditAction::TaskAssigned { assignment: assignment.clone() }, at)?;
        Ok(assignment)
    }

    pub fn update_task(&mut self, task_id: TaskId, status: TaskStatus, actor: PrincipalId, at: Timestamp) -> Result<(), CaseError> {
        self.record(actor, AuditAction::TaskUpdated { task_id, status }, at)
    }

    /// Close the case. `verified_chains` are the linked items whose chains
    /// the caller has just verified; every linked item must be among them.
    pub fn close(&mut self, verified_chains: Vec<EvidenceId>, actor: PrincipalId, at: Timestamp) -> Result<(), CaseError> {
        if let Some(missing) = self.evidence_ids.iter().find(|id| !verified_chains.contains(id)) {
            return Err(CaseError::ChainBroken { evidence_id: missing.clone(), seq: 0 });
        }
        self.record(actor, AuditAction::Closed { verified_chains }, at)
    }

    /// The canonical dossier: case, document index and custody chain heads.
    pub fn dossier(&self, custody_heads: &BTreeMap<EvidenceId, String>) -> Value {
        json!({
            "case": self,
            "documents": self.documents.iter().map(|d| json!({
                "doc_id": d.doc_id,
                "kind": d.kind,
                "uploaded_by": d.uploaded_by,
                "uploaded_at": d.uploaded_at,
            })).collect::<Vec<_>>(),
            "custody_heads": custody_heads,
        })
    }
}

/// Preconditions for opening a case on a request.
pub fn check_can_open(request_id: RequestId, state: StateValue, existing: Option<CaseId>) -> Result<(), CaseError> {
    if existing.is_some() {
        return Err(CaseError::DuplicateCase(request_id));
    }
    if state != StateValue::Escalated {
        return Err(CaseError::InvalidRequestState(state));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::canonical::sha256_hex;

    fn t(n: i64) -> Timestamp {
        Timestamp::from_millis(1_700_000_000_000 + n)
    }

    fn eid(s: &str) -> EvidenceId {
        EvidenceId::parse(&sha256_hex(s.as_bytes())).unwrap()
    }

    fn opened() -> (Case, PrincipalId) {
        let cm = PrincipalId::new();
        let case = Case::open(CaseId::new(), RequestId::new(), Participant { principal: cm, role: Role::CrisisManager }, t(0));
        (case, cm)
    }

    fn doc(kind: DocumentKind, by: PrincipalId) -> CaseDocument {
        CaseDocument { doc_id: eid(&format!("{kind:?}")), kind, uploaded_by: by, uploaded_at: t(5) }
    }

    #[test]
    fn open_preconditions() {
        let r = RequestId::new();
        check_can_open(r, StateValue::Escalated, None).unwrap();
        assert_eq!(check_can_open(r, StateValue::Escalated, Some(CaseId::new())), Err(CaseError::DuplicateCase(r)));
        assert_eq!(
            check_can_open(r, StateValue::UnderEvaluation, None),
            Err(CaseError::InvalidRequestState(StateValue::UnderEvaluation))
        );
        let (case, cm) = opened();
        assert_eq!(case.participants, vec![Participant { principal: cm, role: Role::CrisisManager }]);
        assert_eq!(case.audit.len(), 2);
    }

    #[test]
    fn forensic_report_is_needed_only_with_evidence() {
        let (mut case, cm) = opened();
        case.add_report(doc(DocumentKind::BriefingMemo, cm)).unwrap();
        let mut memo_only = case.clone();
        memo_only.close(vec![], cm, t(9)).unwrap();
        assert_eq!(memo_only.status, CaseStatus::Closed);

        case.link_evidence(eid("db1"), cm, t(6)).unwrap();
        assert!(!case.link_evidence(eid("db1"), cm, t(6)).unwrap());
        assert_eq!(case.close(vec![eid("db1")], cm, t(9)), Err(CaseError::MissingForensicReport));
        case.add_report(doc(DocumentKind::ForensicReport, cm)).unwrap();
        assert!(matches!(case.close(vec![], cm, t(9)), Err(CaseError::ChainBroken { .. })));
        case.close(vec![eid("db1")], cm, t(9)).unwrap();
        assert_eq!(case.closed_at, Some(t(9)));
        assert_eq!(case.link_evidence(eid("db2"), cm, t(10)), Err(CaseError::CaseClosed(case.case_id)));
        assert!(matches!(case.assign_task(TaskId::new(), "x", Role::ForensicExpert, None, cm, t(10)), Err(CaseError::CaseClosed(_))));
    }

    #[test]
    fn tasks_block_closure_and_terminal_is_final() {
        let (mut case, cm) = opened();
        let task = case.assign_task(TaskId::new(), "log analysis", Role::ForensicExpert, Some(t(100)), cm, t(1)).unwrap();
        assert_eq!(task.status, TaskStatus::Open);
        assert_eq!(case.close(vec![], cm, t(2)), Err(CaseError::OpenTasks(1)));
        case.update_task(task.task_id, TaskStatus::Done, cm, t(3)).unwrap();
        assert_eq!(case.update_task(task.task_id, TaskStatus::Done, cm, t(4)), Err(CaseError::TaskTerminal(task.task_id)));
        assert_eq!(case.update_task(task.task_id, TaskStatus::Cancelled, cm, t(4)), Err(CaseError::TaskTerminal(task.task_id)));
        let unknown = TaskId::new();
        assert_eq!(case.update_task(unknown, TaskStatus::Done, cm, t(4)), Err(CaseError::UnknownTask(unknown)));
        case.close(vec![], cm, t(5)).unwrap();
    }

    #[test]
    fn readers() {
        assert!(can_read(Role::LegalAdvisor));
        assert!(can_read(Role::Admin));
        assert!(!can_read(Role::LeAgent));
    }

    #[test]
    fn dossier_lists_heads() {
        let (mut case, cm) = opened();
        case.link_evidence(eid("a"), cm, t(1)).unwrap();
        let heads = BTreeMap::from([(eid("a"), "f".repeat(64))]);
        let d = case.dossier(&heads);
        assert_eq!(d["custody_heads"][eid("a").as_str()], "f".repeat(64));
        assert_eq!(d["case"]["case_id"], case.case_id.to_string());
    }

    #[derive(Debug, Clone)]
    enum Op {
        Participant(u8),
        Link(u8),
        Attach(u8, bool),
        Assign,
        Update(u8, bool),
        Close,
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            (0u8..4).prop_map(Op::Participant),
            (0u8..6).prop_map(Op::Link),
            (0u8..6, any::<bool>()).prop_map(|(i, f)| Op::Attach(i, f)),
            Just(Op::Assign),
            (0u8..6, any::<bool>()).prop_map(|(i, d)| Op::Update(i, d)),
            Just(Op::Close),
        ]
    }

    proptest! {
        #[test]
        fn audit_is_dense_and_replays_exactly(ops in prop::collection::vec(op(), 0..40)) {
            let (mut case, cm) = opened();
            let people: Vec<PrincipalId> = (0..4).map(|_| PrincipalId::new()).collect();
            for (n, o) in ops.into_iter().enumerate() {
                let at = t(10 + n as i64);
                let before = case.clone();
                let res = match o {
                    Op::Participant(i) => case.add_participant(Participant { principal: people[i as usize], role: Role::ForensicExpert }, cm, at),
                    Op::Link(i) => case.link_evidence(eid(&i.to_string()), cm, at).map(|_| ()),
                    Op::Attach(i, forensic) => {
                        let kind = if forensic { DocumentKind::ForensicReport } else { DocumentKind::BriefingMemo };
                        case.add_report(CaseDocument { doc_id: eid(&format!("d{i}")), kind, uploaded_by: cm, uploaded_at: at })
                    }
                    Op::Assign => case.assign_task(TaskId::new(), "t", Role::ForensicExpert, None, cm, at).map(|_| ()),
                    Op::Update(i, done) => match case.tasks.get(i as usize).map(|t| t.task_id) {
                        Some(id) => case.update_task(id, if done { TaskStatus::Done } else { TaskStatus::Cancelled }, cm, at),
                        None => Ok(()),
                    },
                    Op::Close => { let ids = case.evidence_ids.clone(); case.close(ids, cm, at) }
                };
                if res.is_err() {
                    prop_assert_eq!(&case, &before);
                }
                prop_assert!(case.audit.iter().enumerate().all(|(i, e)| e.seq == i as u64));
                prop_assert!(case.audit.len() >= before.audit.len());
                prop_assert_eq!(&case.audit[..before.audit.len()], &before.audit[..]);
            }
            prop_assert_eq!(Case::replay(&case.audit).unwrap(), case);
        }
    }
}
