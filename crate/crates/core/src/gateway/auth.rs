//! Principals, bearer tokens and the role matrix.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::canonical::sha256_hex;
use crate::domain::Role;
use crate::ids::PrincipalId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Principal {
    pub principal_id: PrincipalId,
    pub role: Role,
    /// SHA-256 of the bearer token. The token itself is never stored.
    pub credential_ref: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub display_name: String,
}

pub fn hash_token(token: &str) -> String {
    sha256_hex(token.as_bytes())
}

/// A fresh random bearer token.
pub fn generate_token() -> String {
    format!("{}{}", uuid::Uuid::new_v4().simple(), uuid::Uuid::new_v4().simple())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    SubmitRequest,
    ReadRequest,
    ListRequests,
    UploadDocument,
    ReceiveDocuments,
    BeginEvaluation,
    RecordDecision,
    ProvisionalMeasures,
    ExtendPreservation,
    Escalate,
    ApplyAction,
    IssueResponse,
    AcknowledgeResponse,
    ReadTicket,
    PostTicketMessage,
    ReadNotifications,
    ReadCase,
    LinkEvidence,
    AttachCaseDocument,
    AssignTask,
    UpdateTask,
    CloseCase,
    ExportCase,
    ReadEvidence,
    VerifyEvidence,
    AuthorizeDestruction,
    ListAgents,
    LaunchFlow,
    ReadFlow,
    QueryLogs,
    TransparencyReport,
    ComputeInvoice,
    ManagePrincipals,
    ReadWorkflowTable,
}

impl Action {
    pub const ALL: [Action; 34] = [
        Action::SubmitRequest,
        Action::ReadRequest,
        Action::ListRequests,
        Action::UploadDocument,
        Action::ReceiveDocuments,
        Action::BeginEvaluation,
        Action::RecordDecision,
        Action::ProvisionalMeasures,
        Action::ExtendPreservation,
        Action::Escalate,
        Action::ApplyAction,
        Action::IssueResponse,
        Action::AcknowledgeResponse,
        Action::ReadTicket,
        Action::PostTicketMessage,
        Action::ReadNotifications,
        Action::ReadCase,
        Action::LinkEvidence,
        Action::AttachCaseDocument,
        Action::AssignTask,
        Action::UpdateTask,
        Action::CloseCase,
        Action::ExportCase,
        Action::ReadEvidence,
        Action::VerifyEvidence,
        Action::AuthorizeDestruction,
        Action::ListAgents,
        Action::LaunchFlow,
        Action::ReadFlow,
        Action::QueryLogs,
        Action::TransparencyReport,
        Action::ComputeInvoice,
        Action::ManagePrincipals,
        Action::ReadWorkflowTable,
    ];

    pub fn as_str(&self) -> String {
        serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
    }
}

/// One cell of the role matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Access {
    Allow,
    /// Allowed only on resources the principal owns.
    Own,
    Deny,
}

/// The resource an action targets, as far as ownership matters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resource {
    /// Collection-level or system-level actions.
    Global,
    /// A request or ticket owned by the given principal.
    OwnedBy(PrincipalId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuthzDecision {
    Allow,
    Deny,
}

/// Every (role, action) pair has an explicit cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoleMatrix {
    cells: BTreeMap<(Role, Action), Access>,
}

impl Default for RoleMatrix {
    fn default() -> Self {
        use Access::{Allow as A, Deny as D, Own as O};
        use Action::*;
        // Columns: le_agent, crisis_manager, forensic_expert, legal_advisor, admin.
        let rows: [(Action, [Access; 5]); 34] = [
            (SubmitRequest, [A, D, D, D, D]),
            (ReadRequest, [O, A, A, A, A]),
            (ListRequests, [O, A, A, A, A]),
            (UploadDocument, [A, A, A, A, A]),
            (ReceiveDocuments, [D, A, A, A, A]),
            (BeginEvaluation, [D, A, D, A, D]),
            (RecordDecision, [D, A, D, D, D]),
            (ProvisionalMeasures, [D, A, D, D, D]),
            (ExtendPreservation, [D, A, D, D, D]),
            (Escalate, [D, A, D, D, D]),
            (ApplyAction, [D, A, D, D, D]),
            (IssueResponse, [D, A, D, D, D]),
            (AcknowledgeResponse, [O, D, D, D, D]),
            (ReadTicket, [O, A, A, A, A]),
            (PostTicketMessage, [O, A, A, A, A]),
            (ReadNotifications, [O, A, A, A, A]),
            (ReadCase, [D, A, A, A, A]),
            (LinkEvidence, [D, A, A, D, D]),
            (AttachCaseDocument, [D, A, A, A, D]),
            (AssignTask, [D, A, D, D, D]),
            (UpdateTask, [D, A, A, D, D]),
            (CloseCase, [D, A, D, D, D]),
            (ExportCase, [D, A, A, D, D]),
            (ReadEvidence, [D, A, A, D, D]),
            (VerifyEvidence, [D, A, A, A, A]),
            (AuthorizeDestruction, [D, A, D, A, A]),
            (ListAgents, [D, A, A, D, A]),
            (LaunchFlow, [D, A, A, D, D]),
            (ReadFlow, [D, A, A, D, D]),
            (QueryLogs, [D, D, A, D, D]),
            (TransparencyReport, [D, A, D, D, A]),
            (ComputeInvoice, [D, D, D, D, A]),
            (ManagePrincipals, [D, D, D, D, A]),
            (ReadWorkflowTable, [A, A, A, A, A]),
        ];
        let mut cells = BTreeMap::new();
        for (action, access) in rows {
            for (role, a) in Role::ALL.iter().zip(access) {
                cells.insert((*role, action), a);
            }
        }
        Self { cells }
    }
}

impl RoleMatrix {
    pub fn access(&self, role: Role, action: Action) -> Access {
        *self.cells.get(&(role, action)).expect("role matrix is total")
    }

    pub fn set(&mut self, role: Role, action: Action, access: Access) {
        self.cells.insert((role, action), access);
    }

    /// Replace one action's row: roles listed get the given access, every
    /// other role is denied.
    pub fn set_row(&mut self, action: Action, grants: &[(Role, Access)]) {
        for role in Role::ALL {
            let access = grants.iter().find(|(r, _)| *r == role).map_or(Access::Deny, |(_, a)| *a);
            self.set(role, action, access);
        }
    }

    pub fn is_total(&self) -> bool {
        Role::ALL.iter().all(|r| Action::ALL.iter().all(|a| self.cells.contains_key(&(*r, *a))))
    }

    pub fn authorize(&self, principal: &Principal, action: Action, resource: Resource) -> AuthzDecision {
        match (self.access(principal.role, action), resource) {
            (Access::Allow, _) => AuthzDecision::Allow,
            (Access::Own, Resource::OwnedBy(owner)) if owner == principal.principal_id => AuthzDecision::Allow,
            _ => AuthzDecision::Deny,
        }
    }

    /// The matrix as `{action: {role: access}}` for display.
    pub fn to_document(&self) -> BTreeMap<String, BTreeMap<&'static str, Access>> {
        Action::ALL
            .iter()
            .map(|a| (a.as_str(), Role::ALL.iter().map(|r| (r.as_str(), self.access(*r, *a))).collect()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn principal(role: Role) -> Principal {
        Principal { principal_id: PrincipalId::new(), role, credential_ref: hash_token("t"), display_name: String::new() }
    }

    #[test]
    fn matrix_is_total_and_action_list_complete() {
        let m = RoleMatrix::default();
        assert!(m.is_total());
        let distinct: std::collections::BTreeSet<_> = Action::ALL.iter().collect();
        assert_eq!(distinct.len(), Action::ALL.len());
    }

    #[test]
    fn ownership_rules() {
        let m = RoleMatrix::default();
        let le = principal(Role::LeAgent);
        let other = PrincipalId::new();
        assert_eq!(m.authorize(&le, Action::ReadRequest, Resource::OwnedBy(le.principal_id)), AuthzDecision::Allow);
        assert_eq!(m.authorize(&le, Action::ReadRequest, Resource::OwnedBy(other)), AuthzDecision::Deny);
        assert_eq!(m.authorize(&le, Action::ReadRequest, Resource::Global), AuthzDecision::Deny);
        assert_eq!(m.authorize(&le, Action::LaunchFlow, Resource::Global), AuthzDecision::Deny);
        assert_eq!(m.authorize(&le, Action::ReadCase, Resource::Global), AuthzDecision::Deny);
    }

    #[test]
    fn staff_rules() {
        let m = RoleMatrix::default();
        let la = principal(Role::LegalAdvisor);
        assert_eq!(m.authorize(&la, Action::ReadCase, Resource::Global), AuthzDecision::Allow);
        assert_eq!(m.authorize(&la, Action::AttachCaseDocument, Resource::Global), AuthzDecision::Allow);
        assert_eq!(m.authorize(&la, Action::LinkEvidence, Resource::Global), AuthzDecision::Deny);
        assert_eq!(m.authorize(&la, Action::CloseCase, Resource::Global), AuthzDecision::Deny);
        let fe = principal(Role::ForensicExpert);
        assert_eq!(m.authorize(&fe, Action::LaunchFlow, Resource::Global), AuthzDecision::Allow);
        assert_eq!(m.authorize(&fe, Action::QueryLogs, Resource::Global), AuthzDecision::Allow);
        assert_eq!(m.authorize(&fe, Action::RecordDecision, Resource::Global), AuthzDecision::Deny);
    }

    #[test]
    fn row_override() {
        let mut m = RoleMatrix::default();
        m.set_row(Action::QueryLogs, &[(Role::CrisisManager, Access::Allow)]);
        assert_eq!(m.access(Role::CrisisManager, Action::QueryLogs), Access::Allow);
        assert_eq!(m.access(Role::ForensicExpert, Action::QueryLogs), Access::Deny);
        assert!(m.is_total());
    }

    #[test]
    fn tokens_hash() {
        let t = generate_token();
        assert_eq!(t.len(), 64);
        assert_eq!(hash_token(&t).len(), 64);
        assert_ne!(hash_token(&t), t);
    }
}
