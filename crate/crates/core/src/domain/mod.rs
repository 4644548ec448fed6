//! Core request types, submission validation and priority classification.
//!
//! A submission is a JSON document. [`validate_submission`] walks the whole
//! document and reports every field-level problem at once, tagged with the
//! pre-submission block it belongs to:
//!
//! | block | contents |
//! |-------|----------|
//! | a | agent contact (`agent_name`, `agent_email`, `agent_phone`, `badge_id`) |
//! | b | superior contact (`superior_name`, `superior_contact`) |
//! | c | agency contact (`agency_name`, `agency_country`, `jurisdiction`) |
//! | d | legal documents (`instruments`) |
//! | e | target information (`target`) |

mod iso3166;
pub mod schema;

use std::fmt;
use std::net::IpAddr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::ids::{EvidenceId, RequestId};
use crate::time::Timestamp;
use crate::workflow::WorkflowState;

pub use iso3166::is_known as is_known_country;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    LeAgent,
    CrisisManager,
    ForensicExpert,
    LegalAdvisor,
    Admin,
}

impl Role {
    pub const ALL: [Role; 5] = [
        Role::LeAgent,
        Role::CrisisManager,
        Role::ForensicExpert,
        Role::LegalAdvisor,
        Role::Admin,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Role::LeAgent => "le_agent",
            Role::CrisisManager => "crisis_manager",
            Role::ForensicExpert => "forensic_expert",
            Role::LegalAdvisor => "legal_advisor",
            Role::Admin => "admin",
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        Role::ALL.into_iter().find(|r| r.as_str() == s)
    }

    /// Internal staff, as opposed to external requesters.
    pub fn is_staff(&self) -> bool {
        !matches!(self, Role::LeAgent)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequesterIdentity {
    pub agent_name: String,
    pub agent_email: String,
    pub agent_phone: String,
    pub badge_id: String,
    pub superior_name: String,
    pub superior_contact: String,
    pub agency_name: String,
    pub agency_country: String,
    pub jurisdiction: String,
    /// Free-text requester authority type (e.g. "FISA"); stored, never interpreted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub authority_type: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentifierKind {
    Account,
    Email,
    Username,
    Ip,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetIdentifier {
    pub kind: IdentifierKind,
    pub value: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPeriod {
    pub start: Timestamp,
    pub end: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub identifiers: Vec<TargetIdentifier>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service_uri: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_period: Option<DataPeriod>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstrumentKind {
    Subpoena,
    CourtOrder,
    SearchWarrant,
    MlatRequest,
    RogatoryLetter,
    EmergencyDeclaration,
    Other,
}

impl InstrumentKind {
    pub const ALL: [InstrumentKind; 7] = [
        InstrumentKind::Subpoena,
        InstrumentKind::CourtOrder,
        InstrumentKind::SearchWarrant,
        InstrumentKind::MlatRequest,
        InstrumentKind::RogatoryLetter,
        InstrumentKind::EmergencyDeclaration,
        InstrumentKind::Other,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LegalInstrument {
    pub kind: InstrumentKind,
    /// Required when `kind` is `other`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qualifier: Option<String>,
    pub issuing_authority: String,
    pub reference_number: String,
    #[serde(default)]
    pub document_refs: Vec<EvidenceId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Disclosure,
    Preservation,
    Removal,
    Testimony,
}

impl Objective {
    pub const ALL: [Objective; 4] = [
        Objective::Disclosure,
        Objective::Preservation,
        Objective::Removal,
        Objective::Testimony,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Emergency,
    Routine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForeignChannel {
    Mlat,
    Rogatory,
    CloudAct,
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Origin {
    Domestic,
    Foreign { channel: ForeignChannel },
}

impl Origin {
    pub fn is_foreign(&self) -> bool {
        matches!(self, Origin::Foreign { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeRequest {
    pub request_id: RequestId,
    pub requester: RequesterIdentity,
    pub target: TargetSpec,
    pub instruments: Vec<LegalInstrument>,
    pub objective: Objective,
    pub regime: Regime,
    pub origin: Origin,
    pub narrative: String,
    pub submitted_at: Timestamp,
    pub state: WorkflowState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Priority {
    P0Emergency,
    P1Preservation,
    P2Routine,
}

/// Emergency first, then preservation, then everything else.
pub fn classify_priority(request: &LeRequest) -> Priority {
    priority_for(request.regime, request.objective)
}

pub fn priority_for(regime: Regime, objective: Objective) -> Priority {
    match (regime, objective) {
        (Regime::Emergency, _) => Priority::P0Emergency,
        (Regime::Routine, Objective::Preservation) => Priority::P1Preservation,
        (Regime::Routine, _) => Priority::P2Routine,
    }
}

// ── validation ────────────────────────────────────────────────────────

/// The five required pre-submission blocks, plus general request fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubmissionBlock {
    AgentContact,
    SuperiorContact,
    AgencyContact,
    LegalDocuments,
    Target,
    Request,
}

impl SubmissionBlock {
    pub fn letter(&self) -> Option<char> {
        match self {
            SubmissionBlock::AgentContact => Some('a'),
            SubmissionBlock::SuperiorContact => Some('b'),
            SubmissionBlock::AgencyContact => Some('c'),
            SubmissionBlock::LegalDocuments => Some('d'),
            SubmissionBlock::Target => Some('e'),
            SubmissionBlock::Request => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValidationErrorKind {
    MissingField,
    InvalidFormat,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationError {
    pub kind: ValidationErrorKind,
    /// Leaf field name, e.g. `agency_name` or `identifier`.
    pub field: String,
    /// Location in the submission document, e.g. `target.identifiers[0].value`.
    pub path: String,
    pub block: SubmissionBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl ValidationError {
    pub fn is_missing(&self, field: &str) -> bool {
        self.kind == ValidationErrorKind::MissingField && self.field == field
    }

    pub fn is_invalid(&self, field: &str) -> bool {
        self.kind == ValidationErrorKind::InvalidFormat && self.field == field
    }
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.kind, &self.reason) {
            (ValidationErrorKind::MissingField, _) => write!(f, "MissingField({})", self.field),
            (ValidationErrorKind::InvalidFormat, Some(r)) => {
                write!(f, "InvalidFormat({}, {:?})", self.field, r)
            }
            (ValidationErrorKind::InvalidFormat, None) => write!(f, "InvalidFormat({})", self.field),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{} validation error(s): {}", .errors.len(), summary(.errors))]
pub struct ValidationErrors {
    pub errors: Vec<ValidationError>,
}

fn summary(errors: &[ValidationError]) -> String {
    errors.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

impl ValidationErrors {
    pub fn contains_missing(&self, field: &str) -> bool {
        self.errors.iter().any(|e| e.is_missing(field))
    }

    pub fn contains_invalid(&self, field: &str) -> bool {
        self.errors.iter().any(|e| e.is_invalid(field))
    }
}

pub fn check_email(s: &str) -> Result<(), &'static str> {
    let mut parts = s.split('@');
    let (local, domain) = match (parts.next(), parts.next(), parts.next()) {
        (Some(l), Some(d), None) => (l, d),
        _ => return Err("expected exactly one '@'"),
    };
    if local.is_empty() || s.chars().any(|c| c.is_whitespace() || c.is_control()) {
        return Err("not an email address");
    }
    let labels: Vec<&str> = domain.split('.').collect();
    if labels.len() < 2 || labels.iter().any(|l| l.is_empty()) {
        return Err("email domain must contain a dot-separated host");
    }
    Ok(())
}

pub fn check_identifier(id: &TargetIdentifier) -> Result<(), &'static str> {
    if id.value.trim().is_empty() {
        return Err("empty identifier");
    }
    match id.kind {
        IdentifierKind::Ip => id
            .value
            .parse::<IpAddr>()
            .map(|_| ())
            .map_err(|_| "not an IP address"),
        IdentifierKind::Email => check_email(&id.value),
        IdentifierKind::Account | IdentifierKind::Username => Ok(()),
    }
}

pub fn check_uri(s: &str) -> Result<(), &'static str> {
    url::Url::parse(s).map(|_| ()).map_err(|_| "not a URI")
}

struct Collector {
    errors: Vec<ValidationError>,
}

impl Collector {
    fn missing(&mut self, field: &str, path: &str, block: SubmissionBlock) {
        self.errors.push(ValidationError {
            kind: ValidationErrorKind::MissingField,
            field: field.to_owned(),
            path: path.to_owned(),
            block,
            reason: None,
        });
    }

    fn invalid(&mut self, field: &str, path: &str, block: SubmissionBlock, reason: impl Into<String>) {
        self.errors.push(ValidationError {
            kind: ValidationErrorKind::InvalidFormat,
            field: field.to_owned(),
            path: path.to_owned(),
            block,
            reason: Some(reason.into()),
        });
    }

    /// Required non-blank string.
    fn text(&mut self, obj: Option<&Map<String, Value>>, key: &str, prefix: &str, block: SubmissionBlock) -> Option<String> {
        let path = join(prefix, key);
        match obj.and_then(|o| o.get(key)) {
            None | Some(Value::Null) => {
                self.missing(key, &path, block);
                None
            }
            Some(Value::String(s)) if s.trim().is_empty() => {
                self.missing(key, &path, block);
                None
            }
            Some(Value::String(s)) => Some(s.clone()),
            Some(_) => {
                self.invalid(key, &path, block, "expected text");
                None
            }
        }
    }

    fn opt_text(&mut self, obj: Option<&Map<String, Value>>, key: &str, prefix: &str, block: SubmissionBlock) -> Option<String> {
        match obj.and_then(|o| o.get(key)) {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) if s.trim().is_empty() => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(_) => {
                self.invalid(key, &join(prefix, key), block, "expected text");
                None
            }
        }
    }

    fn enumeration<T: for<'de> Deserialize<'de>>(
        &mut self,
        obj: Option<&Map<String, Value>>,
        key: &str,
        prefix: &str,
        block: SubmissionBlock,
    ) -> Option<T> {
        let s = self.text(obj, key, prefix, block)?;
        match serde_json::from_value(Value::String(s.clone())) {
            Ok(v) => Some(v),
            Err(_) => {
                self.invalid(key, &join(prefix, key), block, format!("unknown value {s:?}"));
                None
            }
        }
    }

    fn timestamp(&mut self, obj: Option<&Map<String, Value>>, key: &str, prefix: &str, block: SubmissionBlock) -> Option<Timestamp> {
        let s = self.text(obj, key, prefix, block)?;
        match Timestamp::parse(&s) {
            Ok(t) => Some(t),
            Err(_) => {
                self.invalid(key, &join(prefix, key), block, "not an RFC 3339 timestamp");
                None
            }
        }
    }

    /// Required object; a missing block reports each of its required fields.
    fn object<'a>(
        &mut self,
        parent: Option<&'a Map<String, Value>>,
        key: &str,
        prefix: &str,
        block: SubmissionBlock,
    ) -> Option<&'a Map<String, Value>> {
        match parent.and_then(|o| o.get(key)) {
            None | Some(Value::Null) => None,
            Some(Value::Object(m)) => Some(m),
            Some(_) => {
                self.invalid(key, &join(prefix, key), block, "expected an object");
                None
            }
        }
    }
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_owned()
    } else {
        format!("{prefix}.{key}")
    }
}

const AGENT_FIELDS: [&str; 4] = ["agent_name", "agent_email", "agent_phone", "badge_id"];
const SUPERIOR_FIELDS: [&str; 2] = ["superior_name", "superior_contact"];
const AGENCY_FIELDS: [&str; 3] = ["agency_name", "agency_country", "jurisdiction"];

/// Validate a raw submission into a typed request in state `PreSubmitted`.
///
/// `request_id` and `submitted_at` are taken from the document when present,
/// otherwise a fresh id and `received_at` are used. Any `state` in the
/// document is ignored.
pub fn validate_submission(raw: &Value, received_at: Timestamp) -> Result<LeRequest, ValidationErrors> {
    let mut c = Collector { errors: Vec::new() };
    let root = match raw {
        Value::Object(m) => Some(m),
        _ => {
            c.invalid("submission", "", SubmissionBlock::Request, "expected a JSON object");
            return Err(ValidationErrors { errors: c.errors });
        }
    };

    let request_id = match root.and_then(|o| o.get("request_id")) {
        None | Some(Value::Null) => Some(RequestId::new()),
        Some(Value::String(s)) => match s.parse::<RequestId>() {
            Ok(id) => Some(id),
            Err(_) => {
                c.invalid("request_id", "request_id", SubmissionBlock::Request, "not a UUID");
                None
            }
        },
        Some(_) => {
            c.invalid("request_id", "request_id", SubmissionBlock::Request, "not a UUID");
            None
        }
    };

    let requester = validate_requester(&mut c, root);
    let target = validate_target(&mut c, root);
    let instruments = validate_instruments(&mut c, root);

    let objective: Option<Objective> = c.enumeration(root, "objective", "", SubmissionBlock::Request);
    let regime: Option<Regime> = c.enumeration(root, "regime", "", SubmissionBlock::Request);
    let origin = validate_origin(&mut c, root);

    let narrative = c.opt_text(root, "narrative", "", SubmissionBlock::Request).unwrap_or_default();
    if regime == Some(Regime::Emergency) && narrative.trim().is_empty() {
        c.missing("narrative", "narrative", SubmissionBlock::Request);
    }

    let submitted_at = match root.and_then(|o| o.get("submitted_at")) {
        None | Some(Value::Null) => Some(received_at),
        _ => c.timestamp(root, "submitted_at", "", SubmissionBlock::Request),
    };

    if !c.errors.is_empty() {
        return Err(ValidationErrors { errors: c.errors });
    }
    // Every component parsed, so every Option is Some.
    match (request_id, requester, target, instruments, objective, regime, origin, submitted_at) {
        (Some(request_id), Some(requester), Some(target), Some(instruments), Some(objective), Some(regime), Some(origin), Some(submitted_at)) => {
            Ok(LeRequest {
                request_id,
                requester,
                target,
                instruments,
                objective,
                regime,
                origin,
                narrative,
                submitted_at,
                state: WorkflowState::default(),
            })
        }
        _ => unreachable!("a component failed without recording an error"),
    }
}

fn validate_requester(c: &mut Collector, root: Option<&Map<String, Value>>) -> Option<RequesterIdentity> {
    let obj = c.object(root, "requester", "", SubmissionBlock::AgentContact);
    let p = "requester";
    let mut vals = Vec::new();
    for (fields, block) in [
        (&AGENT_FIELDS[..], SubmissionBlock::AgentContact),
        (&SUPERIOR_FIELDS[..], SubmissionBlock::SuperiorContact),
        (&AGENCY_FIELDS[..], SubmissionBlock::AgencyContact),
    ] {
        for f in fields {
            vals.push(c.text(obj, f, p, block));
        }
    }
    let authority_type = c.opt_text(obj, "authority_type", p, SubmissionBlock::AgencyContact);
    let [agent_name, agent_email, agent_phone, badge_id, superior_name, superior_contact, agency_name, agency_country, jurisdiction]: [Option<String>; 9] =
        vals.try_into().expect("nine requester fields");

    if let Some(email) = &agent_email {
        if let Err(reason) = check_email(email) {
            c.invalid("agent_email", "requester.agent_email", SubmissionBlock::AgentContact, reason);
        }
    }
    if let Some(country) = &agency_country {
        if !is_known_country(country) {
            c.invalid(
                "agency_country",
                "requester.agency_country",
                SubmissionBlock::AgencyContact,
                "not an ISO 3166-1 alpha-2 code",
            );
        }
    }
    Some(RequesterIdentity {
        agent_name: agent_name?,
        agent_email: agent_email?,
        agent_phone: agent_phone?,
        badge_id: badge_id?,
        superior_name: superior_name?,
        superior_contact: superior_contact?,
        agency_name: agency_name?,
        agency_country: agency_country?,
        jurisdiction: jurisdiction?,
        authority_type,
    })
}

fn validate_target(c: &mut Collector, root: Option<&Map<String, Value>>) -> Option<TargetSpec> {
    let block = SubmissionBlock::Target;
    let obj = c.object(root, "target", "", block);
    let identifiers = match obj.and_then(|o| o.get("identifiers")) {
        None | Some(Value::Null) => {
            c.missing("identifiers", "target.identifiers", block);
            None
        }
        Some(Value::Array(items)) if items.is_empty() => {
            c.missing("identifiers", "target.identifiers", block);
            None
        }
        Some(Value::Array(items)) => {
            let mut out = Vec::with_capacity(items.len());
            let mut ok = true;
            for (i, item) in items.iter().enumerate() {
                let prefix = format!("target.identifiers[{i}]");
                let io = match item {
                    Value::Object(m) => Some(m),
                    _ => {
                        c.invalid("identifier", &prefix, block, "expected an object");
                        ok = false;
                        continue;
                    }
                };
                let kind: Option<IdentifierKind> = c.enumeration(io, "kind", &prefix, block);
                let value = c.text(io, "value", &prefix, block);
                match (kind, value) {
                    (Some(kind), Some(value)) => {
                        let id = TargetIdentifier { kind, value };
                        if let Err(reason) = check_identifier(&id) {
                            c.invalid("identifier", &format!("{prefix}.value"), block, reason);
                            ok = false;
                        }
                        out.push(id);
                    }
                    _ => ok = false,
                }
            }
            ok.then_some(out)
        }
        Some(_) => {
            c.invalid("identifiers", "target.identifiers", block, "expected a list");
            None
        }
    };
    let service_uri = c.opt_text(obj, "service_uri", "target", block);
    if let Some(uri) = &service_uri {
        if let Err(reason) = check_uri(uri) {
            c.invalid("service_uri", "target.service_uri", block, reason);
        }
    }
    let data_period = match c.object(obj, "data_period", "target", block) {
        None => None,
        Some(p) => {
            let start = c.timestamp(Some(p), "start", "target.data_period", block);
            let end = c.timestamp(Some(p), "end", "target.data_period", block);
            match (start, end) {
                (Some(start), Some(end)) => {
                    if start > end {
                        c.invalid("data_period", "target.data_period", block, "start is after end");
                    }
                    Some(DataPeriod { start, end })
                }
                _ => None,
            }
        }
    };
    Some(TargetSpec {
        identifiers: identifiers?,
        service_uri,
        data_period,
    })
}

fn validate_instruments(c: &mut Collector, root: Option<&Map<String, Value>>) -> Option<Vec<LegalInstrument>> {
    let block = SubmissionBlock::LegalDocuments;
    let items = match root.and_then(|o| o.get("instruments")) {
        None | Some(Value::Null) => {
            c.missing("instruments", "instruments", block);
            return None;
        }
        Some(Value::Array(items)) if items.is_empty() => {
            c.missing("instruments", "instruments", block);
            return None;
        }
        Some(Value::Array(items)) => items,
        Some(_) => {
            c.invalid("instruments", "instruments", block, "expected a list");
            return None;
        }
    };
    let mut out = Vec::with_capacity(items.len());
    let mut ok = true;
    for (i, item) in items.iter().enumerate() {
        let prefix = format!("instruments[{i}]");
        let io = match item {
            Value::Object(m) => Some(m),
            _ => {
                c.invalid("instrument", &prefix, block, "expected an object");
                ok = false;
                continue;
            }
        };
        let kind: Option<InstrumentKind> = c.enumeration(io, "kind", &prefix, block);
        let qualifier = c.opt_text(io, "qualifier", &prefix, block);
        if kind == Some(InstrumentKind::Other) && qualifier.is_none() {
            c.missing("qualifier", &join(&prefix, "qualifier"), block);
            ok = false;
        }
        let issuing_authority = c.text(io, "issuing_authority", &prefix, block);
        let reference_number = c.text(io, "reference_number", &prefix, block);
        let mut refs = Vec::new();
        match io.and_then(|o| o.get("document_refs")) {
            None | Some(Value::Null) => {}
            Some(Value::Array(rs)) => {
                for (j, r) in rs.iter().enumerate() {
                    let path = format!("{prefix}.document_refs[{j}]");
                    match r.as_str().map(EvidenceId::parse) {
                        Some(Ok(id)) => refs.push(id),
                        _ => {
                            c.invalid("document_refs", &path, block, "not a 64-char lowercase hex digest");
                            ok = false;
                        }
                    }
                }
            }
            Some(_) => {
                c.invalid("document_refs", &join(&prefix, "document_refs"), block, "expected a list");
                ok = false;
            }
        }
        match (kind, issuing_authority, reference_number) {
            (Some(kind), Some(issuing_authority), Some(reference_number)) => out.push(LegalInstrument {
                kind,
                qualifier,
                issuing_authority,
                reference_number,
                document_refs: refs,
            }),
            _ => ok = false,
        }
    }
    ok.then_some(out)
}

fn validate_origin(c: &mut Collector, root: Option<&Map<String, Value>>) -> Option<Origin> {
    let block = SubmissionBlock::Request;
    let obj = match root.and_then(|o| o.get("origin")) {
        None | Some(Value::Null) => {
            c.missing("origin", "origin", block);
            return None;
        }
        Some(Value::Object(m)) => Some(m),
        Some(_) => {
            c.invalid("origin", "origin", block, "expected an object");
            return None;
        }
    };
    match c.text(obj, "kind", "origin", block).as_deref() {
        Some("domestic") => Some(Origin::Domestic),
        Some("foreign") => match obj.and_then(|o| o.get("channel")) {
            None | Some(Value::Null) => {
                c.missing("channel", "origin.channel", block);
                None
            }
            _ => c
                .enumeration::<ForeignChannel>(obj, "channel", "origin", block)
                .map(|channel| Origin::Foreign { channel }),
        },
        Some(other) => {
            c.invalid("kind", "origin.kind", block, format!("unknown value {other:?}"));
            None
        }
        None => None,
    }
}

impl LeRequest {
    /// Re-check every type invariant on an already-typed request.
    pub fn check_invariants(&self) -> Result<(), ValidationErrors> {
        let raw = serde_json::to_value(self).map_err(|e| ValidationErrors {
            errors: vec![ValidationError {
                kind: ValidationErrorKind::InvalidFormat,
                field: "request".into(),
                path: String::new(),
                block: SubmissionBlock::Request,
                reason: Some(e.to_string()),
            }],
        })?;
        let mut back = validate_submission(&raw, self.submitted_at)?;
        back.state = self.state.clone();
        if &back == self {
            Ok(())
        } else {
            Err(ValidationErrors {
                errors: vec![ValidationError {
                    kind: ValidationErrorKind::InvalidFormat,
                    field: "request".into(),
                    path: String::new(),
                    block: SubmissionBlock::Request,
                    reason: Some("request is not in normalized form".into()),
                }],
            })
        }
    }

    /// Distinct target identifiers, for impacted-account counts.
    pub fn identifiers(&self) -> impl Iterator<Item = &TargetIdentifier> {
        self.target.identifiers.iter()
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use serde_json::{json, Value};

    /// The user-information disclosure scenario: a forum user suspected of
    /// posting illicit content.
    pub fn scenario_one() -> Value {
        json!({
            "requester": {
                "agent_name": "Mike Davies",
                "agent_email": "mike.davies@police.example.org",
                "agent_phone": "+1 555 0100",
                "badge_id": "PD-4471",
                "superior_name": "Jane Holt",
                "superior_contact": "jane.holt@police.example.org",
                "agency_name": "Metro Police Cybercrime Unit",
                "agency_country": "US",
                "jurisdiction": "State of Example"
            },
            "target": {
                "identifiers": [{"kind": "username", "value": "John Smith"}],
                "service_uri": "http://wwww.mydomain.com/fluxbb"
            },
            "instruments": [{
                "kind": "court_order",
                "issuing_authority": "Example District Court",
                "reference_number": "CO-2024-118"
            }],
            "objective": "disclosure",
            "regime": "routine",
            "origin": {"kind": "domestic"},
            "narrative": "User suspected of posting illicit content on a discussion forum."
        })
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::scenario_one;
    use super::*;
    use crate::workflow::StateValue;
    use serde_json::json;

    fn now() -> Timestamp {
        Timestamp::parse("2024-06-01T09:00:00Z").unwrap()
    }

    #[test]
    fn scenario_one_validates() {
        let req = validate_submission(&scenario_one(), now()).unwrap();
        assert_eq!(req.requester.agent_name, "Mike Davies");
        assert_eq!(req.target.identifiers[0].value, "John Smith");
        assert_eq!(req.target.service_uri.as_deref(), Some("http://wwww.mydomain.com/fluxbb"));
        assert_eq!(req.objective, Objective::Disclosure);
        assert_eq!(req.state.value, StateValue::PreSubmitted);
        assert_eq!(req.submitted_at, now());
    }

    #[test]
    fn missing_agency_block_reports_each_field() {
        let mut raw = scenario_one();
        let r = raw["requester"].as_object_mut().unwrap();
        for f in AGENCY_FIELDS {
            r.remove(f);
        }
        let errs = validate_submission(&raw, now()).unwrap_err();
        assert!(errs.contains_missing("agency_name"));
        assert!(errs.contains_missing("agency_country"));
        assert!(errs.contains_missing("jurisdiction"));
        assert!(errs.errors.iter().all(|e| e.block == SubmissionBlock::AgencyContact));
    }

    #[test]
    fn bad_ip_identifier() {
        let mut raw = scenario_one();
        raw["target"]["identifiers"] = json!([{"kind": "ip", "value": "999.1.1.1"}]);
        let errs = validate_submission(&raw, now()).unwrap_err();
        assert_eq!(errs.errors.len(), 1);
        let e = &errs.errors[0];
        assert!(e.is_invalid("identifier"));
        assert_eq!(e.reason.as_deref(), Some("not an IP address"));
        assert_eq!(e.block, SubmissionBlock::Target);
    }

    #[test]
    fn reports_all_errors_not_just_first() {
        let raw = json!({
            "requester": {"agent_email": "nope"},
            "target": {"identifiers": []},
            "objective": "interrogation",
            "regime": "emergency",
            "origin": {"kind": "foreign"}
        });
        let errs = validate_submission(&raw, now()).unwrap_err();
        for f in ["agent_name", "superior_name", "agency_name", "identifiers", "instruments", "narrative", "channel"] {
            assert!(errs.contains_missing(f), "missing {f}: {errs}");
        }
        assert!(errs.contains_invalid("agent_email"));
        assert!(errs.contains_invalid("objective"));
    }

    #[test]
    fn instrument_rules() {
        let mut raw = scenario_one();
        raw["instruments"] = json!([
            {"kind": "other", "issuing_authority": "X", "reference_number": "1"},
            {"kind": "subpoena", "issuing_authority": "X", "reference_number": "2", "document_refs": ["ABC"]}
        ]);
        let errs = validate_submission(&raw, now()).unwrap_err();
        assert!(errs.contains_missing("qualifier"));
        assert!(errs.contains_invalid("document_refs"));
    }

    #[test]
    fn period_and_country() {
        let mut raw = scenario_one();
        raw["requester"]["agency_country"] = json!("XX");
        raw["target"]["data_period"] = json!({"start": "2024-02-01T00:00:00Z", "end": "2024-01-01T00:00:00Z"});
        let errs = validate_submission(&raw, now()).unwrap_err();
        assert!(errs.contains_invalid("agency_country"));
        assert!(errs.contains_invalid("data_period"));
    }

    #[test]
    fn revalidation_is_idempotent() {
        let req = validate_submission(&scenario_one(), now()).unwrap();
        let raw = serde_json::to_value(&req).unwrap();
        let again = validate_submission(&raw, now().plus_days(3)).unwrap();
        assert_eq!(again, req);
        req.check_invariants().unwrap();
    }

    #[test]
    fn priority_table() {
        let mut req = validate_submission(&scenario_one(), now()).unwrap();
        req.regime = Regime::Emergency;
        assert_eq!(classify_priority(&req), Priority::P0Emergency);
        req.regime = Regime::Routine;
        req.objective = Objective::Preservation;
        assert_eq!(classify_priority(&req), Priority::P1Preservation);
        req.objective = Objective::Testimony;
        assert_eq!(classify_priority(&req), Priority::P2Routine);
    }

    #[test]
    fn email_checks() {
        assert!(check_email("a@b.org").is_ok());
        assert!(check_email("a@b").is_err());
        assert!(check_email("a b@c.org").is_err());
        assert!(check_email("@c.org").is_err());
        assert!(check_email("a@@c.org").is_err());
    }
}
