//! The `/api/v1` router. Every route authenticates a bearer token, then
//! calls one [`Clerms`] operation under the service lock. Errors become
//! `{"error": <name>, "message": <text>}` with the status from
//! [`ErrorClass`](clerms_core::gateway::ErrorClass); validation failures
//! also carry the full `errors` list.

use std::collections::HashMap;
use std::str::FromStr;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use clerms_core::cases::{DocumentKind, TaskStatus};
use clerms_core::custody::{ChainStatus, EvidenceFormat};
use clerms_core::domain::schema::submission_schema;
use clerms_core::domain::Role;
use clerms_core::flows::logs::LogFilter;
use clerms_core::flows::FlowKind;
use clerms_core::gateway::auth::generate_token;
use clerms_core::gateway::{Action, Clerms, DecisionInput, InvoiceInput, Principal, ServiceError, SharedClerms};
use clerms_core::ids::{AgentId, CaseId, EvidenceId, FlowId, PrincipalId, RequestId, TaskId, TicketId};
use clerms_core::reporting::{export_report, Exportable, Period};
use clerms_core::time::Timestamp;
use clerms_core::workflow::transition_table;

/// Largest accepted request body (document uploads).
pub const MAX_BODY_BYTES: usize = 64 * 1024 * 1024;

#[derive(Clone)]
pub struct AppState {
    svc: SharedClerms,
}

impl AppState {
    pub fn new(svc: SharedClerms) -> Self {
        Self { svc }
    }

    /// Authenticate the caller and run `f` under the service lock.
    fn call<T>(
        &self,
        headers: &HeaderMap,
        f: impl FnOnce(&mut Clerms, Principal) -> Result<T, ServiceError>,
    ) -> Result<T, ApiError> {
        let mut svc = self.svc.lock().unwrap_or_else(|p| p.into_inner());
        let token = bearer(headers).ok_or(ServiceError::Unauthenticated)?;
        let who = svc.authenticate(token)?;
        Ok(f(&mut svc, who)?)
    }
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    let value = headers.get(header::AUTHORIZATION)?.to_str().ok()?;
    let (scheme, token) = value.split_once(' ')?;
    scheme.eq_ignore_ascii_case("bearer").then(|| token.trim()).filter(|t| !t.is_empty())
}

pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.class().http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let mut body = json!({"error": self.0.name(), "message": self.0.to_string()});
        if let ServiceError::Validation(v) = &self.0 {
            body["errors"] = json!(v.errors);
        }
        let mut resp = (status, Json(body)).into_response();
        if status == StatusCode::UNAUTHORIZED {
            resp.headers_mut().insert(header::WWW_AUTHENTICATE, header::HeaderValue::from_static("Bearer"));
        }
        resp
    }
}

type ApiResult = Result<Response, ApiError>;

fn ok<T: Serialize>(v: T) -> Response {
    Json(v).into_response()
}

fn created<T: Serialize>(v: T) -> Response {
    (StatusCode::CREATED, Json(v)).into_response()
}

fn bad(msg: impl Into<String>) -> ApiError {
    ApiError(ServiceError::BadInput(msg.into()))
}

fn body<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(bytes).map_err(|e| bad(format!("request body: {e}")))
}

fn id<T: FromStr>(raw: &str) -> Result<T, ApiError> {
    raw.parse().map_err(|_| bad(format!("malformed id: {raw}")))
}

fn timestamp(q: &HashMap<String, String>, key: &str) -> Result<Option<Timestamp>, ApiError> {
    q.get(key)
        .map(|v| Timestamp::parse(v).map_err(|e| bad(format!("{key}: {e}"))))
        .transpose()
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/me", get(me))
        .route("/schema/submission", get(schema))
        .route("/workflow/transitions", get(transitions))
        .route("/access/matrix", get(access_matrix))
        .route("/principals", post(add_principal))
        .route("/requests", post(submit).get(list_requests))
        .route("/requests/{id}", get(show_request))
        .route("/requests/{id}/documents", post(receive_documents))
        .route("/requests/{id}/evaluation", post(begin_evaluation))
        .route("/requests/{id}/reopen", post(reopen_evaluation))
        .route("/requests/{id}/provisional", post(provisional))
        .route("/requests/{id}/preservation/extend", post(extend_preservation))
        .route("/requests/{id}/decision", post(decide))
        .route("/requests/{id}/escalate", post(escalate))
        .route("/requests/{id}/action", post(apply_action))
        .route("/requests/{id}/response", post(respond))
        .route("/requests/{id}/acknowledge", post(acknowledge))
        .route("/uploads", post(upload))
        .route("/tickets/{id}", get(show_ticket))
        .route("/tickets/{id}/messages", get(ticket_messages).post(post_message))
        .route("/notifications", get(notifications))
        .route("/cases/{id}", get(show_case))
        .route("/cases/{id}/participants", post(add_participant))
        .route("/cases/{id}/evidence", post(link_evidence))
        .route("/cases/{id}/documents", post(attach_document))
        .route("/cases/{id}/tasks", post(assign_task))
        .route("/cases/{id}/tasks/{task}", patch(update_task))
        .route("/cases/{id}/close", post(close_case))
        .route("/cases/{id}/export", post(export_case))
        .route("/evidence/{id}", get(evidence_item))
        .route("/evidence/{id}/verify", get(verify_evidence))
        .route("/evidence/{id}/chain", get(custody_chain))
        .route("/evidence/{id}/content", get(evidence_content))
        .route("/evidence/{id}/destroy", post(destroy_evidence))
        .route("/agents", get(agents))
        .route("/flows", post(launch_flow))
        .route("/flows/{id}", get(show_flow))
        .route("/logs/query", get(query_logs))
        .route("/reports/transparency", get(transparency))
        .route("/invoices", post(invoice));
    Router::new()
        .nest("/api/v1", api)
        .fallback(|| async { ApiError(ServiceError::NotFound("no such endpoint".into())) })
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

// ── meta ───────────────────────────────────────────────────────────────

async fn me(State(st): State<AppState>, h: HeaderMap) -> ApiResult {
    st.call(&h, |_, who| Ok(who)).map(ok)
}

async fn schema(State(st): State<AppState>, h: HeaderMap) -> ApiResult {
    st.call(&h, |_, _| Ok(submission_schema())).map(ok)
}

fn read_table(svc: &Clerms, who: &Principal) -> Result<(), ServiceError> {
    if svc.matrix().access(who.role, Action::ReadWorkflowTable) == clerms_core::gateway::Access::Deny {
        return Err(ServiceError::Forbidden("not allowed to read_workflow_table".into()));
    }
    Ok(())
}

async fn transitions(State(st): State<AppState>, h: HeaderMap) -> ApiResult {
    st.call(&h, |svc, who| {
        read_table(svc, &who)?;
        Ok(transition_table())
    })
    .map(ok)
}

async fn access_matrix(State(st): State<AppState>, h: HeaderMap) -> ApiResult {
    st.call(&h, |svc, who| {
        read_table(svc, &who)?;
        Ok(serde_json::to_value(svc.matrix().to_document()).expect("matrix serializes"))
    })
    .map(ok)
}

#[derive(Deserialize)]
struct NewPrincipal {
    role: Role,
    #[serde(default)]
    name: String,
    #[serde(default)]
    token: Option<String>,
}

async fn add_principal(State(st): State<AppState>, h: HeaderMap, b: Bytes) -> ApiResult {
    let input: NewPrincipal = body(&b)?;
    let token = input.token.unwrap_or_else(generate_token);
    st.call(&h, |svc, who| svc.add_principal_as(&who, input.role, &token, &input.name))
        .map(|p| created(json!({"principal": p, "token": token})))
}

// ── requests ───────────────────────────────────────────────────────────

async fn submit(State(st): State<AppState>, h: HeaderMap, b: Bytes) -> ApiResult {
    let raw: Value = body(&b)?;
    st.call(&h, |svc, who| svc.submit_request(&who, &raw)).map(|(rec, ticket)| {
        created(json!({
            "request_id": rec.id(),
            "ticket_id": ticket.ticket_id,
            "state": rec.state(),
            "priority": ticket.priority,
            "request": rec.request,
        }))
    })
}

async fn list_requests(State(st): State<AppState>, h: HeaderMap) -> ApiResult {
    st.call(&h, |svc, who| svc.list_requests(&who)).map(ok)
}

async fn show_request(State(st): State<AppState>, h: HeaderMap, Path(rid): Path<String>) -> ApiResult {
    let rid: RequestId = id(&rid)?;
    st.call(&h, |svc, who| svc.request_view(&who, rid)).map(ok)
}

fn state_reply(rid: RequestId, state: clerms_core::workflow::StateValue) -> Response {
    ok(json!({"request_id": rid, "state": state}))
}

#[derive(Deserialize)]
struct Documents {
    documents: Vec<EvidenceId>,
}

async fn receive_documents(State(st): State<AppState>, h: HeaderMap, Path(rid): Path<String>, b: Bytes) -> ApiResult {
    let rid: RequestId = id(&rid)?;
    let input: Documents = body(&b)?;
    st.call(&h, |svc, who| svc.receive_documents(&who, rid, input.documents)).map(|s| state_reply(rid, s))
}

async fn begin_evaluation(State(st): State<AppState>, h: HeaderMap, Path(rid): Path<String>) -> ApiResult {
    let rid: RequestId = id(&rid)?;
    st.call(&h, |svc, who| svc.begin_evaluation(&who, rid)).map(|s| state_reply(rid, s))
}

async fn reopen_evaluation(State(st): State<AppState>, h: HeaderMap, Path(rid): Path<String>) -> ApiResult {
    let rid: RequestId = id(&rid)?;
    st.call(&h, |svc, who| svc.reopen_evaluation(&who, rid)).map(|s| state_reply(rid, s))
}

#[derive(Deserialize)]
struct Measure {
    measure: String,
}

async fn provisional(State(st): State<AppState>, h: HeaderMap, Path(rid): Path<String>, b: Bytes) -> ApiResult {
    let rid: RequestId = id(&rid)?;
    let input: Measure = body(&b)?;
    st.call(&h, |svc, who| svc.apply_provisional_measures(&who, rid, &input.measure)).map(ok)
}

async fn extend_preservation(State(st): State<AppState>, h: HeaderMap, Path(rid): Path<String>) -> ApiResult {
    let rid: RequestId = id(&rid)?;
    st.call(&h, |svc, who| svc.extend_preservation(&who, rid)).map(ok)
}

async fn decide(State(st): State<AppState>, h: HeaderMap, Path(rid): Path<String>, b: Bytes) -> ApiResult {
    let rid: RequestId = id(&rid)?;
    let input: DecisionInput = body(&b)?;
    st.call(&h, |svc, who| svc.record_decision(&who, rid, input)).map(|s| state_reply(rid, s))
}

#[derive(Deserialize, Default)]
struct EscalateInput {
    #[serde(default)]
    override_guard: bool,
}

async fn escalate(State(st): State<AppState>, h: HeaderMap, Path(rid): Path<String>, b: Bytes) -> ApiResult {
    let rid: RequestId = id(&rid)?;
    let input: EscalateInput = if b.is_empty() { EscalateInput::default() } else { body(&b)? };
    st.call(&h, |svc, who| svc.escalate(&who, rid, input.override_guard))
        .map(|case_id| ok(json!({"request_id": rid, "state": clerms_core::workflow::StateValue::Escalated, "case_id": case_id})))
}

#[derive(Deserialize)]
struct Summary {
    summary: String,
}

async fn apply_action(State(st): State<AppState>, h: HeaderMap, Path(rid): Path<String>, b: Bytes) -> ApiResult {
    let rid: RequestId = id(&rid)?;
    let input: Summary = body(&b)?;
    st.call(&h, |svc, who| svc.apply_action(&who, rid, &input.summary)).map(|s| state_reply(rid, s))
}

#[derive(Deserialize)]
struct ResponseInput {
    body: String,
    #[serde(default)]
    suppress_target_notification: bool,
}

async fn respond(State(st): State<AppState>, h: HeaderMap, Path(rid): Path<String>, b: Bytes) -> ApiResult {
    let rid: RequestId = id(&rid)?;
    let input: ResponseInput = body(&b)?;
    st.call(&h, |svc, who| svc.issue_response(&who, rid, &input.body, input.suppress_target_notification)).map(ok)
}

async fn acknowledge(State(st): State<AppState>, h: HeaderMap, Path(rid): Path<String>) -> ApiResult {
    let rid: RequestId = id(&rid)?;
    st.call(&h, |svc, who| svc.acknowledge(&who, rid)).map(|s| state_reply(rid, s))
}

async fn upload(State(st): State<AppState>, h: HeaderMap, Query(q): Query<HashMap<String, String>>, b: Bytes) -> ApiResult {
    let format = match q.get("format") {
        Some(f) => serde_json::from_value::<EvidenceFormat>(json!(f)).map_err(|_| bad(format!("unknown format {f}")))?,
        None => EvidenceFormat::Document,
    };
    st.call(&h, |svc, who| svc.upload_document(&who, &b, format)).map(created)
}

// ── tickets and notifications ─────────────────────────────────────────

async fn show_ticket(State(st): State<AppState>, h: HeaderMap, Path(tid): Path<String>) -> ApiResult {
    let tid: TicketId = id(&tid)?;
    st.call(&h, |svc, who| svc.ticket(&who, tid)).map(ok)
}

async fn ticket_messages(State(st): State<AppState>, h: HeaderMap, Path(tid): Path<String>) -> ApiResult {
    let tid: TicketId = id(&tid)?;
    st.call(&h, |svc, who| svc.ticket(&who, tid)).map(|t| ok(t.messages))
}

#[derive(Deserialize)]
struct MessageInput {
    body: String,
}

async fn post_message(State(st): State<AppState>, h: HeaderMap, Path(tid): Path<String>, b: Bytes) -> ApiResult {
    let tid: TicketId = id(&tid)?;
    let input: MessageInput = body(&b)?;
    st.call(&h, |svc, who| svc.post_ticket_message(&who, tid, &input.body)).map(created)
}

async fn notifications(State(st): State<AppState>, h: HeaderMap) -> ApiResult {
    st.call(&h, |svc, who| svc.notifications(&who)).map(ok)
}

// ── cases ──────────────────────────────────────────────────────────────

async fn show_case(State(st): State<AppState>, h: HeaderMap, Path(cid): Path<String>) -> ApiResult {
    let cid: CaseId = id(&cid)?;
    st.call(&h, |svc, who| svc.case_view(&who, cid)).map(ok)
}

#[derive(Deserialize)]
struct ParticipantInput {
    principal_id: PrincipalId,
}

async fn add_participant(State(st): State<AppState>, h: HeaderMap, Path(cid): Path<String>, b: Bytes) -> ApiResult {
    let cid: CaseId = id(&cid)?;
    let input: ParticipantInput = body(&b)?;
    st.call(&h, |svc, who| svc.add_case_participant(&who, cid, input.principal_id))
        .map(|()| ok(json!({"case_id": cid, "principal_id": input.principal_id})))
}

#[derive(Deserialize)]
struct LinkInput {
    evidence_id: EvidenceId,
}

async fn link_evidence(State(st): State<AppState>, h: HeaderMap, Path(cid): Path<String>, b: Bytes) -> ApiResult {
    let cid: CaseId = id(&cid)?;
    let input: LinkInput = body(&b)?;
    st.call(&h, |svc, who| svc.link_evidence(&who, cid, &input.evidence_id))
        .map(|linked| ok(json!({"case_id": cid, "evidence_id": input.evidence_id, "newly_linked": linked})))
}

#[derive(Deserialize)]
struct AttachInput {
    doc_id: EvidenceId,
    kind: DocumentKind,
}

async fn attach_document(State(st): State<AppState>, h: HeaderMap, Path(cid): Path<String>, b: Bytes) -> ApiResult {
    let cid: CaseId = id(&cid)?;
    let input: AttachInput = body(&b)?;
    st.call(&h, |svc, who| svc.attach_case_document(&who, cid, &input.doc_id, input.kind)).map(created)
}

#[derive(Deserialize)]
struct TaskInput {
    description: String,
    assignee_role: Role,
    #[serde(default)]
    due: Option<Timestamp>,
}

async fn assign_task(State(st): State<AppState>, h: HeaderMap, Path(cid): Path<String>, b: Bytes) -> ApiResult {
    let cid: CaseId = id(&cid)?;
    let input: TaskInput = body(&b)?;
    st.call(&h, |svc, who| svc.assign_task(&who, cid, &input.description, input.assignee_role, input.due))
        .map(created)
}

#[derive(Deserialize)]
struct TaskUpdate {
    status: TaskStatus,
}

async fn update_task(
    State(st): State<AppState>,
    h: HeaderMap,
    Path((cid, task)): Path<(String, String)>,
    b: Bytes,
) -> ApiResult {
    let cid: CaseId = id(&cid)?;
    let task: TaskId = id(&task)?;
    let input: TaskUpdate = body(&b)?;
    st.call(&h, |svc, who| svc.update_task(&who, cid, task, input.status)).map(ok)
}

async fn close_case(State(st): State<AppState>, h: HeaderMap, Path(cid): Path<String>) -> ApiResult {
    let cid: CaseId = id(&cid)?;
    st.call(&h, |svc, who| svc.close_case(&who, cid)).map(ok)
}

#[derive(Deserialize)]
struct ExportInput {
    recipient: String,
}

async fn export_case(State(st): State<AppState>, h: HeaderMap, Path(cid): Path<String>, b: Bytes) -> ApiResult {
    let cid: CaseId = id(&cid)?;
    let input: ExportInput = body(&b)?;
    st.call(&h, |svc, who| svc.export_case(&who, cid, &input.recipient))
        .map(|(manifest, path)| created(json!({"manifest": manifest, "package": path.display().to_string()})))
}

// ── evidence ───────────────────────────────────────────────────────────

async fn evidence_item(State(st): State<AppState>, h: HeaderMap, Path(eid): Path<String>) -> ApiResult {
    let eid: EvidenceId = id(&eid)?;
    st.call(&h, |svc, who| svc.evidence_item(&who, &eid)).map(ok)
}

async fn verify_evidence(State(st): State<AppState>, h: HeaderMap, Path(eid): Path<String>) -> ApiResult {
    let eid: EvidenceId = id(&eid)?;
    st.call(&h, |svc, who| svc.verify_evidence(&who, &eid)).map(|status| {
        let broken_at = match status {
            ChainStatus::Ok => None,
            ChainStatus::BrokenAt(seq) => Some(seq),
        };
        ok(json!({"evidence_id": eid, "status": status.to_string(), "intact": broken_at.is_none(), "broken_at": broken_at}))
    })
}

async fn custody_chain(State(st): State<AppState>, h: HeaderMap, Path(eid): Path<String>) -> ApiResult {
    let eid: EvidenceId = id(&eid)?;
    st.call(&h, |svc, who| svc.custody_chain(&who, &eid)).map(ok)
}

async fn evidence_content(State(st): State<AppState>, h: HeaderMap, Path(eid): Path<String>) -> ApiResult {
    let eid: EvidenceId = id(&eid)?;
    st.call(&h, |svc, who| svc.retrieve_evidence(&who, &eid))
        .map(|bytes| ([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response())
}

#[derive(Deserialize)]
struct DestroyInput {
    co_authorizers: Vec<PrincipalId>,
    reason: String,
}

async fn destroy_evidence(State(st): State<AppState>, h: HeaderMap, Path(eid): Path<String>, b: Bytes) -> ApiResult {
    let eid: EvidenceId = id(&eid)?;
    let input: DestroyInput = body(&b)?;
    st.call(&h, |svc, who| svc.destroy_evidence(&who, &eid, &input.co_authorizers, &input.reason)).map(ok)
}

// ── collection ────────────────────────────────────────────────────────

async fn agents(State(st): State<AppState>, h: HeaderMap) -> ApiResult {
    st.call(&h, |svc, who| svc.list_agents(&who)).map(ok)
}

#[derive(Deserialize)]
struct FlowInput {
    agent_id: AgentId,
    case_id: CaseId,
    kind: FlowKind,
}

async fn launch_flow(State(st): State<AppState>, h: HeaderMap, b: Bytes) -> ApiResult {
    // Role check first: a caller without the right gets 403 whatever the body holds.
    st.call(&h, |svc, who| {
        if svc.matrix().access(who.role, Action::LaunchFlow) == clerms_core::gateway::Access::Deny {
            return Err(ServiceError::Forbidden("not allowed to launch_flow".into()));
        }
        let input: FlowInput =
            serde_json::from_slice(&b).map_err(|e| ServiceError::BadInput(format!("request body: {e}")))?;
        svc.launch_flow(&who, input.agent_id, input.case_id, input.kind)
    })
    .map(created)
}

async fn show_flow(State(st): State<AppState>, h: HeaderMap, Path(fid): Path<String>) -> ApiResult {
    let fid: FlowId = id(&fid)?;
    st.call(&h, |svc, who| svc.flow(&who, fid)).map(ok)
}

async fn query_logs(State(st): State<AppState>, h: HeaderMap, Query(q): Query<HashMap<String, String>>) -> ApiResult {
    let client_ip = q
        .get("client_ip")
        .map(|ip| ip.parse().map_err(|_| bad(format!("client_ip: not an IP address: {ip}"))))
        .transpose()?;
    let time_range = match (timestamp(&q, "from")?, timestamp(&q, "to")?) {
        (Some(a), Some(b)) => Some((a, b)),
        (None, None) => None,
        _ => return Err(bad("from and to must be given together")),
    };
    let filter = LogFilter { client_ip, time_range, substring: q.get("substring").cloned() };
    st.call(&h, |svc, who| svc.query_logs(&who, &filter)).map(ok)
}

// ── reporting ──────────────────────────────────────────────────────────

async fn transparency(State(st): State<AppState>, h: HeaderMap, Query(q): Query<HashMap<String, String>>) -> ApiResult {
    let (Some(start), Some(end)) = (timestamp(&q, "from")?, timestamp(&q, "to")?) else {
        return Err(bad("from and to are required"));
    };
    let format = q.get("format").map(String::as_str).unwrap_or("json").to_owned();
    st.call(&h, |svc, who| {
        let report = svc.transparency_report(&who, Period { start, end })?;
        Ok(export_report(Exportable::Report(&report), &format)?)
    })
    .map(|bytes| {
        let ct = if format == "csv" { "text/csv" } else { "application/json" };
        ([(header::CONTENT_TYPE, ct)], bytes).into_response()
    })
}

async fn invoice(State(st): State<AppState>, h: HeaderMap, b: Bytes) -> ApiResult {
    let input: InvoiceInput = body(&b)?;
    st.call(&h, |svc, who| svc.compute_invoice(&who, input)).map(created)
}
