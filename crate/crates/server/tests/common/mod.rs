#![allow(dead_code)]

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use clerms_core::domain::Role;
use clerms_core::gateway::{Clerms, Config, LogSender, SharedClerms};
use clerms_core::time::{ManualClock, Timestamp};
use clerms_server::api::{router, AppState};

pub const LE: &str = "le-token-mike-davies-0001";
pub const LE2: &str = "le-token-someone-else-0002";
pub const CM: &str = "cm-token-crisis-manager-01";
pub const FE: &str = "fe-token-forensic-expert-1";
pub const LA: &str = "la-token-legal-advisor-001";
pub const ADMIN: &str = "admin-token-administrator1";

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

pub struct TestApp {
    pub dir: tempfile::TempDir,
    pub config: Config,
    pub clock: Arc<ManualClock>,
    pub svc: SharedClerms,
    pub app: Router,
}

pub fn config_for(dir: &std::path::Path) -> Config {
    let mut config = Config::default();
    config.data_dir = dir.to_path_buf();
    config.storage.fsync = false;
    config
}

impl TestApp {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config = config_for(dir.path());
        let clock = Arc::new(ManualClock::new(Timestamp::parse("2024-06-01T09:00:00Z").unwrap()));
        let (mut svc, _) = Clerms::open(config.clone(), clock.clone(), Arc::new(LogSender)).unwrap();
        for (role, token, name) in [
            (Role::LeAgent, LE, "Mike Davies"),
            (Role::LeAgent, LE2, "Another Agent"),
            (Role::CrisisManager, CM, "Crisis Manager"),
            (Role::ForensicExpert, FE, "Forensic Expert"),
            (Role::LegalAdvisor, LA, "Legal Advisor"),
            (Role::Admin, ADMIN, "Administrator"),
        ] {
            svc.add_principal(role, token, name).unwrap();
        }
        let svc = svc.shared();
        let app = router(AppState::new(svc.clone()));
        Self { dir, config, clock, svc, app }
    }

    pub async fn send(&self, method: Method, path: &str, token: Option<&str>, body: Body) -> (StatusCode, Vec<u8>) {
        let mut req = Request::builder().method(method).uri(format!("/api/v1{path}"));
        if let Some(t) = token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        let resp = self.app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        (status, bytes)
    }

    pub async fn call(&self, method: Method, path: &str, token: &str, body: Option<Value>) -> (StatusCode, Value) {
        let body = body.map_or_else(Body::empty, |b| Body::from(b.to_string()));
        let (status, bytes) = self.send(method, path, Some(token), body).await;
        let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
        (status, v)
    }

    pub async fn get(&self, path: &str, token: &str) -> (StatusCode, Value) {
        self.call(Method::GET, path, token, None).await
    }

    pub async fn post(&self, path: &str, token: &str, body: Value) -> (StatusCode, Value) {
        self.call(Method::POST, path, token, Some(body)).await
    }

    pub async fn upload(&self, token: &str, content: &[u8]) -> String {
        let (status, bytes) = self.send(Method::POST, "/uploads", Some(token), Body::from(content.to_vec())).await;
        assert_eq!(status, StatusCode::CREATED);
        let v: Value = serde_json::from_slice(&bytes).unwrap();
        v["evidence_id"].as_str().unwrap().to_owned()
    }

    /// Submit scenario 1, attach a document and approve it.
    pub async fn approved_request(&self) -> String {
        let (status, v) = self.post("/requests", LE, scenario_one()).await;
        assert_eq!(status, StatusCode::CREATED, "{v}");
        let id = v["request_id"].as_str().unwrap().to_owned();
        let doc = self.upload(LE, b"%PDF court order CO-2024-118").await;
        let (status, v) = self.post(&format!("/requests/{id}/documents"), CM, json!({"documents": [doc]})).await;
        assert_eq!(status, StatusCode::OK, "{v}");
        let (status, v) = self.post(&format!("/requests/{id}/decision"), CM, approve_body()).await;
        assert_eq!(status, StatusCode::OK, "{v}");
        id
    }

    pub fn digest(&self) -> String {
        self.svc.lock().unwrap().digest()
    }

    pub fn events(&self) -> u64 {
        self.svc.lock().unwrap().events_appended()
    }
}

pub fn approve_body() -> Value {
    json!({
        "decision": "approve",
        "rationale": "valid court order for subscriber data",
        "public_summary": "Request approved.",
        "response_data_class": "content"
    })
}
