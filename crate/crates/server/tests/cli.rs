mod common;

use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use serde_json::Value;

use clerms_core::custody::EvidenceFormat;
use clerms_core::domain::Role;
use clerms_core::gateway::{Clerms, LogSender};
use clerms_core::time::SystemClock;

fn clerms(data: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clerms"))
        .arg("--data-dir")
        .arg(data)
        .args(args)
        .env_remove("CLERMS_CONFIG")
        .env_remove("CLERMS_TOKEN")
        .env("RUST_LOG", "off")
        .output()
        .unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(clerms(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(clerms(dir.path(), &[]).status.code(), Some(2));
    assert_eq!(clerms(dir.path(), &["request", "list"]).status.code(), Some(2), "missing token");
    assert_eq!(clerms(dir.path(), &["principal", "add", "--role", "janitor"]).status.code(), Some(2));
    assert_eq!(clerms(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn request_commands_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = clerms(dir.path(), &["--json", "principal", "add", "--role", "le_agent", "--name", "Mike Davies"]);
    assert_eq!(out.status.code(), Some(0));
    let token = stdout_json(&out)["token"].as_str().unwrap().to_owned();
    assert_eq!(token.len(), 64);

    let body = dir.path().join("scenario.json");
    std::fs::write(&body, common::scenario_one().to_string()).unwrap();
    let out = clerms(dir.path(), &["--json", "--token", &token, "request", "submit", body.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let id = stdout_json(&out)["request_id"].as_str().unwrap().to_owned();

    let out = clerms(dir.path(), &["--token", &token, "request", "list"]);
    assert_eq!(out.status.code(), Some(0));
    let listing = String::from_utf8(out.stdout).unwrap();
    assert!(listing.starts_with("PRIORITY"));
    assert!(listing.contains(&id));

    let out = clerms(dir.path(), &["--json", "--token", &token, "request", "show", &id]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout_json(&out)["request"]["requester"]["agent_name"], "Mike Davies");

    let mut bad = common::scenario_one();
    bad.as_object_mut().unwrap().remove("target");
    std::fs::write(&body, bad.to_string()).unwrap();
    let out = clerms(dir.path(), &["--json", "--token", &token, "request", "submit", body.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stdout_json(&out)["error"], "ValidationErrors");

    let out = clerms(dir.path(), &["--token", &token, "report", "transparency", "--from", "2024-01-01T00:00:00Z", "--to", "2030-01-01T00:00:00Z"]);
    assert_eq!(out.status.code(), Some(1), "le_agent may not read reports");
}

#[test]
fn evidence_verify_reports_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::config_for(dir.path());
    let id = {
        let (mut svc, _) = Clerms::open(config, Arc::new(SystemClock), Arc::new(LogSender)).unwrap();
        let le = svc.add_principal(Role::LeAgent, "cli-test-token-000001", "Mike").unwrap();
        svc.upload_document(&le, b"signed court order", EvidenceFormat::Document).unwrap().evidence_id
    };
    let id = id.to_string();
    let out = clerms(dir.path(), &["evidence", "verify", &id]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "Ok");

    let chain = dir.path().join("chains").join(format!("{id}.jsonl"));
    let text = std::fs::read_to_string(&chain).unwrap();
    std::fs::write(&chain, text.replacen("stored", "sTored", 1)).unwrap();
    let out = clerms(dir.path(), &["evidence", "verify", &id]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("BrokenAt("));

    let missing = "0".repeat(64);
    assert_eq!(clerms(dir.path(), &["evidence", "verify", &missing]).status.code(), Some(1));
    assert_eq!(clerms(dir.path(), &["evidence", "verify", "xyz"]).status.code(), Some(2));
}

#[test]
fn busy_data_directory_is_a_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::config_for(dir.path());
    let (_held, _) = Clerms::open(config, Arc::new(SystemClock), Arc::new(LogSender)).unwrap();
    let out = clerms(dir.path(), &["principal", "add", "--role", "admin"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("in use"));
}
