//! Remote collection: agents, flows and their results, the agent wire
//! protocol and the server-side log index.

pub mod agent;
pub mod glob;
pub mod logs;
pub mod protocol;
pub mod transport;

use std::collections::{BTreeMap, VecDeque};
use std::net::SocketAddr;

use serde::{Deserialize, Serialize};

use crate::canonical::is_sha256_hex;
use crate::ids::{AgentId, CaseId, EvidenceId, FlowId, PrincipalId};
use crate::time::Timestamp;

pub use glob::PathGlob;
pub use logs::{LogFilter, LogIndex, LogRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Os {
    Linux,
    Windows,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentInfo {
    pub agent_id: AgentId,
    pub hostname: String,
    pub os: Os,
    pub last_seen: Timestamp,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileAction {
    Stat,
    Hash,
    Fetch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FlowKind {
    FileFinder { glob: String, action: FileAction },
    ProcessList,
    DiskImage { device: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowRequest {
    pub flow_id: FlowId,
    pub agent_id: AgentId,
    pub kind: FlowKind,
    pub issued_by: PrincipalId,
    pub case_id: CaseId,
    pub issued_at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowStatus {
    Pending,
    Running,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileItem {
    pub path: String,
    pub size_bytes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence_id: Option<EvidenceId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawProcessEntry")]
pub struct ProcessEntry {
    pub pid: u32,
    pub name: String,
    pub cmdline: String,
    pub remote_endpoints: Vec<SocketAddr>,
}

#[derive(Deserialize)]
struct RawProcessEntry {
    pid: u32,
    name: String,
    cmdline: String,
    #[serde(default)]
    remote_endpoints: Vec<SocketAddr>,
}

impl TryFrom<RawProcessEntry> for ProcessEntry {
    type Error = String;

    fn try_from(raw: RawProcessEntry) -> Result<Self, String> {
        if raw.pid == 0 {
            return Err("pid must be positive".into());
        }
        Ok(Self { pid: raw.pid, name: raw.name, cmdline: raw.cmdline, remote_endpoints: raw.remote_endpoints })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowItems {
    Files(Vec<FileItem>),
    Processes(Vec<ProcessEntry>),
}

impl FlowItems {
    pub fn len(&self) -> usize {
        match self {
            FlowItems::Files(v) => v.len(),
            FlowItems::Processes(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowResult {
    pub flow_id: FlowId,
    pub status: FlowStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub items: Option<FlowItems>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completed_at: Option<Timestamp>,
}

impl FlowResult {
    pub fn pending(flow_id: FlowId) -> Self {
        Self { flow_id, status: FlowStatus::Pending, items: None, error: None, completed_at: None }
    }

    pub fn complete(flow_id: FlowId, items: FlowItems, at: Timestamp) -> Self {
        Self { flow_id, status: FlowStatus::Complete, items: Some(items), error: None, completed_at: Some(at) }
    }

    pub fn failed(flow_id: FlowId, error: impl Into<String>, at: Timestamp) -> Self {
        Self { flow_id, status: FlowStatus::Failed, items: None, error: Some(error.into()), completed_at: Some(at) }
    }

    pub fn files(&self) -> &[FileItem] {
        match &self.items {
            Some(FlowItems::Files(v)) => v,
            _ => &[],
        }
    }

    pub fn processes(&self) -> &[ProcessEntry] {
        match &self.items {
            Some(FlowItems::Processes(v)) => v,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FlowError {
    #[error("UnknownAgent({0})")]
    UnknownAgent(AgentId),
    #[error("UnknownFlow({0})")]
    UnknownFlow(FlowId),
    #[error("CaseClosed({0})")]
    CaseClosed(CaseId),
    #[error("Forbidden: {0}")]
    Forbidden(String),
    #[error("MalformedHello: {0}")]
    MalformedHello(String),
    #[error("InvalidFlow: {0}")]
    InvalidFlow(String),
    #[error("WrongAgent: flow {flow} belongs to another agent")]
    WrongAgent { flow: FlowId },
    #[error("FlowNotRunning({0})")]
    FlowNotRunning(FlowId),
    #[error("PathEscape({0})")]
    PathEscape(String),
    #[error("FetchIntegrity: {0}")]
    FetchIntegrity(String),
    #[error("AgentIoError: {0}")]
    AgentIoError(String),
}

impl FlowError {
    pub fn name(&self) -> &'static str {
        match self {
            FlowError::UnknownAgent(_) => "UnknownAgent",
            FlowError::UnknownFlow(_) => "UnknownFlow",
            FlowError::CaseClosed(_) => "CaseClosed",
            FlowError::Forbidden(_) => "Forbidden",
            FlowError::MalformedHello(_) => "MalformedHello",
            FlowError::InvalidFlow(_) => "InvalidFlow",
            FlowError::WrongAgent { .. } => "WrongAgent",
            FlowError::FlowNotRunning(_) => "FlowNotRunning",
            FlowError::PathEscape(_) => "PathEscape",
            FlowError::FetchIntegrity(_) => "FetchIntegrity",
            FlowError::AgentIoError(_) => "AgentIoError",
        }
    }
}

/// Checks a flow kind before it is queued.
pub fn validate_kind(kind: &FlowKind) -> Result<(), FlowError> {
    match kind {
        FlowKind::FileFinder { glob, .. } => PathGlob::parse(glob).map(|_| ()),
        FlowKind::DiskImage { device } if device.trim().is_empty() => {
            Err(FlowError::InvalidFlow("empty device".into()))
        }
        _ => Ok(()),
    }
}

/// Checks a reported result against the flow that produced it.
pub fn validate_result(request: &FlowRequest, result: &FlowResult) -> Result<(), FlowError> {
    if result.flow_id != request.flow_id {
        return Err(FlowError::UnknownFlow(result.flow_id));
    }
    match result.status {
        FlowStatus::Complete => {
            let items = result
                .items
                .as_ref()
                .ok_or_else(|| FlowError::InvalidFlow("complete result without items".into()))?;
            if result.error.is_some() {
                return Err(FlowError::InvalidFlow("complete result carries an error".into()));
            }
            match (&request.kind, items) {
                (FlowKind::FileFinder { glob, action }, FlowItems::Files(files)) => {
                    let pattern = PathGlob::parse(glob)?;
                    for f in files {
                        if f.path.split('/').any(|s| s == "..") || !pattern.matches_path(&f.path) {
                            return Err(FlowError::PathEscape(f.path.clone()));
                        }
                        if let Some(h) = &f.sha256 {
                            if !is_sha256_hex(h) {
                                return Err(FlowError::FetchIntegrity(format!("{}: bad digest", f.path)));
                            }
                        }
                        if *action == FileAction::Fetch {
                            match (&f.evidence_id, &f.sha256) {
                                (Some(id), Some(h)) if id.as_str() == h => {}
                                (Some(_), Some(_)) => {
                                    return Err(FlowError::FetchIntegrity(format!(
                                        "{}: evidence id differs from agent digest",
                                        f.path
                                    )))
                                }
                                _ => {
                                    return Err(FlowError::FetchIntegrity(format!(
                                        "{}: fetched content missing",
                                        f.path
                                    )))
                                }
                            }
                        }
                    }
                }
                (FlowKind::ProcessList, FlowItems::Processes(_)) => {}
                _ => return Err(FlowError::InvalidFlow("result items do not fit the flow kind".into())),
            }
        }
        FlowStatus::Failed => {
            if result.error.is_none() {
                return Err(FlowError::InvalidFlow("failed result without error".into()));
            }
        }
        FlowStatus::Pending | FlowStatus::Running => {
            return Err(FlowError::InvalidFlow("result must be complete or failed".into()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub request: FlowRequest,
    pub result: FlowResult,
}

/// Server-side registry of agents and flows, with a FIFO queue per agent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowBoard {
    agents: BTreeMap<AgentId, AgentInfo>,
    flows: BTreeMap<FlowId, FlowRecord>,
    queues: BTreeMap<AgentId, VecDeque<FlowId>>,
}

impl FlowBoard {
    pub fn agent(&self, id: &AgentId) -> Option<&AgentInfo> {
        self.agents.get(id)
    }

    pub fn agents(&self) -> impl Iterator<Item = &AgentInfo> {
        self.agents.values()
    }

    pub fn agent_by_hostname(&self, hostname: &str) -> Option<&AgentInfo> {
        self.agents.values().find(|a| a.hostname == hostname)
    }

    pub fn flow(&self, id: &FlowId) -> Option<&FlowRecord> {
        self.flows.get(id)
    }

    pub fn flows(&self) -> impl Iterator<Item = &FlowRecord> {
        self.flows.values()
    }

    pub fn queued(&self, agent: &AgentId) -> usize {
        self.queues.get(agent).map_or(0, VecDeque::len)
    }

    /// Create or refresh an agent. `last_seen` never moves backwards.
    pub fn register(&mut self, info: AgentInfo) -> Result<AgentInfo, FlowError> {
        if info.hostname.trim().is_empty() {
            return Err(FlowError::MalformedHello("hostname is empty".into()));
        }
        let entry = self.agents.entry(info.agent_id).or_insert_with(|| info.clone());
        entry.hostname = info.hostname;
        entry.os = info.os;
        entry.labels = info.labels;
        entry.last_seen = entry.last_seen.max(info.last_seen);
        Ok(entry.clone())
    }

    /// Queue a flow. Case state and issuer role are checked by the caller.
    pub fn launch(&mut self, request: FlowRequest) -> Result<FlowId, FlowError> {
        if !self.agents.contains_key(&request.agent_id) {
            return Err(FlowError::UnknownAgent(request.agent_id));
        }
        if self.flows.contains_key(&request.flow_id) {
            return Err(FlowError::InvalidFlow(format!("flow {} already exists", request.flow_id)));
        }
        validate_kind(&request.kind)?;
        let id = request.flow_id;
        self.queues.entry(request.agent_id).or_default().push_back(id);
        self.flows.insert(id, FlowRecord { result: FlowResult::pending(id), request });
        Ok(id)
    }

    /// Hand every queued flow to the agent, oldest first, and mark them running.
    pub fn poll(&mut self, agent: &AgentId, at: Timestamp) -> Result<Vec<FlowRequest>, FlowError> {
        let info = self.agents.get_mut(agent).ok_or(FlowError::UnknownAgent(*agent))?;
        info.last_seen = info.last_seen.max(at);
        let queue = self.queues.remove(agent).unwrap_or_default();
        let mut out = Vec::with_capacity(queue.len());
        for id in queue {
            let rec = self.flows.get_mut(&id).expect("queued flow exists");
            rec.result.status = FlowStatus::Running;
            out.push(rec.request.clone());
        }
        Ok(out)
    }

    pub fn complete(&mut self, agent: &AgentId, result: FlowResult, at: Timestamp) -> Result<(), FlowError> {
        let info = self.agents.get_mut(agent).ok_or(FlowError::UnknownAgent(*agent))?;
        let rec = self.flows.get(&result.flow_id).ok_or(FlowError::UnknownFlow(result.flow_id))?;
        if rec.request.agent_id != *agent {
            return Err(FlowError::WrongAgent { flow: result.flow_id });
        }
        if rec.result.status != FlowStatus::Running {
            return Err(FlowError::FlowNotRunning(result.flow_id));
        }
        validate_result(&rec.request, &result)?;
        info.last_seen = info.last_seen.max(at);
        let id = result.flow_id;
        self.flows.get_mut(&id).expect("checked above").result = result;
        Ok(())
    }
}
