//! Simulated collection agent.
//!
//! [`SimAgent`] executes flows against a sandbox directory that stands in
//! for the host filesystem and a JSON process table. [`AgentSession`] is the
//! client side of the wire protocol: the agent dials out, registers, polls
//! for work and streams results back.

use std::fs::File;
use std::io::{self, Read};
use std::net::{TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use base64::Engine;
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

use super::protocol::{read_message, write_message, Message, ProtocolError, RegisterPayload, ResultChunk, CHUNK_SIZE};
use super::{FileAction, FileItem, FlowError, FlowItems, FlowKind, FlowRequest, FlowResult, PathGlob, ProcessEntry};
use crate::ids::{AgentId, FlowId};
use crate::time::{Clock, SystemClock};

pub const DISK_IMAGE_UNSUPPORTED: &str = "not supported in prototype";

/// A file the finder matched, with its sandbox-relative path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoundFile {
    pub path: String,
    pub local: PathBuf,
    pub size_bytes: u64,
}

#[derive(Debug, Clone)]
pub enum ProcessSource {
    None,
    Table(Vec<ProcessEntry>),
    File(PathBuf),
}

pub struct SimAgent {
    root: PathBuf,
    processes: ProcessSource,
    clock: Arc<dyn Clock>,
}

impl SimAgent {
    pub fn new(root: impl AsRef<Path>, processes: ProcessSource) -> io::Result<Self> {
        Self::with_clock(root, processes, Arc::new(SystemClock))
    }

    pub fn with_clock(root: impl AsRef<Path>, processes: ProcessSource, clock: Arc<dyn Clock>) -> io::Result<Self> {
        let root = root.as_ref().canonicalize()?;
        Ok(Self { root, processes, clock })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Files under the sandbox matching `glob`, sorted by path. Symlinks are
    /// never followed.
    pub fn find_files(&self, glob: &str) -> Result<Vec<FoundFile>, FlowError> {
        let pattern = PathGlob::parse(glob)?;
        let mut start = self.root.clone();
        start.extend(pattern.literal_prefix());
        let meta = match std::fs::symlink_metadata(&start) {
            Ok(m) => m,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(vec![]),
            Err(e) => return Err(FlowError::AgentIoError(e.to_string())),
        };
        if meta.file_type().is_symlink() {
            let target = start.canonicalize().map_err(|e| FlowError::AgentIoError(e.to_string()))?;
            if !target.starts_with(&self.root) {
                return Err(FlowError::PathEscape(glob.to_owned()));
            }
        }
        let mut found = Vec::new();
        for entry in WalkDir::new(&start).follow_links(false).follow_root_links(false) {
            let entry = entry.map_err(|e| FlowError::AgentIoError(e.to_string()))?;
            if !entry.file_type().is_file() {
                continue;
            }
            let rel = entry.path().strip_prefix(&self.root).map_err(|_| FlowError::PathEscape(glob.to_owned()))?;
            let segs: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
            if !pattern.matches(&segs) {
                continue;
            }
            let size_bytes = entry.metadata().map_err(|e| FlowError::AgentIoError(e.to_string()))?.len();
            found.push(FoundFile { path: format!("/{}", segs.join("/")), local: entry.into_path(), size_bytes });
        }
        found.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(found)
    }

    pub fn process_list(&self) -> Result<Vec<ProcessEntry>, FlowError> {
        match &self.processes {
            ProcessSource::None => Err(FlowError::AgentIoError("no process table configured".into())),
            ProcessSource::Table(t) => Ok(t.clone()),
            ProcessSource::File(p) => load_process_table(p),
        }
    }

    /// Run one flow. Fetched file content goes to `sink` as chunks before the
    /// result is returned.
    pub fn execute(
        &self,
        request: &FlowRequest,
        sink: &mut dyn FnMut(ResultChunk) -> Result<(), FlowError>,
    ) -> FlowResult {
        let id = request.flow_id;
        let outcome = match &request.kind {
            FlowKind::FileFinder { glob, action } => self.file_finder(id, glob, *action, sink).map(FlowItems::Files),
            FlowKind::ProcessList => self.process_list().map(FlowItems::Processes),
            FlowKind::DiskImage { .. } => Err(FlowError::AgentIoError(DISK_IMAGE_UNSUPPORTED.into())),
        };
        let now = self.clock.now();
        match outcome {
            Ok(items) => FlowResult::complete(id, items, now),
            Err(FlowError::AgentIoError(msg)) if msg == DISK_IMAGE_UNSUPPORTED => FlowResult::failed(id, msg, now),
            Err(e) => FlowResult::failed(id, e.to_string(), now),
        }
    }

    fn file_finder(
        &self,
        flow_id: FlowId,
        glob: &str,
        action: FileAction,
        sink: &mut dyn FnMut(ResultChunk) -> Result<(), FlowError>,
    ) -> Result<Vec<FileItem>, FlowError> {
        let mut items = Vec::new();
        for f in self.find_files(glob)? {
            let item = match action {
                FileAction::Stat => FileItem { path: f.path, size_bytes: f.size_bytes, sha256: None, evidence_id: None },
                FileAction::Hash => {
                    let (size, digest) = stream_file(&f, flow_id, &mut |_| Ok(()))?;
                    FileItem { path: f.path, size_bytes: size, sha256: Some(digest), evidence_id: None }
                }
                FileAction::Fetch => {
                    let (size, digest) = stream_file(&f, flow_id, sink)?;
                    FileItem { path: f.path, size_bytes: size, sha256: Some(digest), evidence_id: None }
                }
            };
            items.push(item);
        }
        Ok(items)
    }
}

pub fn load_process_table(path: &Path) -> Result<Vec<ProcessEntry>, FlowError> {
    let bytes = std::fs::read(path).map_err(|e| FlowError::AgentIoError(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| FlowError::AgentIoError(format!("{}: {e}", path.display())))
}

/// Read a file in fixed-size chunks, hashing as it goes. The last chunk
/// carries the size and digest of exactly the bytes that were sent.
fn stream_file(
    f: &FoundFile,
    flow_id: FlowId,
    sink: &mut dyn FnMut(ResultChunk) -> Result<(), FlowError>,
) -> Result<(u64, String), FlowError> {
    let io_err = |e: io::Error| FlowError::AgentIoError(format!("{}: {e}", f.path));
    let mut file = File::open(&f.local).map_err(io_err)?;
    let mut hasher = Sha256::new();
    let mut offset = 0u64;
    let mut buf = vec![0u8; CHUNK_SIZE];
    loop {
        let n = read_full(&mut file, &mut buf).map_err(io_err)?;
        hasher.update(&buf[..n]);
        let eof = n < CHUNK_SIZE;
        let total = offset + n as u64;
        let digest = eof.then(|| hex::encode(hasher.clone().finalize()));
        sink(ResultChunk {
            flow_id,
            path: f.path.clone(),
            offset,
            data: base64::engine::general_purpose::STANDARD.encode(&buf[..n]),
            eof,
            size_bytes: eof.then_some(total),
            sha256: digest.clone(),
        })?;
        offset = total;
        if let Some(d) = digest {
            return Ok((total, d));
        }
    }
}

fn read_full(r: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("server rejected request: {code}: {message}")]
    Rejected { code: String, message: String },
    #[error("connection closed by server")]
    Closed,
    #[error("unexpected {0} from server")]
    Unexpected(&'static str),
}

impl From<io::Error> for AgentError {
    fn from(e: io::Error) -> Self {
        AgentError::Protocol(ProtocolError::Io(e))
    }
}

/// One agent connection. Results and log batches are one-way; the server
/// reports problems with them as ERROR frames ahead of its next reply, which
/// are collected in [`AgentSession::server_errors`].
pub struct AgentSession {
    stream: TcpStream,
    agent_id: AgentId,
    server_errors: Vec<(String, String)>,
}

impl AgentSession {
    pub fn connect(addr: impl ToSocketAddrs, hello: RegisterPayload) -> Result<Self, AgentError> {
        let mut stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        write_message(&mut stream, &Message::Register(hello))?;
        let mut session = Self { stream, agent_id: AgentId::default(), server_errors: Vec::new() };
        match session.reply()? {
            Message::Register(RegisterPayload { agent_id: Some(id), .. }) => {
                session.agent_id = id;
                Ok(session)
            }
            other => Err(AgentError::Unexpected(other.type_name())),
        }
    }

    pub fn agent_id(&self) -> AgentId {
        self.agent_id
    }

    pub fn server_errors(&self) -> &[(String, String)] {
        &self.server_errors
    }

    pub fn take_server_errors(&mut self) -> Vec<(String, String)> {
        std::mem::take(&mut self.server_errors)
    }

    fn reply(&mut self) -> Result<Message, AgentError> {
        loop {
            match read_message(&mut self.stream)? {
                None => return Err(AgentError::Closed),
                Some(Message::Error { code, message }) => {
                    // A rejection of the request itself ends the exchange;
                    // anything else is about an earlier one-way message.
                    if code == "MalformedHello" || code == "UnknownAgent" || code == "MalformedFrame" {
                        return Err(AgentError::Rejected { code, message });
                    }
                    log::warn!("server error: {code}: {message}");
                    self.server_errors.push((code, message));
                }
                Some(m) => return Ok(m),
            }
        }
    }

    pub fn poll(&mut self) -> Result<Vec<FlowRequest>, AgentError> {
        write_message(&mut self.stream, &Message::Poll { agent_id: self.agent_id })?;
        match self.reply()? {
            Message::FlowAssign { flows } => Ok(flows),
            other => Err(AgentError::Unexpected(other.type_name())),
        }
    }

    pub fn send(&mut self, m: &Message) -> Result<(), AgentError> {
        write_message(&mut self.stream, m).map_err(Into::into)
    }

    pub fn ship_logs(&mut self, records: Vec<serde_json::Value>) -> Result<(), AgentError> {
        self.send(&Message::LogBatch { records })
    }

    /// Run every flow assigned to this agent until a poll comes back empty.
    /// The closing poll doubles as a barrier: the server has processed every
    /// frame sent before it. Returns the results that were sent.
    pub fn run_pending(&mut self, agent: &SimAgent) -> Result<Vec<FlowResult>, AgentError> {
        let mut done = Vec::new();
        loop {
            let flows = self.poll()?;
            if flows.is_empty() {
                return Ok(done);
            }
            for flow in flows {
                let mut send_err = None;
                let result = agent.execute(&flow, &mut |chunk| {
                    write_message(&mut self.stream, &Message::ResultChunk(chunk)).map_err(|e| {
                        let msg = e.to_string();
                        send_err = Some(e);
                        FlowError::AgentIoError(msg)
                    })
                });
                if let Some(e) = send_err {
                    return Err(e.into());
                }
                self.send(&Message::FlowDone { result: result.clone() })?;
                done.push(result);
            }
        }
    }

    /// Poll forever at `interval`.
    pub fn run_forever(&mut self, agent: &SimAgent, interval: Duration) -> Result<(), AgentError> {
        loop {
            for r in self.run_pending(agent)? {
                log::info!("flow {} finished: {:?}", r.flow_id, r.status);
            }
            std::thread::sleep(interval);
        }
    }
}
