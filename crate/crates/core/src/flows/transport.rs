//! Server side of the agent channel: a blocking TCP listener with one
//! thread per connection, dispatching to an [`AgentHandler`].

use std::collections::HashMap;
use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::Arc;
use std::thread::JoinHandle;

use base64::Engine;
use sha2::{Digest, Sha256};

use super::logs::MalformedRecord;
use super::protocol::{read_message, write_message, Message, ProtocolError, RegisterPayload, ResultChunk, MAX_BODY};
use super::{AgentInfo, FlowError, FlowRequest, FlowResult};
use crate::ids::{AgentId, FlowId};

/// An error reported back to the agent as an ERROR frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteError {
    pub code: String,
    pub message: String,
}

impl RemoteError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self { code: code.to_owned(), message: message.into() }
    }

    fn to_message(&self) -> Message {
        Message::error(&self.code, self.message.clone())
    }
}

impl From<FlowError> for RemoteError {
    fn from(e: FlowError) -> Self {
        Self::new(e.name(), e.to_string())
    }
}

pub trait AgentHandler: Send + Sync {
    fn register(&self, hello: RegisterPayload) -> Result<AgentInfo, RemoteError>;
    fn poll(&self, agent: AgentId) -> Result<Vec<FlowRequest>, RemoteError>;
    fn result_chunk(&self, agent: AgentId, chunk: ResultChunk) -> Result<(), RemoteError>;
    fn flow_done(&self, agent: AgentId, result: FlowResult) -> Result<(), RemoteError>;
    /// Returns the records that could not be parsed.
    fn log_batch(&self, agent: AgentId, records: Vec<serde_json::Value>) -> Result<Vec<MalformedRecord>, RemoteError>;
}

/// Accept connections forever, one thread each.
pub fn serve(listener: TcpListener, handler: Arc<dyn AgentHandler>) {
    for stream in listener.incoming() {
        match stream {
            Ok(stream) => {
                let handler = Arc::clone(&handler);
                std::thread::spawn(move || {
                    let peer = stream.peer_addr().ok();
                    if let Err(e) = handle_connection(stream, handler.as_ref()) {
                        log::warn!("agent connection {peer:?} ended: {e}");
                    }
                });
            }
            Err(e) => log::warn!("accept failed: {e}"),
        }
    }
}

/// Bind and serve on a background thread. Returns the bound address.
pub fn spawn(addr: &str, handler: Arc<dyn AgentHandler>) -> io::Result<(SocketAddr, JoinHandle<()>)> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    let join = std::thread::spawn(move || serve(listener, handler));
    Ok((local, join))
}

/// Drive one agent connection until it closes. The first frame must be a
/// REGISTER. REGISTER and POLL get a direct reply; other agent frames are
/// one-way, and any error they cause is sent ahead of the next reply.
pub fn handle_connection(mut stream: TcpStream, handler: &dyn AgentHandler) -> Result<(), ProtocolError> {
    stream.set_nodelay(true)?;
    let mut agent: Option<AgentId> = None;
    let mut pending: Vec<Message> = Vec::new();
    loop {
        let msg = match read_message(&mut stream) {
            Ok(Some(m)) => m,
            Ok(None) => return Ok(()),
            Err(ProtocolError::Io(e)) => return Err(ProtocolError::Io(e)),
            Err(e) => {
                // The stream may be out of step now, so report and hang up.
                let _ = write_message(&mut stream, &Message::error(e.name(), e.to_string()));
                return Err(e);
            }
        };
        let reply = match (msg, agent) {
            (Message::Register(hello), _) => match handler.register(hello) {
                Ok(info) => {
                    agent = Some(info.agent_id);
                    Some(Message::Register(RegisterPayload {
                        agent_id: Some(info.agent_id),
                        hostname: info.hostname,
                        os: info.os,
                        labels: info.labels,
                    }))
                }
                Err(e) => Some(e.to_message()),
            },
            (_, None) => Some(Message::error("MalformedHello", "first frame must be REGISTER")),
            (Message::Poll { agent_id }, Some(me)) if agent_id != me => {
                Some(Message::error("UnknownAgent", format!("connection is registered as {me}")))
            }
            (Message::Poll { .. }, Some(me)) => match handler.poll(me) {
                Ok(flows) => Some(Message::FlowAssign { flows }),
                Err(e) => Some(e.to_message()),
            },
            (Message::ResultChunk(chunk), Some(me)) => {
                if let Err(e) = handler.result_chunk(me, chunk) {
                    pending.push(e.to_message());
                }
                None
            }
            (Message::FlowDone { result }, Some(me)) => {
                if let Err(e) = handler.flow_done(me, result) {
                    pending.push(e.to_message());
                }
                None
            }
            (Message::LogBatch { records }, Some(me)) => {
                match handler.log_batch(me, records) {
                    Ok(bad) => pending.extend(
                        bad.into_iter()
                            .map(|b| Message::error("MalformedRecord", format!("index {}: {}", b.index, b.reason))),
                    ),
                    Err(e) => pending.push(e.to_message()),
                }
                None
            }
            (other @ (Message::FlowAssign { .. } | Message::Error { .. }), Some(_)) => {
                pending.push(Message::error("MalformedFrame", format!("{} is server-to-agent only", other.type_name())));
                None
            }
        };
        if let Some(reply) = reply {
            for e in pending.drain(..) {
                write_message(&mut stream, &e)?;
            }
            write_message(&mut stream, &reply)?;
        }
    }
}

/// A file fully received from an agent and checked against its trailer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReceivedFile {
    pub flow_id: FlowId,
    pub path: String,
    pub content: Vec<u8>,
    pub sha256: String,
}

#[derive(Default)]
struct Partial {
    content: Vec<u8>,
    hasher: Sha256,
}

/// Reassembles RESULT_CHUNK streams per (flow, path).
#[derive(Default)]
pub struct ChunkAssembler {
    partial: HashMap<(FlowId, String), Partial>,
    limit: Option<u64>,
}

impl ChunkAssembler {
    /// Refuse files larger than `limit` bytes.
    pub fn with_limit(limit: u64) -> Self {
        Self { partial: HashMap::new(), limit: Some(limit) }
    }

    pub fn in_progress(&self) -> usize {
        self.partial.len()
    }

    /// Drop everything buffered for a flow.
    pub fn discard_flow(&mut self, flow: FlowId) {
        self.partial.retain(|(f, _), _| *f != flow);
    }

    /// Feed one chunk. Returns the file once its final chunk arrives.
    pub fn accept(&mut self, chunk: ResultChunk) -> Result<Option<ReceivedFile>, FlowError> {
        let key = (chunk.flow_id, chunk.path.clone());
        let data = base64::engine::general_purpose::STANDARD
            .decode(chunk.data.as_bytes())
            .map_err(|e| FlowError::FetchIntegrity(format!("{}: bad base64: {e}", chunk.path)))?;
        if data.len() > MAX_BODY {
            return Err(FlowError::FetchIntegrity(format!("{}: oversized chunk", chunk.path)));
        }
        let part = self.partial.entry(key.clone()).or_default();
        if chunk.offset != part.content.len() as u64 {
            let expected = part.content.len();
            self.partial.remove(&key);
            return Err(FlowError::FetchIntegrity(format!(
                "{}: chunk at offset {} but {} bytes received",
                chunk.path, chunk.offset, expected
            )));
        }
        if let Some(limit) = self.limit {
            if part.content.len() as u64 + data.len() as u64 > limit {
                self.partial.remove(&key);
                return Err(FlowError::FetchIntegrity(format!("{}: exceeds {limit} bytes", chunk.path)));
            }
        }
        part.hasher.update(&data);
        part.content.extend_from_slice(&data);
        if !chunk.eof {
            return Ok(None);
        }
        let part = self.partial.remove(&key).expect("entry exists");
        let digest = hex::encode(part.hasher.finalize());
        if chunk.sha256.as_deref() != Some(digest.as_str()) {
            return Err(FlowError::FetchIntegrity(format!("{}: digest does not match trailer", chunk.path)));
        }
        if chunk.size_bytes != Some(part.content.len() as u64) {
            return Err(FlowError::FetchIntegrity(format!("{}: size does not match trailer", chunk.path)));
        }
        Ok(Some(ReceivedFile { flow_id: chunk.flow_id, path: chunk.path, content: part.content, sha256: digest }))
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Mutex;

    use super::*;
    use crate::canonical::sha256_hex;
    use crate::flows::agent::{AgentSession, ProcessSource, SimAgent};
    use crate::flows::{FlowBoard, FlowKind, Os};
    use crate::ids::{CaseId, PrincipalId};
    use crate::time::Timestamp;

    fn chunk(flow: FlowId, offset: u64, data: &[u8], eof: Option<&[u8]>) -> ResultChunk {
        ResultChunk {
            flow_id: flow,
            path: "/f".into(),
            offset,
            data: base64::engine::general_purpose::STANDARD.encode(data),
            eof: eof.is_some(),
            size_bytes: eof.map(|all| all.len() as u64),
            sha256: eof.map(sha256_hex),
        }
    }

    #[test]
    fn assembler_checks_offsets_and_trailer() {
        let f = FlowId::new();
        let mut a = ChunkAssembler::default();
        assert_eq!(a.accept(chunk(f, 0, b"ab", None)).unwrap(), None);
        let done = a.accept(chunk(f, 2, b"cd", Some(b"abcd"))).unwrap().unwrap();
        assert_eq!(done.content, b"abcd");
        assert_eq!(a.in_progress(), 0);

        a.accept(chunk(f, 0, b"ab", None)).unwrap();
        assert!(a.accept(chunk(f, 5, b"cd", None)).is_err());
        let mut bad = chunk(f, 0, b"xy", Some(b"xy"));
        bad.sha256 = Some(sha256_hex(b"other"));
        assert!(matches!(a.accept(bad), Err(FlowError::FetchIntegrity(_))));
        let mut small = ChunkAssembler::with_limit(3);
        assert!(small.accept(chunk(f, 0, b"abcd", None)).is_err());
    }

    /// Minimal handler over a bare flow board.
    struct BoardHandler {
        board: Mutex<FlowBoard>,
        files: Mutex<Vec<ReceivedFile>>,
        assembler: Mutex<ChunkAssembler>,
    }

    impl AgentHandler for BoardHandler {
        fn register(&self, hello: RegisterPayload) -> Result<AgentInfo, RemoteError> {
            let mut b = self.board.lock().unwrap();
            let id = hello
                .agent_id
                .or_else(|| b.agent_by_hostname(&hello.hostname).map(|a| a.agent_id))
                .unwrap_or_default();
            let info = AgentInfo {
                agent_id: id,
                hostname: hello.hostname,
                os: hello.os,
                last_seen: Timestamp::from_millis(0),
                labels: hello.labels,
            };
            Ok(b.register(info)?)
        }
        fn poll(&self, agent: AgentId) -> Result<Vec<FlowRequest>, RemoteError> {
            Ok(self.board.lock().unwrap().poll(&agent, Timestamp::from_millis(1))?)
        }
        fn result_chunk(&self, _agent: AgentId, chunk: ResultChunk) -> Result<(), RemoteError> {
            if let Some(f) = self.assembler.lock().unwrap().accept(chunk)? {
                self.files.lock().unwrap().push(f);
            }
            Ok(())
        }
        fn flow_done(&self, agent: AgentId, mut result: FlowResult) -> Result<(), RemoteError> {
            if let Some(crate::flows::FlowItems::Files(items)) = result.items.as_mut() {
                for item in items {
                    item.evidence_id = item.sha256.as_deref().and_then(|h| crate::ids::EvidenceId::parse(h).ok());
                }
            }
            Ok(self.board.lock().unwrap().complete(&agent, result, Timestamp::from_millis(2))?)
        }
        fn log_batch(&self, _agent: AgentId, records: Vec<serde_json::Value>) -> Result<Vec<MalformedRecord>, RemoteError> {
            Ok(crate::flows::LogIndex::default().ingest(&records).1)
        }
    }

    #[test]
    fn end_to_end_over_tcp() {
        let handler = Arc::new(BoardHandler {
            board: Mutex::new(FlowBoard::default()),
            files: Mutex::new(vec![]),
            assembler: Mutex::new(ChunkAssembler::default()),
        });
        let (addr, _join) = spawn("127.0.0.1:0", handler.clone()).unwrap();

        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("data")).unwrap();
        std::fs::write(dir.path().join("data/a.db"), b"alpha").unwrap();
        let sim = SimAgent::new(dir.path(), ProcessSource::None).unwrap();
        let hello = RegisterPayload { agent_id: None, hostname: "web01".into(), os: Os::Linux, labels: vec![] };
        let mut session = AgentSession::connect(addr, hello.clone()).unwrap();
        let again = AgentSession::connect(addr, hello).unwrap();
        assert_eq!(session.agent_id(), again.agent_id());

        let req = FlowRequest {
            flow_id: FlowId::new(),
            agent_id: session.agent_id(),
            kind: FlowKind::FileFinder { glob: "/data/*".into(), action: crate::flows::FileAction::Fetch },
            issued_by: PrincipalId::new(),
            case_id: CaseId::new(),
            issued_at: Timestamp::from_millis(0),
        };
        handler.board.lock().unwrap().launch(req.clone()).unwrap();
        let results = session.run_pending(&sim).unwrap();
        assert_eq!(results.len(), 1);
        assert!(session.server_errors().is_empty(), "{:?}", session.server_errors());
        let files = handler.files.lock().unwrap();
        assert_eq!(files.len(), 1);
        assert_eq!(files[0].content, b"alpha");
        let rec = handler.board.lock().unwrap().flow(&req.flow_id).unwrap().clone();
        assert_eq!(rec.result.status, crate::flows::FlowStatus::Complete);

        session.ship_logs(vec![serde_json::json!({"bad": true})]).unwrap();
        assert!(session.poll().unwrap().is_empty());
        assert_eq!(session.take_server_errors()[0].0, "MalformedRecord");
    }

    #[test]
    fn garbage_and_unregistered_frames_are_refused() {
        let handler = Arc::new(BoardHandler {
            board: Mutex::new(FlowBoard::default()),
            files: Mutex::new(vec![]),
            assembler: Mutex::new(ChunkAssembler::default()),
        });
        let (addr, _join) = spawn("127.0.0.1:0", handler).unwrap();

        let mut s = TcpStream::connect(addr).unwrap();
        write_message(&mut s, &Message::Poll { agent_id: AgentId::new() }).unwrap();
        match read_message(&mut s).unwrap().unwrap() {
            Message::Error { code, .. } => assert_eq!(code, "MalformedHello"),
            other => panic!("{other:?}"),
        }

        let mut s = TcpStream::connect(addr).unwrap();
        use std::io::Write;
        s.write_all(b"\x00\x00\x00\x03abc").unwrap();
        match read_message(&mut s).unwrap().unwrap() {
            Message::Error { code, .. } => assert_eq!(code, "MalformedFrame"),
            other => panic!("{other:?}"),
        }
        assert!(read_message(&mut s).unwrap().is_none());

        let hello = RegisterPayload { agent_id: None, hostname: String::new(), os: Os::Other, labels: vec![] };
        assert!(AgentSession::connect(addr, hello).is_err());
    }
}
