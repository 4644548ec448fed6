//! Agent wire protocol.
//!
//! A frame is a 4-byte big-endian body length followed by a UTF-8 JSON body
//! `{"v":1,"type":...,"payload":...}`. Bodies are capped at 16 MiB.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{FlowRequest, FlowResult, Os};
use crate::ids::{AgentId, FlowId};

pub const VERSION: u64 = 1;
pub const MAX_BODY: usize = 16 * 1024 * 1024;
/// Fetch streaming chunk size.
pub const CHUNK_SIZE: usize = 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterPayload {
    /// Absent on first contact; the server's reply always carries it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_id: Option<AgentId>,
    pub hostname: String,
    pub os: Os,
    #[serde(default)]
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultChunk {
    pub flow_id: FlowId,
    pub path: String,
    pub offset: u64,
    /// Base64 (standard alphabet) chunk bytes.
    pub data: String,
    pub eof: bool,
    /// Total file size, set on the final chunk.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_bytes: Option<u64>,
    /// Agent-side SHA-256 of the whole file, set on the final chunk.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Message {
    Register(RegisterPayload),
    Poll { agent_id: AgentId },
    FlowAssign { flows: Vec<FlowRequest> },
    ResultChunk(ResultChunk),
    FlowDone { result: FlowResult },
    /// Records stay untyped here so one bad record can be reported by index.
    LogBatch { records: Vec<Value> },
    Error { code: String, message: String },
}

impl Message {
    pub fn type_name(&self) -> &'static str {
        match self {
            Message::Register(_) => "REGISTER",
            Message::Poll { .. } => "POLL",
            Message::FlowAssign { .. } => "FLOW_ASSIGN",
            Message::ResultChunk(_) => "RESULT_CHUNK",
            Message::FlowDone { .. } => "FLOW_DONE",
            Message::LogBatch { .. } => "LOG_BATCH",
            Message::Error { .. } => "ERROR",
        }
    }

    pub fn error(code: &str, message: impl Into<String>) -> Self {
        Message::Error { code: code.to_owned(), message: message.into() }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("FrameTooLarge: {0} bytes")]
    FrameTooLarge(u64),
    #[error("MalformedFrame: {0}")]
    MalformedFrame(String),
    #[error("UnsupportedVersion({0})")]
    UnsupportedVersion(u64),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

impl ProtocolError {
    pub fn name(&self) -> &'static str {
        match self {
            ProtocolError::FrameTooLarge(_) => "FrameTooLarge",
            ProtocolError::MalformedFrame(_) => "MalformedFrame",
            ProtocolError::UnsupportedVersion(_) => "UnsupportedVersion",
            ProtocolError::Io(_) => "Io",
        }
    }
}

fn malformed(reason: impl Into<String>) -> ProtocolError {
    ProtocolError::MalformedFrame(reason.into())
}

pub fn encode_body(message: &Message) -> Result<Vec<u8>, ProtocolError> {
    let mut value = serde_json::to_value(message).map_err(|e| malformed(e.to_string()))?;
    value
        .as_object_mut()
        .expect("adjacently tagged enum is an object")
        .insert("v".into(), VERSION.into());
    let body = serde_json::to_vec(&value).map_err(|e| malformed(e.to_string()))?;
    if body.len() > MAX_BODY {
        return Err(ProtocolError::FrameTooLarge(body.len() as u64));
    }
    Ok(body)
}

pub fn encode_frame(message: &Message) -> Result<Vec<u8>, ProtocolError> {
    let body = encode_body(message)?;
    let mut frame = Vec::with_capacity(4 + body.len());
    frame.extend_from_slice(&(body.len() as u32).to_be_bytes());
    frame.extend_from_slice(&body);
    Ok(frame)
}

pub fn decode_body(body: &[u8]) -> Result<Message, ProtocolError> {
    let text = std::str::from_utf8(body).map_err(|_| malformed("body is not UTF-8"))?;
    let mut value: Value = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
    let obj = value.as_object_mut().ok_or_else(|| malformed("body is not an object"))?;
    let v = obj
        .remove("v")
        .ok_or_else(|| malformed("missing version"))?
        .as_u64()
        .ok_or_else(|| malformed("version is not an unsigned integer"))?;
    if v != VERSION {
        return Err(ProtocolError::UnsupportedVersion(v));
    }
    serde_json::from_value(value).map_err(|e| malformed(e.to_string()))
}

/// Decode exactly one frame occupying all of `bytes`.
pub fn decode_frame(bytes: &[u8]) -> Result<Message, ProtocolError> {
    let (len, rest) = split_header(bytes)?;
    if rest.len() != len {
        return Err(malformed(format!("length prefix {len} but {} body bytes", rest.len())));
    }
    decode_body(rest)
}

fn split_header(bytes: &[u8]) -> Result<(usize, &[u8]), ProtocolError> {
    if bytes.len() < 4 {
        return Err(malformed("truncated length prefix"));
    }
    let len = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
    if len > MAX_BODY {
        return Err(ProtocolError::FrameTooLarge(len as u64));
    }
    Ok((len, &bytes[4..]))
}

/// Read one frame. `Ok(None)` on a clean end of stream between frames.
pub fn read_message<R: Read>(reader: &mut R) -> Result<Option<Message>, ProtocolError> {
    let mut header = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        match reader.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(malformed("truncated length prefix")),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_be_bytes(header) as usize;
    if len > MAX_BODY {
        return Err(ProtocolError::FrameTooLarge(len as u64));
    }
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => malformed("truncated body"),
        _ => ProtocolError::Io(e),
    })?;
    decode_body(&body).map(Some)
}

pub fn write_message<W: Write>(writer: &mut W, message: &Message) -> Result<(), ProtocolError> {
    writer.write_all(&encode_frame(message)?)?;
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
pub(crate) mod strategies {
    use std::net::SocketAddr;

    use proptest::prelude::*;
    use serde_json::json;
    use uuid::Uuid;

    use super::*;
    use crate::canonical::sha256_hex;
    use crate::flows::{FileAction, FileItem, FlowItems, FlowKind, FlowStatus, ProcessEntry};
    use crate::ids::{CaseId, EvidenceId, PrincipalId};
    use crate::time::Timestamp;

    fn uuid() -> impl Strategy<Value = Uuid> {
        any::<u128>().prop_map(Uuid::from_u128)
    }

    fn ts() -> impl Strategy<Value = Timestamp> {
        (0i64..4_000_000_000_000).prop_map(Timestamp::from_millis)
    }

    fn os() -> impl Strategy<Value = Os> {
        prop_oneof![Just(Os::Linux), Just(Os::Windows), Just(Os::Other)]
    }

    fn kind() -> impl Strategy<Value = FlowKind> {
        let action = prop_oneof![Just(FileAction::Stat), Just(FileAction::Hash), Just(FileAction::Fetch)];
        prop_oneof![
            ("/[a-z*/]{1,20}", action).prop_map(|(glob, action)| FlowKind::FileFinder { glob, action }),
            Just(FlowKind::ProcessList),
            "[a-z/]{1,10}".prop_map(|device| FlowKind::DiskImage { device }),
        ]
    }

    fn request() -> impl Strategy<Value = FlowRequest> {
        (uuid(), uuid(), kind(), uuid(), uuid(), ts()).prop_map(|(f, a, kind, p, c, t)| FlowRequest {
            flow_id: FlowId(f),
            agent_id: AgentId(a),
            kind,
            issued_by: PrincipalId(p),
            case_id: CaseId(c),
            issued_at: t,
        })
    }

    fn file_item() -> impl Strategy<Value = FileItem> {
        ("/[a-z/.]{1,20}", any::<u64>(), prop::option::of(any::<[u8; 4]>())).prop_map(|(path, size, seed)| {
            let digest = seed.map(|s| sha256_hex(&s));
            FileItem {
                path,
                size_bytes: size,
                evidence_id: digest.as_deref().map(|d| EvidenceId::parse(d).unwrap()),
                sha256: digest,
            }
        })
    }

    fn process() -> impl Strategy<Value = ProcessEntry> {
        (1u32.., "[a-z0-9]{1,8}", ".{0,20}", prop::collection::vec((any::<std::net::IpAddr>(), any::<u16>()).prop_map(SocketAddr::from), 0..3)).prop_map(
            |(pid, name, cmdline, remote_endpoints)| ProcessEntry { pid, name, cmdline, remote_endpoints },
        )
    }

    fn result() -> impl Strategy<Value = FlowResult> {
        let items = prop_oneof![
            prop::collection::vec(file_item(), 0..4).prop_map(FlowItems::Files),
            prop::collection::vec(process(), 0..4).prop_map(FlowItems::Processes),
        ];
        let status = prop_oneof![
            Just(FlowStatus::Pending),
            Just(FlowStatus::Running),
            Just(FlowStatus::Complete),
            Just(FlowStatus::Failed)
        ];
        (uuid(), status, prop::option::of(items), prop::option::of(".{0,30}"), prop::option::of(ts())).prop_map(
            |(f, status, items, error, completed_at)| FlowResult { flow_id: FlowId(f), status, items, error, completed_at },
        )
    }

    fn log_value() -> impl Strategy<Value = Value> {
        (".{0,10}", any::<[u8; 4]>(), ".{0,30}", ts()).prop_map(|(source, ip, message, t)| {
            json!({
                "source": source,
                "timestamp": t.to_string(),
                "client_ip": std::net::Ipv4Addr::from(ip).to_string(),
                "message": message,
                "attrs": {"k": "v"},
            })
        })
    }

    pub fn message() -> impl Strategy<Value = Message> {
        prop_oneof![
            (prop::option::of(uuid()), ".{0,20}", os(), prop::collection::vec("[a-z]{1,6}", 0..3)).prop_map(
                |(id, hostname, os, labels)| Message::Register(RegisterPayload {
                    agent_id: id.map(AgentId),
                    hostname,
                    os,
                    labels
                })
            ),
            uuid().prop_map(|u| Message::Poll { agent_id: AgentId(u) }),
            prop::collection::vec(request(), 0..4).prop_map(|flows| Message::FlowAssign { flows }),
            (uuid(), "/[a-z/]{1,20}", any::<u64>(), prop::collection::vec(any::<u8>(), 0..64), any::<bool>()).prop_map(
                |(f, path, offset, data, eof)| {
                    use base64::Engine;
                    Message::ResultChunk(ResultChunk {
                        flow_id: FlowId(f),
                        path,
                        offset,
                        sha256: eof.then(|| sha256_hex(&data)),
                        size_bytes: eof.then_some(data.len() as u64),
                        data: base64::engine::general_purpose::STANDARD.encode(&data),
                        eof,
                    })
                }
            ),
            result().prop_map(|result| Message::FlowDone { result }),
            prop::collection::vec(log_value(), 0..4).prop_map(|records| Message::LogBatch { records }),
            ("[A-Za-z]{1,12}", ".{0,40}").prop_map(|(code, message)| Message::Error { code, message }),
        ]
    }
}
