//! The append-only event log and state snapshots.
//!
//! Each line of `events.jsonl` is one canonical-JSON [`EventLogRecord`].
//! Sequence numbers are dense from 0. A torn final line (a crash mid-write)
//! is reported and dropped on open; damage anywhere else is fatal.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::auth::Principal;
use super::tickets::Notification;
use crate::canonical::to_canonical_json;
use crate::cases::{CaseDocument, Participant, TaskStatus};
use crate::custody::{DestructionRecord, EvidenceItem, TransportManifest};
use crate::domain::{LeRequest, Role};
use crate::flows::logs::LogRecord;
use crate::flows::{AgentInfo, FlowRequest, FlowResult};
use crate::ids::{AgentId, CaseId, EvidenceId, NotificationId, PrincipalId, RequestId, TaskId, TicketId};
use crate::reporting::Invoice;
use crate::time::Timestamp;
use crate::workflow::{EvaluationDecision, WorkflowConfig};

/// Every state change. Events carry all nondeterministic inputs (ids,
/// timestamps, configured delays) so applying them is a pure function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event_type", content = "payload", rename_all = "snake_case")]
pub enum Event {
    PrincipalAdded {
        principal: Principal,
    },
    EvidenceRegistered {
        item: EvidenceItem,
    },
    RequestSubmitted {
        request: LeRequest,
        owner: PrincipalId,
        ticket_id: TicketId,
        notification_id: NotificationId,
        at: Timestamp,
    },
    DocumentsReceived {
        request_id: RequestId,
        documents: Vec<EvidenceId>,
        at: Timestamp,
    },
    EvaluationBegun {
        request_id: RequestId,
        at: Timestamp,
    },
    EvaluationReopened {
        request_id: RequestId,
        at: Timestamp,
    },
    ProvisionalApplied {
        request_id: RequestId,
        measure: String,
        actor: PrincipalId,
        at: Timestamp,
        config: WorkflowConfig,
    },
    PreservationExtended {
        request_id: RequestId,
        config: WorkflowConfig,
        at: Timestamp,
    },
    DecisionRecorded {
        request_id: RequestId,
        decision: EvaluationDecision,
    },
    Escalated {
        request_id: RequestId,
        case_id: CaseId,
        override_guard: bool,
        opener: Participant,
        notification_id: NotificationId,
        at: Timestamp,
    },
    ActionApplied {
        request_id: RequestId,
        summary: String,
        at: Timestamp,
    },
    ResponseIssued {
        request_id: RequestId,
        body: String,
        suppress_target_notification: bool,
        at: Timestamp,
    },
    Acknowledged {
        request_id: RequestId,
        at: Timestamp,
    },
    AcknowledgmentExpired {
        request_id: RequestId,
        at: Timestamp,
        config: WorkflowConfig,
    },
    TicketMessagePosted {
        ticket_id: TicketId,
        author: PrincipalId,
        body: String,
        at: Timestamp,
    },
    NotificationCreated {
        notification: Notification,
    },
    NotificationDelivered {
        id: NotificationId,
        at: Timestamp,
    },
    ParticipantAdded {
        case_id: CaseId,
        participant: Participant,
        actor: PrincipalId,
        at: Timestamp,
    },
    EvidenceLinked {
        case_id: CaseId,
        evidence_id: EvidenceId,
        actor: PrincipalId,
        at: Timestamp,
    },
    CaseDocumentAttached {
        case_id: CaseId,
        document: CaseDocument,
    },
    TaskAssigned {
        case_id: CaseId,
        task_id: TaskId,
        description: String,
        assignee_role: Role,
        due: Option<Timestamp>,
        actor: PrincipalId,
        at: Timestamp,
    },
    TaskUpdated {
        case_id: CaseId,
        task_id: TaskId,
        status: TaskStatus,
        actor: PrincipalId,
        at: Timestamp,
    },
    CaseClosed {
        case_id: CaseId,
        verified_chains: Vec<EvidenceId>,
        actor: PrincipalId,
        at: Timestamp,
    },
    AgentRegistered {
        agent: AgentInfo,
    },
    FlowLaunched {
        request: FlowRequest,
    },
    FlowsAssigned {
        agent_id: AgentId,
        at: Timestamp,
    },
    FlowCompleted {
        agent_id: AgentId,
        result: FlowResult,
        at: Timestamp,
    },
    LogsIngested {
        records: Vec<LogRecord>,
    },
    EvidenceExported {
        manifest: TransportManifest,
    },
    EvidenceDestroyed {
        record: DestructionRecord,
    },
    InvoiceIssued {
        invoice: Invoice,
    },
}

impl Event {
    pub fn event_type(&self) -> String {
        self.split().0
    }

    fn split(&self) -> (String, Value) {
        let mut v = serde_json::to_value(self).expect("events serialize");
        let obj = v.as_object_mut().expect("adjacently tagged");
        let ty = obj.remove("event_type").and_then(|t| t.as_str().map(str::to_owned)).unwrap_or_default();
        let payload = obj.remove("payload").unwrap_or(Value::Null);
        (ty, payload)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventLogRecord {
    pub seq: u64,
    pub timestamp: Timestamp,
    pub event_type: String,
    pub payload: Value,
}

impl EventLogRecord {
    pub fn new(seq: u64, timestamp: Timestamp, event: &Event) -> Self {
        let (event_type, payload) = event.split();
        Self { seq, timestamp, event_type, payload }
    }

    pub fn event(&self) -> Result<Event, serde_json::Error> {
        serde_json::from_value(serde_json::json!({"event_type": self.event_type, "payload": self.payload}))
    }

    pub fn to_line(&self) -> String {
        let mut line = to_canonical_json(self).expect("records serialize");
        line.push('\n');
        line
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("CorruptLog({seq}): {reason}")]
pub struct CorruptLog {
    pub seq: u64,
    pub reason: String,
}

/// The result of reading a log file.
#[derive(Debug, Clone, PartialEq)]
pub struct LogContents {
    pub records: Vec<EventLogRecord>,
    /// Bytes of the valid prefix.
    pub valid_len: u64,
    /// Set when a torn final line was dropped.
    pub torn_tail: Option<CorruptLog>,
}

/// Parse a log. A bad line that is the last line is treated as a torn
/// write and dropped; a bad line followed by more data is fatal.
pub fn parse_log(bytes: &[u8]) -> Result<LogContents, CorruptLog> {
    let mut records = Vec::new();
    let mut offset = 0usize;
    while offset < bytes.len() {
        let rest = &bytes[offset..];
        let (line, next, complete) = match rest.iter().position(|b| *b == b'\n') {
            Some(i) => (&rest[..i], offset + i + 1, true),
            None => (rest, bytes.len(), false),
        };
        let seq = records.len() as u64;
        let parsed = std::str::from_utf8(line)
            .map_err(|e| e.to_string())
            .and_then(|s| serde_json::from_str::<EventLogRecord>(s).map_err(|e| e.to_string()))
            .and_then(|r| if r.seq == seq { Ok(r) } else { Err(format!("expected seq {seq}, found {}", r.seq)) })
            .and_then(|r| r.event().map(|_| r).map_err(|e| format!("unknown event: {e}")));
        let torn = |reason: String| LogContents {
            records: Vec::new(),
            valid_len: offset as u64,
            torn_tail: Some(CorruptLog { seq, reason }),
        };
        match (parsed, complete) {
            (Ok(r), true) => {
                records.push(r);
                offset = next;
            }
            (Ok(_), false) => return Ok(LogContents { records, ..torn("final line has no terminator".into()) }),
            (Err(reason), _) if next >= bytes.len() => return Ok(LogContents { records, ..torn(reason) }),
            (Err(reason), _) => return Err(CorruptLog { seq, reason }),
        }
    }
    Ok(LogContents { records, valid_len: offset as u64, torn_tail: None })
}

enum Backend {
    Memory(Vec<EventLogRecord>),
    File { file: File, fsync: bool },
}

/// Single appender with a total order over events.
pub struct EventLog {
    backend: Backend,
    next_seq: u64,
}

impl std::fmt::Debug for EventLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EventLog").field("next_seq", &self.next_seq).finish()
    }
}

impl EventLog {
    pub fn in_memory() -> Self {
        Self { backend: Backend::Memory(Vec::new()), next_seq: 0 }
    }

    /// Open (creating if needed) a log file. A torn tail is cut off so
    /// appends continue from the last whole record.
    pub fn open(path: &Path, fsync: bool) -> Result<(Self, LogContents), ServiceLogError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let bytes = match fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let contents = parse_log(&bytes)?;
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        if contents.torn_tail.is_some() {
            file.set_len(contents.valid_len)?;
            file.sync_data()?;
        }
        let next_seq = contents.records.len() as u64;
        Ok((Self { backend: Backend::File { file, fsync }, next_seq }, contents))
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn append(&mut self, event: &Event, at: Timestamp) -> Result<EventLogRecord, ServiceLogError> {
        let record = EventLogRecord::new(self.next_seq, at, event);
        match &mut self.backend {
            Backend::Memory(v) => v.push(record.clone()),
            Backend::File { file, fsync } => {
                file.write_all(record.to_line().as_bytes())?;
                if *fsync {
                    file.sync_data()?;
                }
            }
        }
        self.next_seq += 1;
        Ok(record)
    }

    /// Records held by an in-memory log.
    pub fn memory_records(&self) -> Option<&[EventLogRecord]> {
        match &self.backend {
            Backend::Memory(v) => Some(v),
            Backend::File { .. } => None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceLogError {
    #[error(transparent)]
    Corrupt(#[from] CorruptLog),
    #[error("event log I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Snapshot files: `snapshots/state-<seq>.json` holds the state after
/// `seq` events, and `logsindex/index-<seq>.json` the log index at the
/// same point.
#[derive(Debug, Clone)]
pub struct SnapshotDir {
    pub states: PathBuf,
    pub logs: PathBuf,
}

impl SnapshotDir {
    pub fn new(data_dir: &Path) -> Self {
        Self { states: data_dir.join("snapshots"), logs: data_dir.join("logsindex") }
    }

    fn state_path(&self, seq: u64) -> PathBuf {
        self.states.join(format!("state-{seq:012}.json"))
    }

    fn logs_path(&self, seq: u64) -> PathBuf {
        self.logs.join(format!("index-{seq:012}.json"))
    }

    pub fn write(&self, seq: u64, state: &Value, logs: &Value) -> std::io::Result<()> {
        write_atomic(&self.logs_path(seq), to_canonical_json(logs)?.as_bytes())?;
        write_atomic(&self.state_path(seq), to_canonical_json(state)?.as_bytes())?;
        self.prune(seq)
    }

    /// Keep the newest two snapshots.
    fn prune(&self, newest: u64) -> std::io::Result<()> {
        let mut seqs = self.list()?;
        seqs.retain(|s| *s < newest);
        seqs.sort_unstable();
        let drop_count = seqs.len().saturating_sub(1);
        for s in &seqs[..drop_count] {
            let _ = fs::remove_file(self.state_path(*s));
            let _ = fs::remove_file(self.logs_path(*s));
        }
        Ok(())
    }

    /// Snapshot sequence numbers present, unordered.
    pub fn list(&self) -> std::io::Result<Vec<u64>> {
        let entries = match fs::read_dir(&self.states) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e),
        };
        let mut out = Vec::new();
        for entry in entries {
            let name = entry?.file_name();
            let name = name.to_string_lossy();
            if let Some(n) = name.strip_prefix("state-").and_then(|s| s.strip_suffix(".json")) {
                if let Ok(seq) = n.parse() {
                    out.push(seq);
                }
            }
        }
        Ok(out)
    }

    /// Read the snapshot at `seq`. Unreadable snapshots yield `None`.
    pub fn read(&self, seq: u64) -> Option<(Value, Value)> {
        let state = serde_json::from_slice(&fs::read(self.state_path(seq)).ok()?).ok()?;
        let logs = serde_json::from_slice(&fs::read(self.logs_path(seq)).ok()?).ok()?;
        Some((state, logs))
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(i: i64) -> Event {
        Event::NotificationDelivered { id: NotificationId::new(), at: Timestamp::from_millis(i) }
    }

    fn log_bytes(n: usize) -> Vec<u8> {
        (0..n).flat_map(|i| EventLogRecord::new(i as u64, Timestamp::from_millis(i as i64), &ev(i as i64)).to_line().into_bytes()).collect()
    }

    #[test]
    fn record_round_trip() {
        let e = ev(5);
        let r = EventLogRecord::new(3, Timestamp::from_millis(9), &e);
        assert_eq!(r.event_type, "notification_delivered");
        assert_eq!(r.event().unwrap(), e);
        let back: EventLogRecord = serde_json::from_str(r.to_line().trim_end()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn empty_log() {
        let c = parse_log(b"").unwrap();
        assert!(c.records.is_empty());
        assert!(c.torn_tail.is_none());
    }

    #[test]
    fn torn_tail_is_dropped() {
        let mut bytes = log_bytes(3);
        let whole = bytes.len() as u64;
        bytes.extend_from_slice(&log_bytes(4)[whole as usize..whole as usize + 20]);
        let c = parse_log(&bytes).unwrap();
        assert_eq!(c.records.len(), 3);
        assert_eq!(c.valid_len, whole);
        assert_eq!(c.torn_tail.unwrap().seq, 3);

        // A complete last record missing only its newline is also torn.
        let full = log_bytes(2);
        let c = parse_log(&full[..full.len() - 1]).unwrap();
        assert_eq!(c.records.len(), 1);
        assert_eq!(c.torn_tail.unwrap().seq, 1);
    }

    #[test]
    fn damage_in_the_middle_is_fatal() {
        let mut bytes = log_bytes(3);
        let first_nl = bytes.iter().position(|b| *b == b'\n').unwrap();
        bytes[first_nl + 5] = b'#';
        assert_eq!(parse_log(&bytes).unwrap_err().seq, 1);
    }

    #[test]
    fn sequence_gaps_are_fatal() {
        let mut bytes = EventLogRecord::new(0, Timestamp::from_millis(0), &ev(0)).to_line().into_bytes();
        bytes.extend(EventLogRecord::new(2, Timestamp::from_millis(0), &ev(0)).to_line().into_bytes());
        bytes.extend(EventLogRecord::new(3, Timestamp::from_millis(0), &ev(0)).to_line().into_bytes());
        assert_eq!(parse_log(&bytes).unwrap_err().seq, 1);
    }

    #[test]
    fn file_log_truncates_torn_tail_and_continues() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let mut bytes = log_bytes(2);
        bytes.extend_from_slice(b"{\"seq\":2,\"time");
        fs::write(&path, &bytes).unwrap();
        let (mut log, contents) = EventLog::open(&path, false).unwrap();
        assert_eq!(contents.records.len(), 2);
        assert_eq!(contents.torn_tail.as_ref().unwrap().seq, 2);
        log.append(&ev(7), Timestamp::from_millis(7)).unwrap();
        drop(log);
        let (_, contents) = EventLog::open(&path, false).unwrap();
        assert_eq!(contents.records.len(), 3);
        assert!(contents.torn_tail.is_none());
    }

    #[test]
    fn snapshots_round_trip_and_prune() {
        let dir = tempfile::tempdir().unwrap();
        let snaps = SnapshotDir::new(dir.path());
        for seq in [10, 20, 30] {
            snaps.write(seq, &serde_json::json!({"n": seq}), &serde_json::json!([])).unwrap();
        }
        let mut seqs = snaps.list().unwrap();
        seqs.sort_unstable();
        assert_eq!(seqs, vec![20, 30]);
        assert_eq!(snaps.read(30).unwrap().0, serde_json::json!({"n": 30}));
        assert!(snaps.read(10).is_none());
    }
}
