//! Content-addressed evidence storage with a hash-chained chain of custody.
//!
//! On-disk layout under the store root:
//!
//! ```text
//! objects/<first 2 hex>/<remaining 62 hex>   blob bytes
//! chains/<evidence_id>.jsonl                 one canonical-JSON custody event per line
//! items/<evidence_id>.json                   item metadata (kept after destruction)
//! destructions/<evidence_id>.json            destruction record
//! manifests/<manifest_id>.json               transport manifests
//! exports/<manifest_id>.tar                  transport archives
//! ```
//!
//! Each custody event hashes as
//! `SHA-256(canonical JSON of every field except event_hash ‖ prev_hash)`,
//! with the genesis event chained to 64 zero characters.

use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::canonical::{sha256_hex, to_canonical_json, ZERO_HASH};
use crate::ids::{AgentId, CaseId, EvidenceId, FlowId, ManifestId, PrincipalId};
use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceFormat {
    Raw,
    Aff4,
    Deb,
    LogArchive,
    Document,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvidenceSource {
    Agent { agent_id: AgentId, path: String, flow_id: FlowId },
    Upload { uploader: PrincipalId },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub evidence_id: EvidenceId,
    pub size_bytes: u64,
    pub format: EvidenceFormat,
    pub source: EvidenceSource,
    pub created_at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CustodyAction {
    Collected,
    Stored,
    Transferred,
    Examined,
    Exported,
    Destroyed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustodyEvent {
    pub seq: u64,
    pub evidence_id: EvidenceId,
    pub action: CustodyAction,
    pub actor: String,
    pub timestamp: Timestamp,
    pub details: String,
    pub prev_hash: String,
    pub event_hash: String,
}

impl CustodyEvent {
    /// Hash over every field but `event_hash`, followed by `prev_hash`.
    pub fn compute_hash(&self) -> String {
        let mut body = serde_json::to_value(self).expect("custody event serializes");
        if let Some(obj) = body.as_object_mut() {
            obj.remove("event_hash");
        }
        let mut bytes = serde_json::to_string(&body).expect("value serializes");
        bytes.push_str(&self.prev_hash);
        sha256_hex(bytes.as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChainStatus {
    Ok,
    BrokenAt(u64),
}

impl ChainStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, ChainStatus::Ok)
    }
}

impl std::fmt::Display for ChainStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ChainStatus::Ok => f.write_str("Ok"),
            ChainStatus::BrokenAt(s) => write!(f, "BrokenAt({s})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub evidence_id: EvidenceId,
    pub size_bytes: u64,
    pub chain_head_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransportManifest {
    pub manifest_id: ManifestId,
    pub case_id: CaseId,
    pub entries: Vec<ManifestEntry>,
    pub recipient: String,
    pub created_at: Timestamp,
    pub manifest_hash: String,
}

impl TransportManifest {
    pub fn compute_hash(&self) -> String {
        let mut body = serde_json::to_value(self).expect("manifest serializes");
        if let Some(obj) = body.as_object_mut() {
            obj.remove("manifest_hash");
        }
        sha256_hex(serde_json::to_string(&body).expect("value serializes").as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DestructionRecord {
    pub evidence_id: EvidenceId,
    pub authorized_by: Vec<PrincipalId>,
    pub reason: String,
    pub destroyed_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditFinding {
    pub evidence_id: EvidenceId,
    pub problem: String,
}

#[derive(Debug, thiserror::Error)]
pub enum CustodyError {
    #[error("NotFound({0})")]
    NotFound(EvidenceId),
    #[error("Destroyed({0})")]
    Destroyed(EvidenceId),
    #[error("IntegrityViolation({0}): stored bytes no longer match the id")]
    IntegrityViolation(EvidenceId),
    #[error("ChainBroken({id}) at seq {seq}")]
    ChainBroken { id: EvidenceId, seq: u64 },
    #[error("AfterDestruction({0})")]
    AfterDestruction(EvidenceId),
    #[error("StorageFull: {needed} bytes needed, {available} available")]
    StorageFull { needed: u64, available: u64 },
    #[error("EmptyCase({0})")]
    EmptyCase(CaseId),
    #[error("InsufficientAuthorization: destruction needs two distinct authorizers")]
    InsufficientAuthorization,
    #[error("IoFailure: {0}")]
    Io(#[from] io::Error),
    #[error("IoFailure: {0}")]
    Serialization(#[from] serde_json::Error),
}

impl CustodyError {
    pub fn name(&self) -> &'static str {
        match self {
            CustodyError::NotFound(_) => "NotFound",
            CustodyError::Destroyed(_) => "Destroyed",
            CustodyError::IntegrityViolation(_) => "IntegrityViolation",
            CustodyError::ChainBroken { .. } => "ChainBroken",
            CustodyError::AfterDestruction(_) => "AfterDestruction",
            CustodyError::StorageFull { .. } => "StorageFull",
            CustodyError::EmptyCase(_) => "EmptyCase",
            CustodyError::InsufficientAuthorization => "InsufficientAuthorization",
            CustodyError::Io(_) | CustodyError::Serialization(_) => "IoFailure",
        }
    }
}

pub type Result<T, E = CustodyError> = std::result::Result<T, E>;

/// Parse and check one persisted chain. Returns the events up to (not
/// including) the first bad one, and the status.
pub fn verify_chain_bytes(id: &EvidenceId, bytes: &[u8]) -> (Vec<CustodyEvent>, ChainStatus) {
    let mut events = Vec::new();
    if bytes.is_empty() {
        return (events, ChainStatus::Ok);
    }
    let mut lines: Vec<&[u8]> = bytes.split(|b| *b == b'\n').collect();
    let terminated = lines.last().is_some_and(|l| l.is_empty());
    if terminated {
        lines.pop();
    }
    let last = lines.len().saturating_sub(1);
    let mut prev = ZERO_HASH.to_owned();
    let mut destroyed = false;
    for (i, line) in lines.iter().enumerate() {
        let seq = i as u64;
        let broken = ChainStatus::BrokenAt(seq);
        if i == last && !terminated {
            return (events, broken);
        }
        let Ok(text) = std::str::from_utf8(line) else {
            return (events, broken);
        };
        let Ok(ev) = serde_json::from_str::<CustodyEvent>(text) else {
            return (events, broken);
        };
        let canonical = to_canonical_json(&ev).unwrap_or_default();
        if canonical != text
            || ev.seq != seq
            || &ev.evidence_id != id
            || ev.prev_hash != prev
            || ev.compute_hash() != ev.event_hash
            || destroyed
        {
            return (events, broken);
        }
        destroyed = ev.action == CustodyAction::Destroyed;
        prev = ev.event_hash.clone();
        events.push(ev);
    }
    (events, ChainStatus::Ok)
}

/// Deterministic tar: fixed ordering, zeroed timestamps and ownership.
pub fn build_archive(manifest: &TransportManifest, dossier: &serde_json::Value, items: &[(EvidenceId, Vec<u8>, Vec<u8>)]) -> Result<Vec<u8>> {
    let mut builder = tar::Builder::new(Vec::new());
    let mut add = |path: &str, data: &[u8]| -> io::Result<()> {
        let mut header = tar::Header::new_ustar();
        header.set_path(path)?;
        header.set_size(data.len() as u64);
        header.set_mode(0o644);
        header.set_mtime(0);
        header.set_uid(0);
        header.set_gid(0);
        header.set_entry_type(tar::EntryType::Regular);
        header.set_cksum();
        builder.append(&header, data)
    };
    add("manifest.json", to_canonical_json(manifest)?.as_bytes())?;
    add("dossier.json", to_canonical_json(dossier)?.as_bytes())?;
    let mut sorted: Vec<&(EvidenceId, Vec<u8>, Vec<u8>)> = items.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    for (id, blob, chain) in sorted {
        add(&format!("evidence/{id}/blob"), blob)?;
        add(&format!("evidence/{id}/custody.jsonl"), chain)?;
    }
    Ok(builder.into_inner()?)
}

pub struct EvidenceStore {
    root: PathBuf,
    capacity: Option<u64>,
    used: Mutex<u64>,
    locks: Mutex<HashMap<EvidenceId, Arc<Mutex<()>>>>,
}

impl std::fmt::Debug for EvidenceStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EvidenceStore").field("root", &self.root).finish()
    }
}

const DIRS: [&str; 7] = ["objects", "chains", "items", "destructions", "manifests", "exports", "tmp"];

impl EvidenceStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        Self::with_capacity(root, None)
    }

    /// `capacity` caps the total blob bytes held by the store.
    pub fn with_capacity(root: impl Into<PathBuf>, capacity: Option<u64>) -> Result<Self> {
        let root = root.into();
        for d in DIRS {
            fs::create_dir_all(root.join(d))?;
        }
        let mut used = 0;
        for entry in walkdir::WalkDir::new(root.join("objects")) {
            let entry = entry.map_err(io::Error::from)?;
            if entry.file_type().is_file() {
                used += entry.metadata().map_err(io::Error::from)?.len();
            }
        }
        Ok(Self {
            root,
            capacity,
            used: Mutex::new(used),
            locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn object_path(&self, id: &EvidenceId) -> PathBuf {
        let (dir, rest) = id.object_parts();
        self.root.join("objects").join(dir).join(rest)
    }

    pub fn chain_path(&self, id: &EvidenceId) -> PathBuf {
        self.root.join("chains").join(format!("{id}.jsonl"))
    }

    fn item_path(&self, id: &EvidenceId) -> PathBuf {
        self.root.join("items").join(format!("{id}.json"))
    }

    fn lock(&self, id: &EvidenceId) -> Arc<Mutex<()>> {
        self.locks
            .lock()
            .unwrap()
            .entry(id.clone())
            .or_default()
            .clone()
    }

    fn write_atomic(&self, dest: &Path, data: &[u8]) -> Result<()> {
        let tmp = self.root.join("tmp").join(uuid::Uuid::new_v4().to_string());
        {
            let mut f = File::create(&tmp)?;
            f.write_all(data)?;
            f.sync_all()?;
        }
        if let Some(parent) = dest.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::rename(&tmp, dest)?;
        Ok(())
    }

    /// Store `content`, or record another custody event if it is already held.
    pub fn store(
        &self,
        content: &[u8],
        format: EvidenceFormat,
        source: EvidenceSource,
        actor: &str,
        at: Timestamp,
    ) -> Result<EvidenceItem> {
        let id = EvidenceId::parse(&sha256_hex(content)).expect("digest is hex");
        let lock = self.lock(&id);
        let _guard = lock.lock().unwrap();

        let chain = self.read_chain_locked(&id)?;
        if chain.last().is_some_and(|e| e.action == CustodyAction::Destroyed) {
            return Err(CustodyError::AfterDestruction(id));
        }
        let blob = self.object_path(&id);
        if !blob.exists() {
            let mut used = self.used.lock().unwrap();
            let size = content.len() as u64;
            if let Some(cap) = self.capacity {
                if *used + size > cap {
                    return Err(CustodyError::StorageFull {
                        needed: size,
                        available: cap.saturating_sub(*used),
                    });
                }
            }
            self.write_atomic(&blob, content)?;
            *used += size;
        }
        let item_path = self.item_path(&id);
        let item = if item_path.exists() {
            serde_json::from_slice(&fs::read(&item_path)?)?
        } else {
            let item = EvidenceItem {
                evidence_id: id.clone(),
                size_bytes: content.len() as u64,
                format,
                source: source.clone(),
                created_at: at,
            };
            self.write_atomic(&item_path, to_canonical_json(&item)?.as_bytes())?;
            item
        };
        if let EvidenceSource::Agent { agent_id, path, flow_id } = &source {
            self.append_locked(
                &id,
                CustodyAction::Collected,
                actor,
                &format!("collected from agent {agent_id} path {path} by flow {flow_id}"),
                at,
            )?;
        }
        self.append_locked(&id, CustodyAction::Stored, actor, &format!("{} bytes stored", content.len()), at)?;
        Ok(item)
    }

    pub fn item(&self, id: &EvidenceId) -> Result<EvidenceItem> {
        let p = self.item_path(id);
        if !p.exists() {
            return Err(CustodyError::NotFound(id.clone()));
        }
        Ok(serde_json::from_slice(&fs::read(p)?)?)
    }

    pub fn contains(&self, id: &EvidenceId) -> bool {
        self.item_path(id).exists()
    }

    pub fn is_destroyed(&self, id: &EvidenceId) -> Result<bool> {
        Ok(self
            .chain(id)?
            .last()
            .is_some_and(|e| e.action == CustodyAction::Destroyed))
    }

    /// Read the bytes back, verifying their digest first. `examined_by`
    /// appends an `examined` custody event.
    pub fn retrieve(&self, id: &EvidenceId, examined_by: Option<(&str, Timestamp)>) -> Result<Vec<u8>> {
        let lock = self.lock(id);
        let _guard = lock.lock().unwrap();
        if !self.item_path(id).exists() {
            return Err(CustodyError::NotFound(id.clone()));
        }
        let chain = self.read_chain_locked(id)?;
        if chain.last().is_some_and(|e| e.action == CustodyAction::Destroyed) {
            return Err(CustodyError::Destroyed(id.clone()));
        }
        let bytes = match fs::read(self.object_path(id)) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(CustodyError::IntegrityViolation(id.clone())),
            Err(e) => return Err(e.into()),
        };
        if sha256_hex(&bytes) != id.as_str() {
            return Err(CustodyError::IntegrityViolation(id.clone()));
        }
        if let Some((actor, at)) = examined_by {
            self.append_locked(id, CustodyAction::Examined, actor, "content examined", at)?;
        }
        Ok(bytes)
    }

    fn read_chain_locked(&self, id: &EvidenceId) -> Result<Vec<CustodyEvent>> {
        let bytes = match fs::read(self.chain_path(id)) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        match verify_chain_bytes(id, &bytes) {
            (events, ChainStatus::Ok) => Ok(events),
            (_, ChainStatus::BrokenAt(seq)) => Err(CustodyError::ChainBroken { id: id.clone(), seq }),
        }
    }

    /// The verified custody chain of `id`.
    pub fn chain(&self, id: &EvidenceId) -> Result<Vec<CustodyEvent>> {
        if !self.chain_path(id).exists() {
            return Err(CustodyError::NotFound(id.clone()));
        }
        let lock = self.lock(id);
        let _guard = lock.lock().unwrap();
        self.read_chain_locked(id)
    }

    pub fn chain_head(&self, id: &EvidenceId) -> Result<String> {
        Ok(self
            .chain(id)?
            .last()
            .map(|e| e.event_hash.clone())
            .unwrap_or_else(|| ZERO_HASH.to_owned()))
    }

    fn append_locked(
        &self,
        id: &EvidenceId,
        action: CustodyAction,
        actor: &str,
        details: &str,
        at: Timestamp,
    ) -> Result<CustodyEvent> {
        let chain = self.read_chain_locked(id)?;
        if chain.last().is_some_and(|e| e.action == CustodyAction::Destroyed) {
            return Err(CustodyError::AfterDestruction(id.clone()));
        }
        let mut ev = CustodyEvent {
            seq: chain.len() as u64,
            evidence_id: id.clone(),
            action,
            actor: actor.to_owned(),
            timestamp: at,
            details: details.to_owned(),
            prev_hash: chain
                .last()
                .map(|e| e.event_hash.clone())
                .unwrap_or_else(|| ZERO_HASH.to_owned()),
            event_hash: String::new(),
        };
        ev.event_hash = ev.compute_hash();
        let mut line = to_canonical_json(&ev)?;
        line.push('\n');
        let mut f = OpenOptions::new().create(true).append(true).open(self.chain_path(id))?;
        f.write_all(line.as_bytes())?;
        f.sync_data()?;
        Ok(ev)
    }

    pub fn append_custody_event(
        &self,
        id: &EvidenceId,
        action: CustodyAction,
        actor: &str,
        details: &str,
        at: Timestamp,
    ) -> Result<CustodyEvent> {
        if !self.item_path(id).exists() {
            return Err(CustodyError::NotFound(id.clone()));
        }
        let lock = self.lock(id);
        let _guard = lock.lock().unwrap();
        self.append_locked(id, action, actor, details, at)
    }

    pub fn verify_chain(&self, id: &EvidenceId) -> Result<ChainStatus> {
        let bytes = match fs::read(self.chain_path(id)) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(CustodyError::NotFound(id.clone())),
            Err(e) => return Err(e.into()),
        };
        Ok(verify_chain_bytes(id, &bytes).1)
    }

    fn ensure_verified(&self, id: &EvidenceId) -> Result<()> {
        match self.verify_chain(id)? {
            ChainStatus::Ok => Ok(()),
            ChainStatus::BrokenAt(seq) => Err(CustodyError::ChainBroken { id: id.clone(), seq }),
        }
    }

    /// Package blobs, custody chains and a manifest into a deterministic
    /// archive under `exports/`, then append an `exported` event per item.
    pub fn export_transport_package(
        &self,
        case_id: CaseId,
        evidence: &[EvidenceId],
        dossier: &serde_json::Value,
        recipient: &str,
        actor: &str,
        at: Timestamp,
    ) -> Result<(TransportManifest, PathBuf)> {
        let ids: BTreeSet<&EvidenceId> = evidence.iter().collect();
        if ids.is_empty() {
            return Err(CustodyError::EmptyCase(case_id));
        }
        for id in &ids {
            self.ensure_verified(id)?;
        }
        let mut entries = Vec::new();
        let mut items = Vec::new();
        for id in &ids {
            let blob = self.retrieve(id, None)?;
            let chain_bytes = fs::read(self.chain_path(id))?;
            entries.push(ManifestEntry {
                evidence_id: (*id).clone(),
                size_bytes: blob.len() as u64,
                chain_head_hash: self.chain_head(id)?,
            });
            items.push(((*id).clone(), blob, chain_bytes));
        }
        let mut manifest = TransportManifest {
            manifest_id: ManifestId::new(),
            case_id,
            entries,
            recipient: recipient.to_owned(),
            created_at: at,
            manifest_hash: String::new(),
        };
        manifest.manifest_hash = manifest.compute_hash();
        let archive = build_archive(&manifest, dossier, &items)?;
        let archive_path = self.root.join("exports").join(format!("{}.tar", manifest.manifest_id));
        self.write_atomic(&archive_path, &archive)?;
        self.write_atomic(
            &self.root.join("manifests").join(format!("{}.json", manifest.manifest_id)),
            to_canonical_json(&manifest)?.as_bytes(),
        )?;
        for id in &ids {
            self.append_custody_event(
                id,
                CustodyAction::Exported,
                actor,
                &format!("exported to {recipient} in manifest {}", manifest.manifest_id),
                at,
            )?;
        }
        Ok((manifest, archive_path))
    }

    /// Remove the blob under dual control. Metadata, chain and the
    /// destruction record stay readable.
    pub fn destroy(&self, record: &DestructionRecord) -> Result<()> {
        let id = &record.evidence_id;
        let distinct: BTreeSet<&PrincipalId> = record.authorized_by.iter().collect();
        if distinct.len() < 2 {
            return Err(CustodyError::InsufficientAuthorization);
        }
        if !self.item_path(id).exists() {
            return Err(CustodyError::NotFound(id.clone()));
        }
        let lock = self.lock(id);
        let _guard = lock.lock().unwrap();
        let chain = self.read_chain_locked(id)?;
        if chain.last().is_some_and(|e| e.action == CustodyAction::Destroyed) {
            return Err(CustodyError::AfterDestruction(id.clone()));
        }
        let blob = self.object_path(id);
        if let Ok(meta) = fs::metadata(&blob) {
            fs::remove_file(&blob)?;
            let mut used = self.used.lock().unwrap();
            *used = used.saturating_sub(meta.len());
        }
        self.write_atomic(
            &self.root.join("destructions").join(format!("{id}.json")),
            to_canonical_json(record)?.as_bytes(),
        )?;
        let authorizers: Vec<String> = record.authorized_by.iter().map(ToString::to_string).collect();
        self.append_locked(
            id,
            CustodyAction::Destroyed,
            &record.authorized_by[0].to_string(),
            &format!("destroyed: {} (authorized by {})", record.reason, authorizers.join(", ")),
            record.destroyed_at,
        )?;
        Ok(())
    }

    pub fn destruction_record(&self, id: &EvidenceId) -> Result<Option<DestructionRecord>> {
        let p = self.root.join("destructions").join(format!("{id}.json"));
        if !p.exists() {
            return Ok(None);
        }
        Ok(Some(serde_json::from_slice(&fs::read(p)?)?))
    }

    pub fn list(&self) -> Result<Vec<EvidenceId>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(self.root.join("items"))? {
            let name = entry?.file_name();
            if let Some(stem) = name.to_str().and_then(|n| n.strip_suffix(".json")) {
                if let Ok(id) = EvidenceId::parse(stem) {
                    out.push(id);
                }
            }
        }
        out.sort();
        Ok(out)
    }

    /// Full-store check: every live blob hashes to its id, every chain verifies.
    pub fn audit(&self) -> Result<Vec<AuditFinding>> {
        let mut findings = Vec::new();
        for id in self.list()? {
            match self.verify_chain(&id) {
                Ok(ChainStatus::Ok) => {}
                Ok(status) => findings.push(AuditFinding {
                    evidence_id: id.clone(),
                    problem: format!("chain {status}"),
                }),
                Err(e) => findings.push(AuditFinding {
                    evidence_id: id.clone(),
                    problem: e.to_string(),
                }),
            }
            if self.destruction_record(&id)?.is_some() {
                continue;
            }
            match fs::read(self.object_path(&id)) {
                Ok(bytes) if sha256_hex(&bytes) == id.as_str() => {}
                Ok(_) => findings.push(AuditFinding {
                    evidence_id: id.clone(),
                    problem: "blob digest mismatch".into(),
                }),
                Err(e) => findings.push(AuditFinding {
                    evidence_id: id.clone(),
                    problem: format!("blob unreadable: {e}"),
                }),
            }
        }
        Ok(findings)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(n: i64) -> Timestamp {
        Timestamp::from_millis(1_717_232_400_000 + n)
    }

    fn upload() -> EvidenceSource {
        EvidenceSource::Upload { uploader: PrincipalId::new() }
    }

    fn store() -> (tempfile::TempDir, EvidenceStore) {
        let dir = tempfile::tempdir().unwrap();
        let s = EvidenceStore::open(dir.path()).unwrap();
        (dir, s)
    }

    #[test]
    fn empty_and_abc_digests() {
        let (_d, s) = store();
        let e = s.store(b"", EvidenceFormat::Raw, upload(), "tester", t(0)).unwrap();
        assert_eq!(e.evidence_id.as_str(), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
        let a = s.store(b"abc", EvidenceFormat::Raw, upload(), "tester", t(1)).unwrap();
        assert_eq!(a.evidence_id.as_str(), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        let (dir, rest) = a.evidence_id.object_parts();
        assert!(s.root().join("objects").join(dir).join(rest).is_file());
        assert_eq!(s.retrieve(&a.evidence_id, None).unwrap(), b"abc");
    }

    #[test]
    fn duplicate_store_appends_event_only() {
        let (_d, s) = store();
        let a = s.store(b"abc", EvidenceFormat::Raw, upload(), "u1", t(0)).unwrap();
        let b = s.store(b"abc", EvidenceFormat::Document, upload(), "u2", t(1)).unwrap();
        assert_eq!(a, b);
        let chain = s.chain(&a.evidence_id).unwrap();
        assert_eq!(chain.len(), 2);
        assert_eq!(chain[0].prev_hash, ZERO_HASH);
        assert_eq!(chain[1].prev_hash, chain[0].event_hash);
    }

    #[test]
    fn flow_sourced_store_records_collection() {
        let (_d, s) = store();
        let src = EvidenceSource::Agent {
            agent_id: AgentId::new(),
            path: "/var/log/x".into(),
            flow_id: FlowId::new(),
        };
        let item = s.store(b"log", EvidenceFormat::LogArchive, src, "agent", t(0)).unwrap();
        let actions: Vec<_> = s.chain(&item.evidence_id).unwrap().iter().map(|e| e.action).collect();
        assert_eq!(actions, [CustodyAction::Collected, CustodyAction::Stored]);
    }

    #[test]
    fn retrieve_errors() {
        let (_d, s) = store();
        let unknown = EvidenceId::parse(&sha256_hex(b"nope")).unwrap();
        assert!(matches!(s.retrieve(&unknown, None), Err(CustodyError::NotFound(_))));
        let a = s.store(b"abc", EvidenceFormat::Raw, upload(), "u", t(0)).unwrap();
        fs::write(s.object_path(&a.evidence_id), b"abd").unwrap();
        assert!(matches!(
            s.retrieve(&a.evidence_id, None),
            Err(CustodyError::IntegrityViolation(_))
        ));
        assert_eq!(s.audit().unwrap().len(), 1);
    }

    #[test]
    fn examination_is_recorded() {
        let (_d, s) = store();
        let a = s.store(b"abc", EvidenceFormat::Raw, upload(), "u", t(0)).unwrap();
        s.retrieve(&a.evidence_id, Some(("examiner", t(1)))).unwrap();
        let chain = s.chain(&a.evidence_id).unwrap();
        assert_eq!(chain.last().unwrap().action, CustodyAction::Examined);
    }

    #[test]
    fn tampering_is_located() {
        let (_d, s) = store();
        let a = s.store(b"abc", EvidenceFormat::Raw, upload(), "u", t(0)).unwrap();
        s.append_custody_event(&a.evidence_id, CustodyAction::Examined, "x", "first look", t(1)).unwrap();
        s.append_custody_event(&a.evidence_id, CustodyAction::Transferred, "x", "to lab", t(2)).unwrap();
        assert_eq!(s.verify_chain(&a.evidence_id).unwrap(), ChainStatus::Ok);
        let path = s.chain_path(&a.evidence_id);
        let original = fs::read_to_string(&path).unwrap();

        let tampered = original.replace("first look", "first lool");
        fs::write(&path, tampered).unwrap();
        assert_eq!(s.verify_chain(&a.evidence_id).unwrap(), ChainStatus::BrokenAt(1));

        let mut events: Vec<CustodyEvent> = original.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        events[2].prev_hash = events[0].event_hash.clone();
        let swapped: String = events.iter().map(|e| to_canonical_json(e).unwrap() + "\n").collect();
        fs::write(&path, swapped).unwrap();
        assert_eq!(s.verify_chain(&a.evidence_id).unwrap(), ChainStatus::BrokenAt(2));
        assert!(matches!(
            s.append_custody_event(&a.evidence_id, CustodyAction::Examined, "x", "y", t(3)),
            Err(CustodyError::ChainBroken { seq: 2, .. })
        ));
    }

    #[test]
    fn destruction_needs_two_and_is_final() {
        let (_d, s) = store();
        let a = s.store(b"abc", EvidenceFormat::Raw, upload(), "u", t(0)).unwrap();
        let p1 = PrincipalId::new();
        let mut rec = DestructionRecord {
            evidence_id: a.evidence_id.clone(),
            authorized_by: vec![p1, p1],
            reason: "retention expired".into(),
            destroyed_at: t(5),
        };
        assert!(matches!(s.destroy(&rec), Err(CustodyError::InsufficientAuthorization)));
        rec.authorized_by = vec![p1, PrincipalId::new()];
        s.destroy(&rec).unwrap();
        assert!(!s.object_path(&a.evidence_id).exists());
        assert_eq!(s.verify_chain(&a.evidence_id).unwrap(), ChainStatus::Ok);
        assert!(s.item(&a.evidence_id).is_ok());
        assert_eq!(s.destruction_record(&a.evidence_id).unwrap(), Some(rec.clone()));
        assert!(matches!(s.destroy(&rec), Err(CustodyError::AfterDestruction(_))));
        assert!(matches!(s.retrieve(&a.evidence_id, None), Err(CustodyError::Destroyed(_))));
        assert!(matches!(
            s.append_custody_event(&a.evidence_id, CustodyAction::Examined, "x", "y", t(6)),
            Err(CustodyError::AfterDestruction(_))
        ));
        assert!(s.audit().unwrap().is_empty());
    }

    #[test]
    fn capacity_limit() {
        let dir = tempfile::tempdir().unwrap();
        let s = EvidenceStore::with_capacity(dir.path(), Some(4)).unwrap();
        s.store(b"abc", EvidenceFormat::Raw, upload(), "u", t(0)).unwrap();
        assert!(matches!(
            s.store(b"defg", EvidenceFormat::Raw, upload(), "u", t(1)),
            Err(CustodyError::StorageFull { needed: 4, available: 1 })
        ));
    }

    #[test]
    fn export_package_is_reproducible() {
        let (_d, s) = store();
        let ids: Vec<EvidenceId> = [b"one".as_slice(), b"two", b"three"]
            .iter()
            .enumerate()
            .map(|(i, c)| s.store(c, EvidenceFormat::Raw, upload(), "u", t(i as i64)).unwrap().evidence_id)
            .collect();
        let case = CaseId::new();
        let dossier = serde_json::json!({"case_id": case});
        assert!(matches!(
            s.export_transport_package(case, &[], &dossier, "lab", "u", t(9)),
            Err(CustodyError::EmptyCase(_))
        ));
        let (manifest, path) = s.export_transport_package(case, &ids, &dossier, "lab", "u", t(10)).unwrap();
        assert_eq!(manifest.entries.len(), 3);
        assert_eq!(manifest.manifest_hash, manifest.compute_hash());
        let bytes = fs::read(&path).unwrap();

        let items: Vec<_> = manifest
            .entries
            .iter()
            .map(|e| {
                let chain: String = s
                    .chain(&e.evidence_id)
                    .unwrap()
                    .iter()
                    .filter(|ev| ev.action != CustodyAction::Exported)
                    .map(|ev| to_canonical_json(ev).unwrap() + "\n")
                    .collect();
                (e.evidence_id.clone(), s.retrieve(&e.evidence_id, None).unwrap(), chain.into_bytes())
            })
            .collect();
        assert_eq!(build_archive(&manifest, &dossier, &items).unwrap(), bytes);

        let mut archive = tar::Archive::new(bytes.as_slice());
        let names: Vec<String> = archive
            .entries()
            .unwrap()
            .map(|e| e.unwrap().path().unwrap().display().to_string())
            .collect();
        assert_eq!(names.len(), 2 + 2 * 3);
        assert_eq!(names[0], "manifest.json");
        for id in &ids {
            assert_eq!(s.chain(id).unwrap().last().unwrap().action, CustodyAction::Exported);
        }
    }
}
