//! In-memory log index keyed by time and client IP.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::net::IpAddr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::canonical::canonical_digest;
use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub source: String,
    pub timestamp: Timestamp,
    pub client_ip: IpAddr,
    pub message: String,
    #[serde(default)]
    pub attrs: BTreeMap<String, String>,
}

impl LogRecord {
    /// Parse one untyped record, naming the first bad field.
    pub fn from_value(value: &Value) -> Result<Self, String> {
        let obj = value.as_object().ok_or("record is not an object")?;
        let text = |k: &str| -> Result<&str, String> {
            obj.get(k).and_then(Value::as_str).ok_or_else(|| format!("{k}: missing or not a string"))
        };
        let timestamp = text("timestamp")?;
        let timestamp = Timestamp::parse(timestamp).map_err(|e| format!("timestamp: {e}"))?;
        let client_ip = text("client_ip")?;
        let client_ip = client_ip.parse::<IpAddr>().map_err(|_| format!("client_ip: {client_ip:?} is not an IP address"))?;
        let mut attrs = BTreeMap::new();
        match obj.get("attrs") {
            None | Some(Value::Null) => {}
            Some(Value::Object(m)) => {
                for (k, v) in m {
                    let v = v.as_str().ok_or_else(|| format!("attrs.{k}: not a string"))?;
                    attrs.insert(k.clone(), v.to_owned());
                }
            }
            Some(_) => return Err("attrs: not an object".into()),
        }
        Ok(Self { source: text("source")?.to_owned(), timestamp, client_ip, message: text("message")?.to_owned(), attrs })
    }

    fn digest(&self) -> String {
        canonical_digest(self).expect("log record serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MalformedRecord {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client_ip: Option<IpAddr>,
    /// Inclusive on both ends.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_range: Option<(Timestamp, Timestamp)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substring: Option<String>,
}

impl LogFilter {
    pub fn is_empty(&self) -> bool {
        self.client_ip.is_none() && self.time_range.is_none() && self.substring.is_none()
    }

    pub fn matches(&self, r: &LogRecord) -> bool {
        self.client_ip.is_none_or(|ip| r.client_ip == ip)
            && self.time_range.is_none_or(|(from, to)| from <= r.timestamp && r.timestamp <= to)
            && self.substring.as_deref().is_none_or(|s| r.message.contains(s))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LogError {
    #[error("EmptyFilter: set at least one of client_ip, time_range, substring")]
    EmptyFilter,
}

/// Records in ingest order, with secondary indexes by time and by client IP.
/// Serializes as the plain record list.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(from = "Vec<LogRecord>", into = "Vec<LogRecord>")]
pub struct LogIndex {
    records: Vec<LogRecord>,
    by_time: BTreeSet<(Timestamp, usize)>,
    by_ip: HashMap<IpAddr, BTreeSet<(Timestamp, usize)>>,
    digests: HashSet<String>,
}

impl PartialEq for LogIndex {
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records
    }
}

impl Eq for LogIndex {}

impl From<Vec<LogRecord>> for LogIndex {
    fn from(records: Vec<LogRecord>) -> Self {
        let mut idx = LogIndex::default();
        for r in records {
            idx.insert(r);
        }
        idx
    }
}

impl From<LogIndex> for Vec<LogRecord> {
    fn from(idx: LogIndex) -> Self {
        idx.records
    }
}

impl LogIndex {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn contains(&self, r: &LogRecord) -> bool {
        self.digests.contains(&r.digest())
    }

    /// Add a record unless an identical one is already held.
    pub fn insert(&mut self, r: LogRecord) -> bool {
        if !self.digests.insert(r.digest()) {
            return false;
        }
        let i = self.records.len();
        self.by_time.insert((r.timestamp, i));
        self.by_ip.entry(r.client_ip).or_default().insert((r.timestamp, i));
        self.records.push(r);
        true
    }

    /// Parse a batch and keep the records this index does not hold yet,
    /// dropping duplicates within the batch too. Nothing is inserted.
    pub fn prepare(&self, batch: &[Value]) -> (Vec<LogRecord>, Vec<MalformedRecord>) {
        let mut fresh = Vec::new();
        let mut seen = HashSet::new();
        let mut bad = Vec::new();
        for (index, v) in batch.iter().enumerate() {
            match LogRecord::from_value(v) {
                Ok(r) => {
                    let d = r.digest();
                    if !self.digests.contains(&d) && seen.insert(d) {
                        fresh.push(r);
                    }
                }
                Err(reason) => bad.push(MalformedRecord { index, reason }),
            }
        }
        (fresh, bad)
    }

    /// Parse and insert a batch. Returns the number of new records.
    pub fn ingest(&mut self, batch: &[Value]) -> (usize, Vec<MalformedRecord>) {
        let (fresh, bad) = self.prepare(batch);
        let n = fresh.len();
        for r in fresh {
            self.insert(r);
        }
        (n, bad)
    }

    /// Records matching every set field, oldest first. Ties keep ingest order.
    pub fn query(&self, filter: &LogFilter) -> Result<Vec<LogRecord>, LogError> {
        if filter.is_empty() {
            return Err(LogError::EmptyFilter);
        }
        let empty = BTreeSet::new();
        let candidates = match filter.client_ip {
            Some(ip) => self.by_ip.get(&ip).unwrap_or(&empty),
            None => &self.by_time,
        };
        let selected: Box<dyn Iterator<Item = &(Timestamp, usize)>> = match filter.time_range {
            Some((from, to)) if from <= to => Box::new(candidates.range((from, 0)..=(to, usize::MAX))),
            Some(_) => Box::new(std::iter::empty()),
            None => Box::new(candidates.iter()),
        };
        Ok(selected.map(|&(_, i)| &self.records[i]).filter(|r| filter.matches(r)).cloned().collect())
    }
}
