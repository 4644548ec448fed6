//! Canonical JSON and SHA-256 helpers.
//!
//! Canonical form is UTF-8 JSON with lexicographically sorted object keys and
//! no insignificant whitespace. `serde_json::Map` is backed by a `BTreeMap`
//! (the `preserve_order` feature is not enabled), so routing a value through
//! `serde_json::Value` sorts every object's keys.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// 64 zero characters: the `prev_hash` of a genesis link.
pub const ZERO_HASH: &str = "0000000000000000000000000000000000000000000000000000000000000000";

pub fn to_canonical_json<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let v = serde_json::to_value(value)?;
    serde_json::to_string(&v)
}

pub fn to_canonical_value<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<serde_json::Value> {
    serde_json::to_value(value)
}

pub fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

/// SHA-256 over the canonical JSON form of `value`.
pub fn canonical_digest<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    Ok(sha256_hex(to_canonical_json(value)?.as_bytes()))
}

/// True for a 64-character lowercase hex string.
pub fn is_sha256_hex(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}
