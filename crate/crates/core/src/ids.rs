//! Identifier newtypes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::canonical::is_sha256_hex;

macro_rules! uuid_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub Uuid);

        impl $name {
            pub fn new() -> Self {
                Self(Uuid::new_v4())
            }
        }

        impl Default for $name {
            fn default() -> Self {
                Self::new()
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                self.0.fmt(f)
            }
        }

        impl FromStr for $name {
            type Err = uuid::Error;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                Uuid::parse_str(s).map(Self)
            }
        }
    };
}

uuid_id!(RequestId);
uuid_id!(CaseId);
uuid_id!(PrincipalId);
uuid_id!(TicketId);
uuid_id!(NotificationId);
uuid_id!(AgentId);
uuid_id!(FlowId);
uuid_id!(TaskId);
uuid_id!(InvoiceId);
uuid_id!(ManifestId);

/// SHA-256 of the stored bytes, 64 lowercase hex characters.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct EvidenceId(String);

impl EvidenceId {
    pub fn parse(s: &str) -> Result<Self, InvalidEvidenceId> {
        if is_sha256_hex(s) {
            Ok(Self(s.to_owned()))
        } else {
            Err(InvalidEvidenceId(s.to_owned()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Fan-out directory and file name under `objects/`.
    pub fn object_parts(&self) -> (&str, &str) {
        self.0.split_at(2)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("not a 64-char lowercase hex digest: {0:?}")]
pub struct InvalidEvidenceId(pub String);

impl TryFrom<String> for EvidenceId {
    type Error = InvalidEvidenceId;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        if is_sha256_hex(&s) {
            Ok(Self(s))
        } else {
            Err(InvalidEvidenceId(s))
        }
    }
}

impl From<EvidenceId> for String {
    fn from(id: EvidenceId) -> Self {
        id.0
    }
}

impl fmt::Display for EvidenceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for EvidenceId {
    type Err = InvalidEvidenceId;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}
