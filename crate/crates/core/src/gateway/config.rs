//! Service configuration, read from a TOML file.
//!
//! ```toml
//! data_dir = "/var/lib/clerms"
//!
//! [http]
//! bind = "127.0.0.1:8080"
//!
//! [agent]
//! bind = "127.0.0.1:9090"
//!
//! [workflow]
//! preservation_delay_days = 90
//! preservation_extension_days = 90
//! ack_timeout_days = 30
//!
//! [billing]
//! hours_per_month = 730
//!
//! [storage]
//! capacity_bytes = 10737418240   # optional
//! snapshot_every = 1000
//! fsync = true
//!
//! [destruction]
//! min_authorizers = 2
//!
//! [notifications]
//! interval_secs = 5
//!
//! # Role tokens, stored as SHA-256 hex digests.
//! [[principals]]
//! role = "admin"
//! token_sha256 = "…"
//!
//! # Optional role-matrix rows: action = ["role", "role:own", …]
//! [access]
//! query_logs = ["forensic_expert", "crisis_manager"]
//! ```
//!
//! The file path comes from the command line, else `CLERMS_CONFIG`, else
//! built-in defaults are used.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::auth::{Access, Action, RoleMatrix};
use crate::canonical::is_sha256_hex;
use crate::domain::Role;
use crate::ids::PrincipalId;
use crate::workflow::WorkflowConfig;

pub const CONFIG_ENV: &str = "CLERMS_CONFIG";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpConfig {
    pub bind: String,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self { bind: "127.0.0.1:8080".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentListenerConfig {
    pub bind: String,
}

impl Default for AgentListenerConfig {
    fn default() -> Self {
        Self { bind: "127.0.0.1:9090".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkflowSection {
    pub preservation_delay_days: i64,
    pub preservation_extension_days: i64,
    pub ack_timeout_days: i64,
}

impl Default for WorkflowSection {
    fn default() -> Self {
        let d = WorkflowConfig::default();
        Self {
            preservation_delay_days: d.preservation_delay_days,
            preservation_extension_days: d.preservation_extension_days,
            ack_timeout_days: d.ack_timeout_days,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BillingConfig {
    /// Convenience default for monthly lines; cost lines always take explicit hours.
    pub hours_per_month: u32,
}

impl Default for BillingConfig {
    fn default() -> Self {
        Self { hours_per_month: 730 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StorageConfig {
    pub capacity_bytes: Option<u64>,
    /// Write a snapshot after this many events; 0 disables snapshots.
    pub snapshot_every: u64,
    pub fsync: bool,
}

impl Default for StorageConfig {
    fn default() -> Self {
        Self { capacity_bytes: None, snapshot_every: 1000, fsync: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DestructionConfig {
    pub min_authorizers: usize,
}

impl Default for DestructionConfig {
    fn default() -> Self {
        Self { min_authorizers: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NotificationConfig {
    pub interval_secs: u64,
}

impl Default for NotificationConfig {
    fn default() -> Self {
        Self { interval_secs: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrincipalConfig {
    #[serde(default)]
    pub principal_id: Option<PrincipalId>,
    pub role: Role,
    pub token_sha256: String,
    #[serde(default)]
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data_dir: PathBuf,
    pub http: HttpConfig,
    pub agent: AgentListenerConfig,
    pub workflow: WorkflowSection,
    pub billing: BillingConfig,
    pub storage: StorageConfig,
    pub destruction: DestructionConfig,
    pub notifications: NotificationConfig,
    pub principals: Vec<PrincipalConfig>,
    pub access: BTreeMap<String, Vec<String>>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("clerms-data"),
            http: HttpConfig::default(),
            agent: AgentListenerConfig::default(),
            workflow: WorkflowSection::default(),
            billing: BillingConfig::default(),
            storage: StorageConfig::default(),
            destruction: DestructionConfig::default(),
            notifications: NotificationConfig::default(),
            principals: Vec::new(),
            access: BTreeMap::new(),
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: Config = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
        Self::parse(&text)
    }

    /// Load from `explicit`, else from `CLERMS_CONFIG`, else defaults.
    pub fn load(explicit: Option<&Path>) -> Result<Self, ConfigError> {
        match explicit {
            Some(p) => Self::from_file(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) => Self::from_file(Path::new(&p)),
                None => Ok(Self::default()),
            },
        }
    }

    pub fn workflow_config(&self) -> WorkflowConfig {
        WorkflowConfig {
            preservation_delay_days: self.workflow.preservation_delay_days,
            preservation_extension_days: self.workflow.preservation_extension_days,
            ack_timeout_days: self.workflow.ack_timeout_days,
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let w = &self.workflow;
        if w.preservation_delay_days <= 0 || w.preservation_extension_days <= 0 || w.ack_timeout_days <= 0 {
            return Err(ConfigError::Invalid("workflow delays must be positive".into()));
        }
        if self.destruction.min_authorizers < 2 {
            return Err(ConfigError::Invalid("destruction needs at least two authorizers".into()));
        }
        if let Some(p) = self.principals.iter().find(|p| !is_sha256_hex(&p.token_sha256)) {
            return Err(ConfigError::Invalid(format!("token_sha256 for {} is not a hex digest", p.role)));
        }
        self.role_matrix().map(|_| ())
    }

    /// The default matrix with the `[access]` rows applied.
    pub fn role_matrix(&self) -> Result<RoleMatrix, ConfigError> {
        let mut matrix = RoleMatrix::default();
        for (name, grants) in &self.access {
            let action: Action = serde_json::from_value(serde_json::Value::String(name.clone()))
                .map_err(|_| ConfigError::Invalid(format!("unknown action {name:?}")))?;
            let mut row = Vec::new();
            for g in grants {
                let (role, access) = match g.split_once(':') {
                    Some((r, "own")) => (r, Access::Own),
                    Some(_) => return Err(ConfigError::Invalid(format!("bad grant {g:?}"))),
                    None => (g.as_str(), Access::Allow),
                };
                let role = Role::parse(role).ok_or_else(|| ConfigError::Invalid(format!("unknown role {role:?}")))?;
                row.push((role, access));
            }
            matrix.set_row(action, &row);
        }
        Ok(matrix)
    }
}
