//! Network surface of CLERMS: the `/api/v1` HTTP router, the agent
//! listener and notification worker started by `clerms serve`, and the
//! administration CLI.

pub mod api;
pub mod cli;
pub mod runtime;
