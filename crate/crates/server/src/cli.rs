//! The `clerms` command line. Commands other than `serve` and `agent-sim`
//! work directly on the local data directory, so they need it to be free
//! (no running server). Exit codes: 0 success, 1 domain error, 2 usage.

use std::ffi::OsString;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use clerms_core::custody::{ChainStatus, EvidenceStore};
use clerms_core::domain::Role;
use clerms_core::flows::agent::{load_process_table, AgentSession, ProcessSource, SimAgent};
use clerms_core::flows::protocol::RegisterPayload;
use clerms_core::flows::Os;
use clerms_core::gateway::auth::generate_token;
use clerms_core::gateway::{Clerms, Config, InvoiceInput, LogSender, Principal, ServiceError};
use clerms_core::ids::{CaseId, EvidenceId, RequestId};
use clerms_core::reporting::{export_report, Exportable, Period};
use clerms_core::time::{SystemClock, Timestamp};

#[derive(Debug, Parser)]
#[command(name = "clerms", version, about = "Law-enforcement request management")]
pub struct Cli {
    /// Config file (default: $CLERMS_CONFIG, else built-in defaults).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Data directory, overriding the config file.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Print machine-readable JSON.
    #[arg(long, global = true)]
    json: bool,
    /// Bearer token of the acting principal.
    #[arg(long, global = true, env = "CLERMS_TOKEN", hide_env_values = true)]
    token: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the HTTP API, agent listener and notification worker.
    Serve,
    /// Manage principals and their bearer tokens.
    #[command(subcommand)]
    Principal(PrincipalCmd),
    /// Submit and inspect requests.
    #[command(subcommand)]
    Request(RequestCmd),
    /// Inspect cases.
    #[command(subcommand)]
    Case(CaseCmd),
    /// Transparency reporting.
    #[command(subcommand)]
    Report(ReportCmd),
    /// Cost-reimbursement invoices.
    #[command(subcommand)]
    Invoice(InvoiceCmd),
    /// Evidence integrity checks.
    #[command(subcommand)]
    Evidence(EvidenceCmd),
    /// Run a simulated collection agent against a server.
    AgentSim(AgentSimArgs),
}

#[derive(Debug, Subcommand)]
enum PrincipalCmd {
    /// Provision a principal. Prints the bearer token once.
    Add {
        /// le_agent, crisis_manager, forensic_expert, legal_advisor or admin.
        #[arg(long)]
        role: String,
        #[arg(long, default_value = "")]
        name: String,
        /// Use this token instead of generating one.
        #[arg(long = "new-token")]
        new_token: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
enum RequestCmd {
    /// Submit a request from a JSON file ("-" for stdin).
    Submit { file: PathBuf },
    /// List the requests visible to the caller.
    List,
    /// Show one request with its history.
    Show { id: String },
}

#[derive(Debug, Subcommand)]
enum CaseCmd {
    /// Show a case with its custody-chain status.
    Show { id: String },
}

#[derive(Debug, Subcommand)]
enum ReportCmd {
    /// Aggregate requests received in [from, to).
    Transparency {
        /// RFC 3339 timestamp, inclusive.
        #[arg(long)]
        from: String,
        /// RFC 3339 timestamp, exclusive.
        #[arg(long)]
        to: String,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
enum InvoiceCmd {
    /// Compute an invoice from a JSON file of lines ("-" for stdin).
    Compute {
        file: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
}

#[derive(Debug, Subcommand)]
enum EvidenceCmd {
    /// Check an item's custody chain. Exits 1 when the chain is broken.
    Verify { id: String },
}

#[derive(Debug, clap::Args)]
struct AgentSimArgs {
    /// Agent listener address of the server.
    #[arg(long, default_value = "127.0.0.1:9090")]
    server: String,
    /// Sandbox root the agent exposes as "/".
    #[arg(long)]
    root: PathBuf,
    /// JSON process table served to ProcessList flows.
    #[arg(long)]
    processes: Option<PathBuf>,
    /// JSON-lines access log shipped on connect.
    #[arg(long)]
    logs: Option<PathBuf>,
    #[arg(long, default_value = "sim-agent")]
    hostname: String,
    /// Run assigned flows once and exit instead of polling forever.
    #[arg(long)]
    once: bool,
    #[arg(long, default_value_t = 2000)]
    interval_ms: u64,
}

enum CliError {
    Usage(String),
    Domain { name: String, message: String },
}

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        CliError::Domain { name: e.name().to_owned(), message: e.to_string() }
    }
}

fn domain(name: &str, message: impl std::fmt::Display) -> CliError {
    CliError::Domain { name: name.to_owned(), message: message.to_string() }
}

fn usage(message: impl Into<String>) -> CliError {
    CliError::Usage(message.into())
}

type CliResult = Result<Output, CliError>;

/// What a command prints: JSON for `--json`, text otherwise, plus whether
/// the outcome counts as a failure.
struct Output {
    json: Value,
    text: String,
    failed: bool,
}

impl Output {
    fn new(json: impl Serialize, text: impl Into<String>) -> Self {
        Output { json: serde_json::to_value(json).expect("output serializes"), text: text.into(), failed: false }
    }
}

pub fn main() -> ExitCode {
    ExitCode::from(run(std::env::args_os()) as u8)
}

/// Parse and run one invocation, printing to stdout/stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let json = cli.json;
    match execute(cli) {
        Ok(out) => {
            if json {
                println!("{}", serde_json::to_string_pretty(&out.json).expect("json"));
            } else if !out.text.is_empty() {
                println!("{}", out.text.trim_end());
            }
            i32::from(out.failed)
        }
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            2
        }
        Err(CliError::Domain { name, message }) => {
            if json {
                println!("{}", serde_json::to_string_pretty(&json!({"error": name, "message": message})).expect("json"));
            }
            eprintln!("error: {message}");
            1
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config, CliError> {
    let mut config = Config::load(cli.config.as_deref()).map_err(|e| domain("ConfigError", e))?;
    if let Some(d) = &cli.data_dir {
        config.data_dir = d.clone();
    }
    Ok(config)
}

fn open(cli: &Cli) -> Result<Clerms, CliError> {
    let (svc, _) = Clerms::open(load_config(cli)?, Arc::new(SystemClock), Arc::new(LogSender))?;
    Ok(svc)
}

fn acting(cli: &Cli, svc: &Clerms) -> Result<Principal, CliError> {
    let token = cli.token.as_deref().ok_or_else(|| usage("this command needs --token or CLERMS_TOKEN"))?;
    Ok(svc.authenticate(token)?)
}

fn read_json(path: &Path) -> Result<Value, CliError> {
    let bytes = if path == Path::new("-") {
        let mut buf = Vec::new();
        std::io::Read::read_to_end(&mut std::io::stdin(), &mut buf).map_err(|e| domain("IoError", e))?;
        buf
    } else {
        std::fs::read(path).map_err(|e| domain("IoError", format!("{}: {e}", path.display())))?
    };
    serde_json::from_slice(&bytes).map_err(|e| domain("BadInput", format!("{}: {e}", path.display())))
}

fn parse_id<T: std::str::FromStr>(raw: &str) -> Result<T, CliError> {
    raw.parse().map_err(|_| usage(format!("malformed id: {raw}")))
}

fn parse_time(raw: &str) -> Result<Timestamp, CliError> {
    Timestamp::parse(raw).map_err(|e| usage(format!("{raw}: {e}")))
}

/// Left-aligned columns separated by two spaces.
fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| {
        cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect::<Vec<_>>().join("  ").trim_end().to_owned()
    };
    let mut out = line(header.to_vec());
    for r in rows {
        out.push('\n');
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    out
}

fn cell(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => "-".into(),
        other => other.to_string(),
    }
}

fn execute(cli: Cli) -> CliResult {
    match &cli.command {
        Command::Serve => {
            let config = load_config(&cli)?;
            crate::runtime::serve(config).map_err(|e| domain("ServeError", e))?;
            Ok(Output::new(json!({"stopped": true}), ""))
        }
        Command::Principal(PrincipalCmd::Add { role, name, new_token }) => {
            let role = Role::parse(role).ok_or_else(|| usage(format!("unknown role {role}")))?;
            let mut svc = open(&cli)?;
            let token = new_token.clone().unwrap_or_else(generate_token);
            let p = svc.add_principal(role, &token, name)?;
            let text = format!("principal {} ({})\ntoken: {token}", p.principal_id, p.role);
            Ok(Output::new(json!({"principal": p, "token": token}), text))
        }
        Command::Request(cmd) => request(&cli, cmd),
        Command::Case(CaseCmd::Show { id }) => {
            let id: CaseId = parse_id(id)?;
            let svc = open(&cli)?;
            let who = acting(&cli, &svc)?;
            let view = svc.case_view(&who, id)?;
            let c = &view.case;
            let mut text = format!(
                "case {}\nrequest {}\nstatus {:?}\nopened {}\n",
                c.case_id, c.request_id, c.status, c.opened_at
            );
            let rows: Vec<Vec<String>> =
                view.chains.iter().map(|(e, s)| vec![e.to_string(), s.to_string()]).collect();
            text.push_str(&table(&["EVIDENCE", "CHAIN"], &rows));
            text.push_str(&format!("\n{} documents, {} tasks", c.documents.len(), c.tasks.len()));
            Ok(Output::new(&view, text))
        }
        Command::Report(ReportCmd::Transparency { from, to, format }) => {
            let period = Period { start: parse_time(from)?, end: parse_time(to)? };
            let svc = open(&cli)?;
            let who = acting(&cli, &svc)?;
            let report = svc.transparency_report(&who, period)?;
            let text = match format {
                Format::Csv => String::from_utf8(export_report(Exportable::Report(&report), "csv").map_err(ServiceError::from)?)
                    .expect("csv is utf-8"),
                Format::Json => serde_json::to_string_pretty(&report).expect("json"),
            };
            Ok(Output::new(&report, text))
        }
        Command::Invoice(InvoiceCmd::Compute { file, format }) => {
            let input: InvoiceInput =
                serde_json::from_value(read_json(file)?).map_err(|e| domain("BadInput", e))?;
            let mut svc = open(&cli)?;
            let who = acting(&cli, &svc)?;
            let invoice = svc.compute_invoice(&who, input)?;
            let text = match format {
                Format::Csv => String::from_utf8(export_report(Exportable::Invoice(&invoice), "csv").map_err(ServiceError::from)?)
                    .expect("csv is utf-8"),
                Format::Json => {
                    let mut rows: Vec<Vec<String>> = invoice
                        .resource_lines
                        .iter()
                        .map(|l| vec![l.name.clone(), l.line_cost.to_string()])
                        .collect();
                    rows.extend(invoice.labor_lines.iter().map(|l| vec![l.role.clone(), l.cost.to_string()]));
                    rows.push(vec!["support fees".into(), invoice.support_fees.to_string()]);
                    rows.push(vec!["TOTAL".into(), invoice.total.to_string()]);
                    table(&["LINE", "COST"], &rows)
                }
            };
            Ok(Output::new(&invoice, text))
        }
        Command::Evidence(EvidenceCmd::Verify { id }) => {
            let id: EvidenceId = parse_id(id)?;
            let config = load_config(&cli)?;
            let store = EvidenceStore::open(&config.data_dir).map_err(ServiceError::from)?;
            let status = store.verify_chain(&id).map_err(ServiceError::from)?;
            let mut out = Output::new(json!({"evidence_id": id, "status": status.to_string()}), status.to_string());
            out.failed = status != ChainStatus::Ok;
            Ok(out)
        }
        Command::AgentSim(args) => agent_sim(args),
    }
}

fn request(cli: &Cli, cmd: &RequestCmd) -> CliResult {
    match cmd {
        RequestCmd::Submit { file } => {
            let raw = read_json(file)?;
            let mut svc = open(cli)?;
            let who = acting(cli, &svc)?;
            let (rec, ticket) = svc.submit_request(&who, &raw).map_err(|e| match e {
                ServiceError::Validation(v) => domain("ValidationErrors", v),
                other => other.into(),
            })?;
            let text = format!(
                "request {}\nticket {}\nstate {:?}, priority {:?}",
                rec.id(),
                ticket.ticket_id,
                rec.state(),
                ticket.priority
            );
            Ok(Output::new(
                json!({"request_id": rec.id(), "ticket_id": ticket.ticket_id, "state": rec.state(), "priority": ticket.priority}),
                text,
            ))
        }
        RequestCmd::List => {
            let svc = open(cli)?;
            let who = acting(cli, &svc)?;
            let list = svc.list_requests(&who)?;
            let rows: Vec<Vec<String>> = list
                .iter()
                .map(|r| {
                    ["priority", "request_id", "state", "objective", "regime", "submitted_at"]
                        .iter()
                        .map(|k| cell(&r[*k]))
                        .collect()
                })
                .collect();
            let text = table(&["PRIORITY", "REQUEST", "STATE", "OBJECTIVE", "REGIME", "SUBMITTED"], &rows);
            Ok(Output::new(&list, text))
        }
        RequestCmd::Show { id } => {
            let id: RequestId = parse_id(id)?;
            let svc = open(cli)?;
            let who = acting(cli, &svc)?;
            let view = svc.request_view(&who, id)?;
            let rec = &svc.state().requests[&id];
            let mut text = format!("request {id}\nstate {:?}\n", rec.state());
            let rows: Vec<Vec<String>> =
                rec.history.iter().map(|h| vec![h.at.to_string(), format!("{:?}", h.state)]).collect();
            text.push_str(&table(&["AT", "STATE"], &rows));
            Ok(Output::new(&view, text))
        }
    }
}

fn read_log_records(path: &Path) -> Result<Vec<Value>, CliError> {
    let file = std::fs::File::open(path).map_err(|e| domain("IoError", format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| domain("IoError", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line)
            .map_err(|e| domain("BadInput", format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(v);
    }
    Ok(out)
}

fn agent_sim(args: &AgentSimArgs) -> CliResult {
    let processes = match &args.processes {
        Some(p) => ProcessSource::Table(load_process_table(p).map_err(|e| domain(e.name(), e))?),
        None => ProcessSource::None,
    };
    let agent = SimAgent::new(&args.root, processes).map_err(|e| domain("IoError", format!("{}: {e}", args.root.display())))?;
    let os = if cfg!(windows) { Os::Windows } else { Os::Linux };
    let hello = RegisterPayload { agent_id: None, hostname: args.hostname.clone(), os, labels: vec![] };
    let agent_err = |e: clerms_core::flows::agent::AgentError| domain("AgentError", e);
    let mut session = AgentSession::connect(&args.server, hello).map_err(agent_err)?;
    log::info!("registered as agent {}", session.agent_id());
    if let Some(path) = &args.logs {
        for batch in read_log_records(path)?.chunks(500) {
            session.ship_logs(batch.to_vec()).map_err(agent_err)?;
        }
    }
    if !args.once {
        session.run_forever(&agent, Duration::from_millis(args.interval_ms)).map_err(agent_err)?;
    }
    let results = session.run_pending(&agent).map_err(agent_err)?;
    let errors = session.take_server_errors();
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| vec![r.flow_id.to_string(), format!("{:?}", r.status), r.items.as_ref().map_or(0, |i| i.len()).to_string()])
        .collect();
    let mut text = format!("agent {}\n{}", session.agent_id(), table(&["FLOW", "STATUS", "ITEMS"], &rows));
    for (code, message) in &errors {
        text.push_str(&format!("\nserver error {code}: {message}"));
    }
    let mut out = Output::new(
        json!({
            "agent_id": session.agent_id(),
            "results": results,
            "server_errors": errors.iter().map(|(c, m)| json!({"error": c, "message": m})).collect::<Vec<_>>(),
        }),
        text,
    );
    out.failed = !errors.is_empty();
    Ok(out)
}
