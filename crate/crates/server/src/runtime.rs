//! `clerms serve`: the HTTP API, the agent listener on its own port, and a
//! background worker that delivers notifications and closes requests whose
//! acknowledgment window has elapsed.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use clerms_core::flows::transport;
use clerms_core::gateway::{AgentGateway, Clerms, Config, LogSender, ServiceError, SharedClerms};
use clerms_core::time::SystemClock;

use crate::api::{router, AppState};

/// Open the data directory with the wall clock and the log-only sender.
pub fn open_service(config: Config) -> Result<SharedClerms, ServiceError> {
    let (svc, report) = Clerms::open(config, Arc::new(SystemClock), Arc::new(LogSender))?;
    log::info!(
        "loaded {} events (snapshot: {:?}){}",
        report.events,
        report.snapshot_seq,
        if report.torn_tail.is_some() { ", dropped a torn final event" } else { "" }
    );
    Ok(svc.shared())
}

/// One pass of the background worker.
pub fn housekeeping(svc: &SharedClerms) {
    let mut svc = svc.lock().unwrap_or_else(|p| p.into_inner());
    match svc.deliver_pending() {
        Ok((0, 0)) => {}
        Ok((sent, failed)) => log::info!("notifications: {sent} delivered, {failed} pending retry"),
        Err(e) => log::error!("notification delivery: {e}"),
    }
    match svc.expire_acknowledgments() {
        Ok(closed) if !closed.is_empty() => log::info!("closed {} unacknowledged requests", closed.len()),
        Ok(_) => {}
        Err(e) => log::error!("acknowledgment expiry: {e}"),
    }
}

pub fn spawn_worker(svc: SharedClerms, interval: Duration) -> JoinHandle<()> {
    std::thread::Builder::new()
        .name("clerms-worker".into())
        .spawn(move || loop {
            std::thread::sleep(interval);
            housekeeping(&svc);
        })
        .expect("spawn worker thread")
}

pub fn spawn_agent_listener(svc: SharedClerms, bind: &str) -> std::io::Result<SocketAddr> {
    let (addr, _) = transport::spawn(bind, Arc::new(AgentGateway(svc)))?;
    Ok(addr)
}

/// Run the HTTP API until ctrl-c.
pub async fn serve_http(svc: SharedClerms, bind: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!("HTTP API on http://{}/api/v1", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(svc)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

pub fn serve(config: Config) -> Result<(), Box<dyn std::error::Error>> {
    let http = config.http.bind.clone();
    let agent = config.agent.bind.clone();
    let interval = Duration::from_secs(config.notifications.interval_secs.max(1));
    let svc = open_service(config)?;
    let addr = spawn_agent_listener(svc.clone(), &agent)?;
    log::info!("agent listener on {addr}");
    spawn_worker(svc.clone(), interval);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(serve_http(svc.clone(), &http))?;
    let mut svc = svc.lock().unwrap_or_else(|p| p.into_inner());
    svc.snapshot()?;
    Ok(())
}
