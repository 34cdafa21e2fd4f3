//! Socket front ends: the frame ingest listener and the HTTP server.

use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use thiserror::Error;
use tokio::io::AsyncReadExt;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::watch;
use tokio::task::JoinHandle;

use crate::clock::Clock;
use crate::config::GatewayConfig;
use crate::service::{Gateway, GatewayError, GatewayOptions};

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("server i/o: {0}")]
    Io(#[from] std::io::Error),
}

async fn bind(addr: SocketAddr) -> Result<TcpListener, ServeError> {
    TcpListener::bind(addr).await.map_err(|source| ServeError::Bind { addr, source })
}

/// A gateway with both listeners bound and serving.
pub struct RunningGateway {
    pub gateway: Gateway,
    pub ingest_addr: SocketAddr,
    pub http_addr: SocketAddr,
    shutdown: watch::Sender<bool>,
    ingest: JoinHandle<()>,
    http: JoinHandle<std::io::Result<()>>,
}

/// Binds both ports, then opens the store and starts serving. Nothing is
/// written to disk if either port is unavailable.
pub async fn start(config: &GatewayConfig, clock: Arc<dyn Clock>) -> Result<RunningGateway, ServeError> {
    let ingest_listener = bind(config.ingest.listen).await?;
    let http_listener = bind(config.http.listen).await?;
    let options = GatewayOptions {
        store_dir: config.store.dir.clone(),
        hysteresis: config.alerts,
        stamping: config.clock,
    };
    let gateway = Gateway::open(options, clock)?;
    start_with(gateway, ingest_listener, http_listener, config.ui_dir.clone())
}

pub fn start_with(
    gateway: Gateway,
    ingest_listener: TcpListener,
    http_listener: TcpListener,
    ui_dir: Option<PathBuf>,
) -> Result<RunningGateway, ServeError> {
    let ingest_addr = ingest_listener.local_addr()?;
    let http_addr = http_listener.local_addr()?;
    let (shutdown, rx) = watch::channel(false);

    let ingest = tokio::spawn(accept_loop(gateway.clone(), ingest_listener, rx.clone()));
    let app = crate::http::router(gateway.clone(), ui_dir);
    let mut http_rx = rx;
    let http = tokio::spawn(async move {
        axum::serve(http_listener, app)
            .with_graceful_shutdown(async move {
                let _ = http_rx.wait_for(|stop| *stop).await;
            })
            .await
    });
    tracing::info!(%ingest_addr, %http_addr, "gateway listening");
    Ok(RunningGateway {
        gateway,
        ingest_addr,
        http_addr,
        shutdown,
        ingest,
        http,
    })
}

impl RunningGateway {
    /// Serves until `signal` resolves, then shuts down.
    pub async fn run_until(self, signal: impl Future<Output = ()>) -> Result<(), ServeError> {
        signal.await;
        self.shutdown().await
    }

    /// Stops accepting, ends live streams and waits for both servers. Every
    /// store write is already on disk when it returns.
    pub async fn shutdown(self) -> Result<(), ServeError> {
        let _ = self.shutdown.send(true);
        self.gateway.hub().close_all();
        let _ = self.ingest.await;
        match self.http.await {
            Ok(result) => result?,
            Err(e) => tracing::error!("http server task failed: {e}"),
        }
        tracing::info!("gateway stopped");
        Ok(())
    }
}

async fn accept_loop(gateway: Gateway, listener: TcpListener, mut shutdown: watch::Receiver<bool>) {
    let mut connections = tokio::task::JoinSet::new();
    let template = shutdown.clone();
    loop {
        tokio::select! {
            accepted = listener.accept() => match accepted {
                Ok((socket, peer)) => {
                    let gw = gateway.clone();
                    let stop = template.clone();
                    connections.spawn(handle_connection(gw, socket, peer, stop));
                }
                Err(e) => tracing::warn!("accept failed: {e}"),
            },
            _ = shutdown.wait_for(|stop| *stop) => break,
        }
    }
    while connections.join_next().await.is_some() {}
}

async fn handle_connection(gateway: Gateway, mut socket: TcpStream, peer: SocketAddr, mut shutdown: watch::Receiver<bool>) {
    let _ = socket.set_nodelay(true);
    let mut connection = gateway.connect(Some(peer.to_string()));
    tracing::debug!(connection = connection.id(), %peer, "node connected");
    let mut buf = vec![0u8; 4096];
    loop {
        let n = tokio::select! {
            read = socket.read(&mut buf) => match read {
                Ok(0) => break,
                Ok(n) => n,
                Err(e) => {
                    tracing::debug!(connection = connection.id(), "read failed: {e}");
                    break;
                }
            },
            _ = shutdown.wait_for(|stop| *stop) => break,
        };
        match connection.feed(&buf[..n]) {
            Ok(report) if report.closed => {
                tracing::info!(connection = connection.id(), "connection replaced by a newer one, closing");
                break;
            }
            Ok(_) => {}
            Err(e) => {
                tracing::error!(connection = connection.id(), "store write failed, dropping connection: {e}");
                break;
            }
        }
    }
    tracing::debug!(connection = connection.id(), "node disconnected");
}
