//! ICY listener sessions on the stream port.

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::broadcast::error::RecvError;
use tracing::{debug, info, warn};
use wavecaster_core::icy::{build_icy_response, HandshakeError, MetadataWriter, StationInfo};

use crate::ring::{BroadcastRing, StreamPacket};

const MAX_REQUEST_BYTES: usize = 8 * 1024;
const BUSY_RESPONSE: &[u8] = b"HTTP/1.0 503 Service Unavailable\r\nConnection: close\r\n\r\n";

#[derive(Debug, Clone)]
pub struct StreamerConfig {
    pub station: StationInfo,
    pub max_listeners: usize,
    pub handshake_timeout: Duration,
}

#[derive(Debug, Default)]
pub struct StreamerStats {
    pub active: AtomicUsize,
    pub sessions: AtomicU64,
    pub bytes_sent: AtomicU64,
    pub lagged_out: AtomicU64,
}

/// Accepts listeners and feeds them from the ring.
#[derive(Debug)]
pub struct Streamer {
    config: StreamerConfig,
    ring: Arc<BroadcastRing>,
    stats: StreamerStats,
}

#[derive(Debug)]
enum SessionEnd {
    ClientGone,
    Lagged(u64),
    Ended,
}

impl Streamer {
    pub fn new(config: StreamerConfig, ring: Arc<BroadcastRing>) -> Self {
        Self {
            config,
            ring,
            stats: StreamerStats::default(),
        }
    }

    pub fn stats(&self) -> &StreamerStats {
        &self.stats
    }

    pub fn config(&self) -> &StreamerConfig {
        &self.config
    }

    /// Runs until the listener fails; each connection gets its own task.
    pub async fn serve(self: Arc<Self>, listener: TcpListener) -> std::io::Result<()> {
        loop {
            let (socket, peer) = listener.accept().await?;
            let this = self.clone();
            tokio::spawn(async move {
                if let Err(e) = this.handle(socket).await {
                    debug!(%peer, error = %e, "listener connection ended with error");
                }
            });
        }
    }

    async fn handle(&self, mut socket: TcpStream) -> std::io::Result<()> {
        let _ = socket.set_nodelay(true);
        let request = match tokio::time::timeout(self.config.handshake_timeout, read_request(&mut socket)).await {
            Ok(result) => result?,
            Err(_) => return Ok(()),
        };
        let handshake = match build_icy_response(&self.config.station, &request) {
            Ok(h) => h,
            Err(e) => {
                if let Some(reply) = e.response() {
                    socket.write_all(reply).await?;
                }
                if e == HandshakeError::Malformed {
                    debug!("closing connection without an HTTP request line");
                }
                return Ok(());
            }
        };

        let slot = self.stats.active.fetch_add(1, Ordering::SeqCst);
        if slot >= self.config.max_listeners {
            self.stats.active.fetch_sub(1, Ordering::SeqCst);
            socket.write_all(BUSY_RESPONSE).await?;
            return Ok(());
        }
        self.stats.sessions.fetch_add(1, Ordering::Relaxed);
        let result = self.run_session(&mut socket, handshake.header, handshake.wants_metadata).await;
        self.stats.active.fetch_sub(1, Ordering::SeqCst);
        match result {
            Ok(SessionEnd::Lagged(n)) => {
                self.stats.lagged_out.fetch_add(1, Ordering::Relaxed);
                warn!(skipped = n, "disconnecting listener that fell behind the ring");
            }
            Ok(end) => debug!(?end, "session closed"),
            Err(e) => debug!(error = %e, "session closed"),
        }
        Ok(())
    }

    async fn run_session(
        &self,
        socket: &mut TcpStream,
        header: Vec<u8>,
        wants_metadata: bool,
    ) -> std::io::Result<SessionEnd> {
        let (burst, mut rx) = self.ring.subscribe();
        info!(burst_frames = burst.len(), wants_metadata, "listener attached");
        let mut meta = wants_metadata.then(|| MetadataWriter::new(self.config.station.metaint));

        let mut out = header;
        for packet in &burst {
            encode(&mut meta, packet, &mut out);
        }
        self.send(socket, &out).await?;

        loop {
            let packet = match rx.recv().await {
                Ok(p) => p,
                Err(RecvError::Lagged(n)) => return Ok(SessionEnd::Lagged(n)),
                Err(RecvError::Closed) => return Ok(SessionEnd::Ended),
            };
            out.clear();
            encode(&mut meta, &packet, &mut out);
            // pick up anything else already queued so one write covers it
            while let Ok(next) = rx.try_recv() {
                encode(&mut meta, &next, &mut out);
            }
            if self.send(socket, &out).await.is_err() {
                return Ok(SessionEnd::ClientGone);
            }
        }
    }

    async fn send(&self, socket: &mut TcpStream, bytes: &[u8]) -> std::io::Result<()> {
        socket.write_all(bytes).await?;
        self.stats.bytes_sent.fetch_add(bytes.len() as u64, Ordering::Relaxed);
        Ok(())
    }
}

fn encode(meta: &mut Option<MetadataWriter>, packet: &StreamPacket, out: &mut Vec<u8>) {
    match meta {
        Some(writer) => writer.wrap(&packet.bytes, &packet.title, out),
        None => out.extend_from_slice(&packet.bytes),
    }
}

/// Reads until the blank line ending the request header, the size limit, or EOF.
async fn read_request(socket: &mut TcpStream) -> std::io::Result<String> {
    let mut buf = Vec::with_capacity(512);
    let mut chunk = [0u8; 1024];
    while buf.len() < MAX_REQUEST_BYTES {
        let n = socket.read(&mut chunk).await?;
        if n == 0 {
            break;
        }
        buf.extend_from_slice(&chunk[..n]);
        if buf.windows(4).any(|w| w == b"\r\n\r\n") || buf.windows(2).any(|w| w == b"\n\n") {
            break;
        }
    }
    Ok(String::from_utf8_lossy(&buf).into_owned())
}
