//! The wavecaster station server: an ICY stream fed by a real-time pacer,
//! a scheduler driving it, and the JSON API around the catalog.

pub mod api;
pub mod config;
pub mod feed;
pub mod ring;
pub mod station;
pub mod streamer;
pub mod tools;
pub mod tts;

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use chrono::Duration as Span;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;
use tracing::{error, info};
use wavecaster_core::adserve::RotationMode;
use wavecaster_core::catalog::{Catalog, CatalogError, Policy};
use wavecaster_core::icy::StationInfo;
use wavecaster_core::scheduler::Selection;

use crate::api::{ApiContext, ConsoleConfig};
use crate::config::ServerConfig;
use crate::feed::ChannelInfo;
use crate::ring::BroadcastRing;
use crate::station::{Station, StationOptions};
use crate::streamer::{Streamer, StreamerConfig};

#[derive(Debug, Error)]
pub enum StartError {
    #[error("cannot open library: {0}")]
    Catalog(#[from] CatalogError),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Handles to a started server. Dropping it stops every task.
pub struct RunningServer {
    pub stream_addr: SocketAddr,
    pub api_addr: SocketAddr,
    pub catalog: Arc<Catalog>,
    pub station: Arc<Station>,
    pub streamer: Arc<Streamer>,
    pub ring: Arc<BroadcastRing>,
    tasks: Vec<JoinHandle<()>>,
}

impl RunningServer {
    pub fn stream_url(&self) -> String {
        format!("http://{}/", self.stream_addr)
    }

    pub fn api_url(&self) -> String {
        format!("http://{}", self.api_addr)
    }

    /// Waits until any task exits, which only happens on a fatal error.
    pub async fn wait(mut self) {
        let tasks = std::mem::take(&mut self.tasks);
        if !tasks.is_empty() {
            let (_, _, rest) = futures::future::select_all(tasks).await;
            self.tasks = rest;
        }
    }

    pub fn shutdown(&mut self) {
        for task in self.tasks.drain(..) {
            task.abort();
        }
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn policy(config: &ServerConfig) -> Result<Policy, StartError> {
    if config.like_lifetime_days <= 0 || config.like_cooldown_hours < 0 || config.session_idle_hours <= 0 {
        return Err(StartError::Config("expiry windows must be positive".into()));
    }
    Ok(Policy {
        like_lifetime: Span::days(config.like_lifetime_days),
        like_cooldown: Span::hours(config.like_cooldown_hours),
        session_idle: Span::hours(config.session_idle_hours),
    })
}

async fn bind(addr: SocketAddr) -> Result<TcpListener, StartError> {
    TcpListener::bind(addr).await.map_err(|source| StartError::Bind { addr, source })
}

/// Opens the library, binds both ports and spawns the producer, the stream
/// acceptor and the API.
pub async fn start(config: &ServerConfig) -> Result<RunningServer, StartError> {
    if config.ring_seconds < 0.0 || !config.ring_seconds.is_finite() {
        return Err(StartError::Config("--ring-seconds must be a non-negative number".into()));
    }
    let catalog = Arc::new(Catalog::open(&config.library_dir, policy(config)?)?);
    let stream_listener = bind(SocketAddr::new(config.bind, config.stream_port)).await?;
    let api_listener = bind(SocketAddr::new(config.bind, config.api_port)).await?;
    let stream_addr = stream_listener.local_addr().map_err(|source| StartError::Bind {
        addr: SocketAddr::new(config.bind, config.stream_port),
        source,
    })?;
    let api_addr = api_listener.local_addr().map_err(|source| StartError::Bind {
        addr: SocketAddr::new(config.bind, config.api_port),
        source,
    })?;

    let host = if config.bind.is_unspecified() {
        "localhost".to_string()
    } else {
        stream_addr.ip().to_string()
    };
    let stream_url = config
        .public_stream_url
        .clone()
        .unwrap_or_else(|| format!("http://{host}:{}/", stream_addr.port()));
    let api_base = config
        .public_url
        .clone()
        .unwrap_or_else(|| format!("http://{host}:{}", api_addr.port()))
        .trim_end_matches('/')
        .to_string();

    let ring = Arc::new(BroadcastRing::new(config.ring_seconds));
    let station = Arc::new(Station::new(
        catalog.clone(),
        ring.clone(),
        StationOptions {
            stream_url: stream_url.clone(),
            selection: if config.sequential { Selection::Sequential } else { Selection::Weighted },
            seed: config.seed,
        },
    ));
    let streamer = Arc::new(Streamer::new(
        StreamerConfig {
            station: StationInfo {
                name: config.station_name.clone(),
                genre: config.station_genre.clone(),
                bitrate_kbps: config.bitrate,
                metaint: config.metaint,
            },
            max_listeners: config.max_listeners,
            handshake_timeout: Duration::from_secs(10),
        },
        ring.clone(),
    ));
    let context = Arc::new(ApiContext::new(
        catalog.clone(),
        station.clone(),
        tts::adapter_from_spec(&config.tts_adapter),
        config.announce_voice.clone(),
        ChannelInfo {
            title: config.feed_title.clone(),
            description: config.feed_description.clone(),
            base_url: api_base.clone(),
            language: None,
        },
        ConsoleConfig {
            api_base_url: api_base,
            stream_url,
            poll_interval_ms: config.poll_interval_ms,
            rotation_interval_ms: config.rotation_interval_ms,
            rotation_mode: if config.fair_rotation { RotationMode::Fair } else { RotationMode::Classic },
        },
        config.console_dir.clone(),
    ));

    let mut tasks = Vec::new();
    tasks.push(tokio::spawn(station.clone().run()));
    let acceptor = streamer.clone();
    tasks.push(tokio::spawn(async move {
        if let Err(e) = acceptor.serve(stream_listener).await {
            error!(error = %e, "stream listener failed");
        }
    }));
    let app = api::router(context);
    tasks.push(tokio::spawn(async move {
        if let Err(e) = axum::serve(api_listener, app).await {
            error!(error = %e, "api listener failed");
        }
    }));
    info!(%stream_addr, %api_addr, library = %config.library_dir.display(), "wavecaster started");

    Ok(RunningServer {
        stream_addr,
        api_addr,
        catalog,
        station,
        streamer,
        ring,
        tasks,
    })
}
