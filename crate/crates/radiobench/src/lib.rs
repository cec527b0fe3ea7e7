//! Swarm of simulated ICY listeners.
//!
//! Each listener sends one `GET` with `Icy-MetaData: 1` and from then on only
//! reads. It strips the in-band metadata, checks that the remaining audio is
//! a contiguous run of MP3 frames, and measures throughput over the window
//! after the connect burst has drained.

use std::time::Duration;

use serde::Serialize;
use thiserror::Error;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio::time::Instant;
use url::Url;
use wavecaster_core::icy::{estimate_bandwidth, parse_metaint, IcyDemuxer};
use wavecaster_core::mp3frame::{parse_header, HEADER_LEN};

const MAX_HEADER_BYTES: usize = 16 * 1024;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid url {0}")]
    Url(String),
    #[error("connecting to {addr}: {source}")]
    Connect {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("server did not answer with ICY 200: {0:?}")]
    NotIcy(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize)]
pub struct Expectations {
    /// Nominal stream bitrate A in kbps.
    pub bitrate_kbps: Option<f64>,
    /// Upper bound on the measured metadata overhead B in kbps.
    pub max_sync_kbps: Option<f64>,
    /// Allowed relative deviation of each listener's audio rate from A.
    pub listener_tolerance: f64,
    /// Allowed relative deviation of the aggregate from n * (A + B).
    pub model_tolerance: f64,
}

impl Default for Expectations {
    fn default() -> Self {
        Self {
            bitrate_kbps: None,
            max_sync_kbps: None,
            listener_tolerance: 0.05,
            model_tolerance: 0.10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadTest {
    pub url: String,
    pub listeners: usize,
    pub duration: Duration,
    /// Time after connecting before the throughput window opens.
    pub settle: Duration,
    /// `(listener index, time after start)` at which the harness drops a connection.
    pub kill: Vec<(usize, Duration)>,
    /// Keep each listener's de-metadata'd audio in its report.
    pub keep_audio: bool,
    pub expectations: Expectations,
}

impl LoadTest {
    pub fn new(url: impl Into<String>, listeners: usize, duration: Duration) -> Self {
        Self {
            url: url.into(),
            listeners,
            duration,
            settle: Duration::from_secs(2),
            kill: Vec::new(),
            keep_audio: false,
            expectations: Expectations::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum Disconnect {
    /// Stayed connected for the whole run.
    Completed,
    /// Dropped on purpose by the harness.
    Killed,
    ServerClosed,
    Failed(String),
}

#[derive(Debug, Clone, Serialize)]
pub struct TitleSeen {
    pub wire_offset: usize,
    pub audio_offset: usize,
    pub title: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ListenerReport {
    pub index: usize,
    pub header_len: usize,
    pub metaint: Option<usize>,
    /// Everything read from the socket, header included.
    pub bytes_received: usize,
    pub audio_bytes: usize,
    pub metadata_bytes: usize,
    pub frames_recovered: usize,
    pub frame_bytes: usize,
    /// Offset in the audio where frame parsing first failed, if it did.
    pub misaligned_at: Option<usize>,
    pub window_s: f64,
    pub audio_kbps: f64,
    pub wire_kbps: f64,
    /// Metadata overhead over the window.
    pub sync_kbps: f64,
    pub titles: Vec<TitleSeen>,
    pub disconnect: Disconnect,
    #[serde(skip)]
    pub audio: Option<Vec<u8>>,
}

impl ListenerReport {
    fn failed(index: usize, reason: String) -> Self {
        Self {
            index,
            header_len: 0,
            metaint: None,
            bytes_received: 0,
            audio_bytes: 0,
            metadata_bytes: 0,
            frames_recovered: 0,
            frame_bytes: 0,
            misaligned_at: None,
            window_s: 0.0,
            audio_kbps: 0.0,
            wire_kbps: 0.0,
            sync_kbps: 0.0,
            titles: Vec::new(),
            disconnect: Disconnect::Failed(reason),
            audio: None,
        }
    }

    pub fn is_aligned(&self) -> bool {
        self.misaligned_at.is_none()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SwarmReport {
    pub n: usize,
    pub listeners: Vec<ListenerReport>,
    /// Sum of wire throughputs of listeners that stayed connected.
    pub aggregate_kbps: f64,
    pub mean_audio_kbps: f64,
    pub mean_sync_kbps: f64,
    /// n * (A + B) for the listeners that stayed connected.
    pub model_kbps: f64,
    /// (aggregate - model) / model.
    pub residual: f64,
    pub failures: Vec<String>,
}

impl SwarmReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Validates MP3 frame contiguity of a byte stream fed in pieces.
#[derive(Debug, Default)]
pub struct FrameChecker {
    pending: Vec<u8>,
    consumed: usize,
    pub frames: usize,
    pub frame_bytes: usize,
    pub misaligned_at: Option<usize>,
}

impl FrameChecker {
    pub fn push(&mut self, audio: &[u8]) {
        if self.misaligned_at.is_some() {
            return;
        }
        self.pending.extend_from_slice(audio);
        let mut pos = 0;
        while self.pending.len() - pos >= HEADER_LEN {
            let header: [u8; 4] = self.pending[pos..pos + HEADER_LEN].try_into().expect("four bytes");
            match parse_header(header) {
                Ok(h) if self.pending.len() - pos >= h.frame_len_bytes => {
                    pos += h.frame_len_bytes;
                    self.frames += 1;
                    self.frame_bytes += h.frame_len_bytes;
                }
                Ok(_) => break,
                Err(_) => {
                    self.misaligned_at = Some(self.consumed + pos);
                    self.pending.clear();
                    return;
                }
            }
        }
        self.pending.drain(..pos);
        self.consumed += pos;
    }
}

struct Target {
    addr: String,
    host_header: String,
    path: String,
}

fn target(url: &str) -> Result<Target, BenchError> {
    let parsed = Url::parse(url).map_err(|e| BenchError::Url(format!("{url}: {e}")))?;
    if parsed.scheme() != "http" {
        return Err(BenchError::Url(format!("{url}: only http:// is supported")));
    }
    let host = parsed.host_str().ok_or_else(|| BenchError::Url(format!("{url}: no host")))?;
    let port = parsed.port_or_known_default().unwrap_or(80);
    let mut path = parsed.path().to_string();
    if let Some(q) = parsed.query() {
        path.push('?');
        path.push_str(q);
    }
    Ok(Target {
        addr: format!("{host}:{port}"),
        host_header: format!("{host}:{port}"),
        path,
    })
}

async fn read_header(stream: &mut TcpStream, wire: &mut Vec<u8>) -> Result<usize, BenchError> {
    let mut buf = [0u8; 4096];
    loop {
        if let Some(end) = wire.windows(4).position(|w| w == b"\r\n\r\n") {
            return Ok(end + 4);
        }
        if wire.len() > MAX_HEADER_BYTES {
            return Err(BenchError::NotIcy("response header too long".into()));
        }
        let n = stream.read(&mut buf).await?;
        if n == 0 {
            let first = String::from_utf8_lossy(wire).lines().next().unwrap_or_default().to_string();
            return Err(BenchError::NotIcy(first));
        }
        wire.extend_from_slice(&buf[..n]);
    }
}

async fn listen(
    index: usize,
    target: &Target,
    start: Instant,
    config: &LoadTest,
    kill_at: Option<Instant>,
) -> Result<ListenerReport, BenchError> {
    let mut stream = TcpStream::connect(&target.addr).await.map_err(|source| BenchError::Connect {
        addr: target.addr.clone(),
        source,
    })?;
    let request = format!(
        "GET {} HTTP/1.0\r\nHost: {}\r\nUser-Agent: radiobench/{}\r\nIcy-MetaData: 1\r\nAccept: */*\r\n\r\n",
        target.path,
        target.host_header,
        env!("CARGO_PKG_VERSION")
    );
    stream.write_all(request.as_bytes()).await?;

    let mut wire = Vec::new();
    let header_len = read_header(&mut stream, &mut wire).await?;
    let header = String::from_utf8_lossy(&wire[..header_len]).into_owned();
    if !header.starts_with("ICY 200") {
        let first = header.lines().next().unwrap_or_default().to_string();
        return Err(BenchError::NotIcy(first));
    }
    let metaint = parse_metaint(&header);
    let mut demux = metaint.map(IcyDemuxer::new);
    let mut checker = FrameChecker::default();
    let mut kept = config.keep_audio.then(Vec::new);
    let mut audio_total = 0usize;
    let mut received = wire.len();

    let mut feed = |bytes: &[u8], demux: &mut Option<IcyDemuxer>, checker: &mut FrameChecker, audio_total: &mut usize| {
        let mut audio = Vec::with_capacity(bytes.len());
        match demux {
            Some(d) => d.push(bytes, &mut audio),
            None => audio.extend_from_slice(bytes),
        }
        *audio_total += audio.len();
        checker.push(&audio);
        if let Some(k) = kept.as_mut() {
            k.extend_from_slice(&audio);
        }
    };
    feed(&wire[header_len..], &mut demux, &mut checker, &mut audio_total);
    drop(wire);

    let end = start + config.duration;
    let settle_at = Instant::now() + config.settle;
    let stop = kill_at.map_or(end, |k| k.min(end));
    let mut window_open: Option<(Instant, usize, usize)> = None;
    let mut buf = vec![0u8; 64 * 1024];
    let disconnect = loop {
        if window_open.is_none() && Instant::now() >= settle_at {
            window_open = Some((Instant::now(), received, audio_total));
        }
        let wait_until = if window_open.is_none() { settle_at.min(stop) } else { stop };
        match tokio::time::timeout_at(wait_until, stream.read(&mut buf)).await {
            Ok(Ok(0)) => break Disconnect::ServerClosed,
            Ok(Ok(n)) => {
                received += n;
                feed(&buf[..n], &mut demux, &mut checker, &mut audio_total);
            }
            Ok(Err(e)) => break Disconnect::Failed(e.to_string()),
            Err(_) if Instant::now() >= stop => {
                break if kill_at.is_some_and(|k| k < end) {
                    Disconnect::Killed
                } else {
                    Disconnect::Completed
                };
            }
            Err(_) => {}
        }
    };
    let closed_at = Instant::now();
    drop(stream);

    let (window_s, wire_kbps, audio_kbps) = match window_open {
        Some((t0, wire0, audio0)) => {
            let secs = closed_at.duration_since(t0).as_secs_f64();
            if secs > 0.0 {
                let rate = |bytes: usize| bytes as f64 * 8.0 / 1000.0 / secs;
                (secs, rate(received - wire0), rate(audio_total - audio0))
            } else {
                (0.0, 0.0, 0.0)
            }
        }
        None => (0.0, 0.0, 0.0),
    };
    let (metadata_bytes, titles) = match &demux {
        Some(d) => (
            d.metadata_bytes(),
            d.events()
                .iter()
                .filter_map(|e| {
                    e.title.as_ref().map(|t| TitleSeen {
                        wire_offset: header_len + e.wire_offset,
                        audio_offset: e.audio_offset,
                        title: t.clone(),
                    })
                })
                .collect(),
        ),
        None => (0, Vec::new()),
    };

    Ok(ListenerReport {
        index,
        header_len,
        metaint,
        bytes_received: received,
        audio_bytes: audio_total,
        metadata_bytes,
        frames_recovered: checker.frames,
        frame_bytes: checker.frame_bytes,
        misaligned_at: checker.misaligned_at,
        window_s,
        audio_kbps,
        wire_kbps,
        sync_kbps: (wire_kbps - audio_kbps).max(0.0),
        titles,
        disconnect,
        audio: kept,
    })
}

/// Runs the swarm and evaluates the expectations.
pub async fn run_load_test(config: &LoadTest) -> Result<SwarmReport, BenchError> {
    let target = target(&config.url)?;
    if config.listeners == 0 {
        return Ok(evaluate(Vec::new(), &config.expectations));
    }
    let start = Instant::now();
    let target = std::sync::Arc::new(target);
    let config_arc = std::sync::Arc::new(config.clone());
    let mut handles = Vec::with_capacity(config.listeners);
    for index in 0..config.listeners {
        let kill_at = config
            .kill
            .iter()
            .filter(|(i, _)| *i == index)
            .map(|(_, after)| start + *after)
            .min();
        let target = target.clone();
        let config = config_arc.clone();
        handles.push(tokio::spawn(async move {
            listen(index, &target, start, &config, kill_at).await
        }));
    }

    let mut reports = Vec::with_capacity(handles.len());
    let mut connect_errors = Vec::new();
    for (index, handle) in handles.into_iter().enumerate() {
        match handle.await {
            Ok(Ok(report)) => reports.push(report),
            Ok(Err(e)) => {
                reports.push(ListenerReport::failed(index, e.to_string()));
                connect_errors.push(e);
            }
            Err(e) => reports.push(ListenerReport::failed(index, format!("listener task panicked: {e}"))),
        }
    }
    if connect_errors.len() == config.listeners {
        return Err(connect_errors.swap_remove(0));
    }
    Ok(evaluate(reports, &config.expectations))
}

/// Aggregates listener reports and checks them against `expect`.
pub fn evaluate(listeners: Vec<ListenerReport>, expect: &Expectations) -> SwarmReport {
    let mut failures = Vec::new();
    let survivors: Vec<&ListenerReport> = listeners
        .iter()
        .filter(|l| l.disconnect == Disconnect::Completed)
        .collect();

    for l in &listeners {
        if let Disconnect::Failed(reason) = &l.disconnect {
            failures.push(format!("listener {}: {reason}", l.index));
        }
        if l.disconnect == Disconnect::ServerClosed {
            failures.push(format!("listener {}: server closed the stream", l.index));
        }
        if let Some(at) = l.misaligned_at {
            failures.push(format!("listener {}: audio not frame-aligned at byte {at}", l.index));
        }
        if l.frame_bytes > l.bytes_received {
            failures.push(format!("listener {}: more frame bytes than bytes received", l.index));
        }
    }

    let count = survivors.len() as f64;
    let aggregate_kbps: f64 = survivors.iter().map(|l| l.wire_kbps).sum();
    let mean = |f: fn(&ListenerReport) -> f64| {
        if survivors.is_empty() {
            0.0
        } else {
            survivors.iter().map(|l| f(l)).sum::<f64>() / count
        }
    };
    let mean_audio_kbps = mean(|l| l.audio_kbps);
    let mean_sync_kbps = mean(|l| l.sync_kbps);

    if let Some(a) = expect.bitrate_kbps {
        for l in &survivors {
            if (l.audio_kbps - a).abs() > expect.listener_tolerance * a {
                failures.push(format!(
                    "listener {}: {:.2} kbps outside {a} ±{:.0}%",
                    l.index,
                    l.audio_kbps,
                    expect.listener_tolerance * 100.0
                ));
            }
        }
    }
    if let Some(b_max) = expect.max_sync_kbps {
        if mean_sync_kbps > b_max {
            failures.push(format!("metadata overhead {mean_sync_kbps:.3} kbps exceeds {b_max} kbps"));
        }
    }

    let a = expect.bitrate_kbps.unwrap_or(mean_audio_kbps);
    let model_kbps = estimate_bandwidth(survivors.len() as i64, a, mean_sync_kbps).unwrap_or(0.0);
    let residual = if model_kbps > 0.0 {
        (aggregate_kbps - model_kbps) / model_kbps
    } else {
        0.0
    };
    if model_kbps > 0.0 && residual.abs() > expect.model_tolerance {
        failures.push(format!(
            "aggregate {aggregate_kbps:.1} kbps is {:.1}% from the model {model_kbps:.1} kbps",
            residual * 100.0
        ));
    }

    SwarmReport {
        n: listeners.len(),
        listeners,
        aggregate_kbps,
        mean_audio_kbps,
        mean_sync_kbps,
        model_kbps,
        residual,
        failures,
    }
}
