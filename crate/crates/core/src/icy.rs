//! ICY (SHOUTcast v1) wire protocol: handshake, in-band metadata framing,
//! real-time pacing arithmetic and the unicast bandwidth model.

use std::fmt::Write as _;

use thiserror::Error;

pub const DEFAULT_METAINT: usize = 8192;
pub const DEFAULT_STREAM_PORT: u16 = 8000;
pub const DEFAULT_API_PORT: u16 = 8089;

/// Largest metadata block a single length byte can describe.
const MAX_META_BLOCKS: usize = 255;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HandshakeError {
    #[error("request carries no HTTP version token")]
    Malformed,
    #[error("only GET is supported")]
    NotGet,
}

impl HandshakeError {
    /// Bytes to send before closing, if any.
    pub fn response(&self) -> Option<&'static [u8]> {
        match self {
            HandshakeError::Malformed => None,
            HandshakeError::NotGet => {
                Some(b"HTTP/1.0 405 Method Not Allowed\r\nAllow: GET\r\nConnection: close\r\n\r\n")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StationInfo {
    pub name: String,
    pub genre: String,
    pub bitrate_kbps: u32,
    pub metaint: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Handshake {
    pub header: Vec<u8>,
    pub wants_metadata: bool,
    pub path: String,
}

/// Parses a listener request and builds the ICY response header.
pub fn build_icy_response(station: &StationInfo, request: &str) -> Result<Handshake, HandshakeError> {
    let request_line = request.lines().next().unwrap_or_default();
    if request.get(1..).and_then(|rest| rest.find("HTTP")).is_none() {
        return Err(HandshakeError::Malformed);
    }
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or_default();
    let path = parts.next().unwrap_or("/").to_string();
    if !method.eq_ignore_ascii_case("GET") {
        return Err(HandshakeError::NotGet);
    }

    let wants_metadata = request.lines().skip(1).any(|line| {
        line.split_once(':').is_some_and(|(name, value)| {
            name.trim().eq_ignore_ascii_case("icy-metadata") && value.trim() == "1"
        })
    });

    let mut header = String::with_capacity(256);
    header.push_str("ICY 200 OK\r\n");
    let _ = write!(header, "icy-name: {}\r\n", header_value(&station.name));
    let _ = write!(header, "icy-genre: {}\r\n", header_value(&station.genre));
    let _ = write!(header, "icy-br: {}\r\n", station.bitrate_kbps);
    header.push_str("icy-pub: 0\r\n");
    header.push_str("content-type: audio/mpeg\r\n");
    if wants_metadata {
        let _ = write!(header, "icy-metaint: {}\r\n", station.metaint);
    }
    header.push_str("\r\n");

    Ok(Handshake {
        header: header.into_bytes(),
        wants_metadata,
        path,
    })
}

fn header_value(value: &str) -> String {
    value.chars().filter(|c| *c != '\r' && *c != '\n').collect()
}

/// Encodes one metadata block: a length byte `k` followed by `16 * k` bytes.
pub fn metadata_block(title: &str) -> Vec<u8> {
    let mut clean: String = title.chars().filter(|&c| c != '\'').collect();
    let max_title = MAX_META_BLOCKS * 16 - "StreamTitle='';".len();
    if clean.len() > max_title {
        let mut cut = max_title;
        while !clean.is_char_boundary(cut) {
            cut -= 1;
        }
        clean.truncate(cut);
    }
    let payload = format!("StreamTitle='{clean}';").into_bytes();
    let blocks = payload.len().div_ceil(16);
    let mut block = Vec::with_capacity(1 + blocks * 16);
    block.push(blocks as u8);
    block.extend_from_slice(&payload);
    block.resize(1 + blocks * 16, 0);
    block
}

/// Per-listener metadata interleaver.
///
/// Between writes, `0 <= bytes_since_meta < metaint` always holds.
#[derive(Debug, Clone)]
pub struct MetadataWriter {
    metaint: usize,
    bytes_since_meta: usize,
    last_sent_title: Option<String>,
}

impl MetadataWriter {
    pub fn new(metaint: usize) -> Self {
        assert!(metaint > 0, "metaint must be positive");
        Self {
            metaint,
            bytes_since_meta: 0,
            last_sent_title: None,
        }
    }

    pub fn bytes_since_meta(&self) -> usize {
        self.bytes_since_meta
    }

    pub fn last_sent_title(&self) -> Option<&str> {
        self.last_sent_title.as_deref()
    }

    /// Appends `audio` to `out`, inserting a metadata block after every
    /// `metaint` audio bytes. An unchanged title is encoded as a single zero.
    pub fn wrap(&mut self, audio: &[u8], title: &str, out: &mut Vec<u8>) {
        let mut rest = audio;
        while !rest.is_empty() {
            let room = self.metaint - self.bytes_since_meta;
            let take = room.min(rest.len());
            out.extend_from_slice(&rest[..take]);
            rest = &rest[take..];
            self.bytes_since_meta += take;
            if self.bytes_since_meta == self.metaint {
                if self.last_sent_title.as_deref() == Some(title) {
                    out.push(0);
                } else {
                    out.extend_from_slice(&metadata_block(title));
                    self.last_sent_title = Some(title.to_string());
                }
                self.bytes_since_meta = 0;
            }
        }
    }
}

pub fn wrap_with_metadata(audio: &[u8], writer: &mut MetadataWriter, title: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(audio.len() + audio.len() / writer.metaint + 64);
    writer.wrap(audio, title, &mut out);
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetadataEvent {
    /// Offset of the block's length byte within the de-headered wire stream.
    pub wire_offset: usize,
    /// Audio bytes delivered before this block.
    pub audio_offset: usize,
    pub block_len: usize,
    pub title: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DemuxState {
    Audio { remaining: usize },
    Length,
    Payload { remaining: usize },
}

/// Incremental inverse of [`MetadataWriter`]: splits a wire stream (after the
/// response header) back into audio bytes and metadata events.
#[derive(Debug, Clone)]
pub struct IcyDemuxer {
    metaint: usize,
    state: DemuxState,
    wire_pos: usize,
    audio_pos: usize,
    pending: Vec<u8>,
    pending_offset: usize,
    events: Vec<MetadataEvent>,
    metadata_bytes: usize,
}

impl IcyDemuxer {
    pub fn new(metaint: usize) -> Self {
        Self {
            metaint,
            state: DemuxState::Audio { remaining: metaint },
            wire_pos: 0,
            audio_pos: 0,
            pending: Vec::new(),
            pending_offset: 0,
            events: Vec::new(),
            metadata_bytes: 0,
        }
    }

    /// Feeds wire bytes; audio bytes are appended to `audio`.
    pub fn push(&mut self, mut wire: &[u8], audio: &mut Vec<u8>) {
        while !wire.is_empty() {
            match self.state {
                DemuxState::Audio { remaining } => {
                    let take = remaining.min(wire.len());
                    audio.extend_from_slice(&wire[..take]);
                    wire = &wire[take..];
                    self.wire_pos += take;
                    self.audio_pos += take;
                    self.state = if take == remaining {
                        DemuxState::Length
                    } else {
                        DemuxState::Audio {
                            remaining: remaining - take,
                        }
                    };
                }
                DemuxState::Length => {
                    let blocks = usize::from(wire[0]);
                    self.pending_offset = self.wire_pos;
                    self.pending.clear();
                    wire = &wire[1..];
                    self.wire_pos += 1;
                    self.metadata_bytes += 1;
                    if blocks == 0 {
                        self.finish_block();
                    } else {
                        self.state = DemuxState::Payload {
                            remaining: blocks * 16,
                        };
                    }
                }
                DemuxState::Payload { remaining } => {
                    let take = remaining.min(wire.len());
                    self.pending.extend_from_slice(&wire[..take]);
                    wire = &wire[take..];
                    self.wire_pos += take;
                    self.metadata_bytes += take;
                    if take == remaining {
                        self.finish_block();
                    } else {
                        self.state = DemuxState::Payload {
                            remaining: remaining - take,
                        };
                    }
                }
            }
        }
    }

    fn finish_block(&mut self) {
        let title = if self.pending.is_empty() {
            None
        } else {
            parse_stream_title(&self.pending)
        };
        self.events.push(MetadataEvent {
            wire_offset: self.pending_offset,
            audio_offset: self.audio_pos,
            block_len: 1 + self.pending.len(),
            title,
        });
        self.state = DemuxState::Audio {
            remaining: self.metaint,
        };
    }

    pub fn events(&self) -> &[MetadataEvent] {
        &self.events
    }

    pub fn audio_bytes(&self) -> usize {
        self.audio_pos
    }

    pub fn metadata_bytes(&self) -> usize {
        self.metadata_bytes
    }

    pub fn wire_bytes(&self) -> usize {
        self.wire_pos
    }
}

/// Extracts the `StreamTitle` value from a zero-padded metadata payload.
pub fn parse_stream_title(payload: &[u8]) -> Option<String> {
    let end = payload
        .iter()
        .position(|&b| b == 0)
        .unwrap_or(payload.len());
    let text = String::from_utf8_lossy(&payload[..end]);
    let start = text.find("StreamTitle='")? + "StreamTitle='".len();
    let rest = &text[start..];
    let stop = rest.find("';")?;
    Some(rest[..stop].to_string())
}

/// Splits a complete capture into its response header, audio bytes and
/// metadata events. Returns `None` if no header terminator is present.
pub fn split_capture(capture: &[u8], metaint: Option<usize>) -> Option<(usize, Vec<u8>, Vec<MetadataEvent>)> {
    let header_len = capture.windows(4).position(|w| w == b"\r\n\r\n")? + 4;
    let body = &capture[header_len..];
    match metaint {
        None => Some((header_len, body.to_vec(), Vec::new())),
        Some(metaint) => {
            let mut demux = IcyDemuxer::new(metaint);
            let mut audio = Vec::with_capacity(body.len());
            demux.push(body, &mut audio);
            Some((header_len, audio, demux.events))
        }
    }
}

/// Reads `icy-metaint` from a response header, if present.
pub fn parse_metaint(header: &str) -> Option<usize> {
    header.lines().find_map(|line| {
        let (name, value) = line.split_once(':')?;
        name.trim()
            .eq_ignore_ascii_case("icy-metaint")
            .then(|| value.trim().parse().ok())
            .flatten()
    })
}

/// Send deadlines, as offsets from the stream start, for frames of the given
/// durations: `deadline(k) = sum of durations of frames before k`.
pub fn pace_schedule<I>(durations: I) -> Vec<f64>
where
    I: IntoIterator<Item = f64>,
{
    let mut elapsed = 0.0;
    durations
        .into_iter()
        .map(|d| {
            let deadline = elapsed;
            elapsed += d;
            deadline
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("bandwidth model inputs must be non-negative")]
    Negative,
    #[error("per-listener rate must be positive")]
    ZeroRate,
}

/// `T = n * (A + B)` in kbps.
pub fn estimate_bandwidth(listeners: i64, stream_kbps: f64, sync_kbps: f64) -> Result<f64, ModelError> {
    if listeners < 0 || stream_kbps < 0.0 || sync_kbps < 0.0 {
        return Err(ModelError::Negative);
    }
    Ok(listeners as f64 * (stream_kbps + sync_kbps))
}

/// Listeners an uplink can sustain: `floor(uplink / (A + B))`.
pub fn capacity(uplink_kbps: f64, stream_kbps: f64, sync_kbps: f64) -> Result<u64, ModelError> {
    if uplink_kbps < 0.0 || stream_kbps < 0.0 || sync_kbps < 0.0 {
        return Err(ModelError::Negative);
    }
    let per_listener = stream_kbps + sync_kbps;
    if per_listener <= 0.0 {
        return Err(ModelError::ZeroRate);
    }
    Ok((uplink_kbps / per_listener).floor() as u64)
}
