//! MPEG-1 Layer III frame parsing.
//!
//! The server never transcodes, so the file's own framing is the source of
//! truth for bitrate, duration and per-frame timing.

use std::fmt;

use thiserror::Error;

pub const SAMPLES_PER_FRAME: u32 = 1152;
pub const HEADER_LEN: usize = 4;

const BITRATES_KBPS: [u32; 16] = [
    0, 32, 40, 48, 56, 64, 80, 96, 112, 128, 160, 192, 224, 256, 320, 0,
];
const SAMPLE_RATES_HZ: [u32; 3] = [44100, 48000, 32000];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum HeaderError {
    #[error("bad frame sync")]
    BadSync,
    #[error("unsupported MPEG version (only MPEG-1 is accepted)")]
    UnsupportedVersion,
    #[error("unsupported layer (only Layer III is accepted)")]
    UnsupportedLayer,
    #[error("free-format bitrate is not supported")]
    FreeBitrate,
    #[error("reserved bitrate index")]
    ReservedBitrate,
    #[error("reserved sample-rate index")]
    ReservedSampleRate,
}

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("no valid frame found")]
    NoFrames,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelMode {
    Stereo,
    JointStereo,
    Dual,
    Mono,
}

impl ChannelMode {
    fn from_bits(bits: u8) -> Self {
        match bits & 0b11 {
            0 => ChannelMode::Stereo,
            1 => ChannelMode::JointStereo,
            2 => ChannelMode::Dual,
            _ => ChannelMode::Mono,
        }
    }

    fn bits(self) -> u8 {
        match self {
            ChannelMode::Stereo => 0,
            ChannelMode::JointStereo => 1,
            ChannelMode::Dual => 2,
            ChannelMode::Mono => 3,
        }
    }

    /// Side-information size in bytes for MPEG-1.
    pub fn side_info_len(self) -> usize {
        match self {
            ChannelMode::Mono => 17,
            _ => 32,
        }
    }
}

impl fmt::Display for ChannelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ChannelMode::Stereo => "stereo",
            ChannelMode::JointStereo => "joint-stereo",
            ChannelMode::Dual => "dual",
            ChannelMode::Mono => "mono",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub bitrate_kbps: u32,
    pub sample_rate_hz: u32,
    pub padding: bool,
    pub channel_mode: ChannelMode,
    pub protected: bool,
    pub frame_len_bytes: usize,
}

impl FrameHeader {
    pub fn samples_per_frame(&self) -> u32 {
        SAMPLES_PER_FRAME
    }

    pub fn duration_s(&self) -> f64 {
        f64::from(SAMPLES_PER_FRAME) / f64::from(self.sample_rate_hz)
    }
}

/// `floor(144 * bitrate / sample_rate) + padding`.
pub fn frame_len(bitrate_kbps: u32, sample_rate_hz: u32, padding: bool) -> usize {
    (144 * bitrate_kbps as usize * 1000) / sample_rate_hz as usize + usize::from(padding)
}

pub fn parse_header(bytes: [u8; 4]) -> Result<FrameHeader, HeaderError> {
    if bytes[0] != 0xFF || bytes[1] & 0xE0 != 0xE0 {
        return Err(HeaderError::BadSync);
    }
    // 11 = MPEG-1, 10 = MPEG-2, 00 = MPEG-2.5, 01 = reserved
    if (bytes[1] >> 3) & 0b11 != 0b11 {
        return Err(HeaderError::UnsupportedVersion);
    }
    if (bytes[1] >> 1) & 0b11 != 0b01 {
        return Err(HeaderError::UnsupportedLayer);
    }
    let protected = bytes[1] & 1 == 0;

    let bitrate_index = (bytes[2] >> 4) as usize;
    let bitrate_kbps = match bitrate_index {
        0 => return Err(HeaderError::FreeBitrate),
        15 => return Err(HeaderError::ReservedBitrate),
        i => BITRATES_KBPS[i],
    };
    let sample_rate_hz = match (bytes[2] >> 2) & 0b11 {
        3 => return Err(HeaderError::ReservedSampleRate),
        i => SAMPLE_RATES_HZ[i as usize],
    };
    let padding = (bytes[2] >> 1) & 1 == 1;
    let channel_mode = ChannelMode::from_bits(bytes[3] >> 6);

    Ok(FrameHeader {
        bitrate_kbps,
        sample_rate_hz,
        padding,
        channel_mode,
        protected,
        frame_len_bytes: frame_len(bitrate_kbps, sample_rate_hz, padding),
    })
}

/// Encodes a header for an unprotected MPEG-1 Layer III frame.
///
/// Returns `None` when the bitrate or sample rate is not in the MPEG-1 tables.
pub fn encode_header(
    bitrate_kbps: u32,
    sample_rate_hz: u32,
    padding: bool,
    channel_mode: ChannelMode,
) -> Option<[u8; 4]> {
    let br = BITRATES_KBPS[1..15].iter().position(|&b| b == bitrate_kbps)? + 1;
    let sr = SAMPLE_RATES_HZ.iter().position(|&s| s == sample_rate_hz)?;
    Some([
        0xFF,
        0xFB,
        ((br as u8) << 4) | ((sr as u8) << 2) | (u8::from(padding) << 1),
        channel_mode.bits() << 6,
    ])
}

/// Length of a leading ID3v2 tag (header, body and optional footer), or 0.
pub fn id3v2_len(data: &[u8]) -> usize {
    if data.len() < 10 || &data[..3] != b"ID3" {
        return 0;
    }
    let size_bytes = &data[6..10];
    if size_bytes.iter().any(|b| b & 0x80 != 0) {
        return 0;
    }
    let size = size_bytes
        .iter()
        .fold(0usize, |acc, &b| (acc << 7) | usize::from(b));
    let footer = if data[5] & 0x10 != 0 { 10 } else { 0 };
    (10 + size + footer).min(data.len())
}

#[derive(Debug, Clone, Copy)]
pub struct Frame<'a> {
    pub header: FrameHeader,
    pub bytes: &'a [u8],
    /// Byte offset of the frame within the source.
    pub offset: usize,
}

/// Iterates over the MP3 frames of an in-memory byte source.
///
/// A leading ID3v2 block and a trailing ID3v1 `TAG` are skipped. Junk between
/// frames is skipped by scanning forward for the next plausible header; the
/// number of skipped bytes is available through [`FrameIter::skipped_bytes`].
#[derive(Debug, Clone)]
pub struct FrameIter<'a> {
    data: &'a [u8],
    pos: usize,
    skipped: usize,
    last_sample_rate: Option<u32>,
}

impl<'a> FrameIter<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        let pos = id3v2_len(data);
        Self {
            data,
            pos,
            skipped: 0,
            last_sample_rate: None,
        }
    }

    pub fn skipped_bytes(&self) -> usize {
        self.skipped
    }

    fn header_at(&self, pos: usize) -> Option<FrameHeader> {
        let bytes: [u8; 4] = self.data.get(pos..pos + HEADER_LEN)?.try_into().ok()?;
        let header = parse_header(bytes).ok()?;
        (pos + header.frame_len_bytes <= self.data.len()).then_some(header)
    }

    fn is_id3v1_trailer(&self, pos: usize) -> bool {
        self.data.len() - pos == 128 && &self.data[pos..pos + 3] == b"TAG"
    }
}

impl<'a> Iterator for FrameIter<'a> {
    type Item = Frame<'a>;

    fn next(&mut self) -> Option<Frame<'a>> {
        let mut resyncing = false;
        while self.pos < self.data.len() {
            if self.is_id3v1_trailer(self.pos) {
                self.pos = self.data.len();
                return None;
            }
            if let Some(header) = self.header_at(self.pos) {
                let end = self.pos + header.frame_len_bytes;
                // after junk, or on a sample-rate change, demand that the next
                // frame (if any) also lines up
                let consistent = self
                    .last_sample_rate
                    .is_none_or(|sr| sr == header.sample_rate_hz);
                let confirmed = (!resyncing && consistent)
                    || end == self.data.len()
                    || self.is_id3v1_trailer(end)
                    || self.header_at(end).is_some();
                if confirmed {
                    let frame = Frame {
                        header,
                        bytes: &self.data[self.pos..end],
                        offset: self.pos,
                    };
                    self.pos = end;
                    self.last_sample_rate = Some(header.sample_rate_hz);
                    return Some(frame);
                }
            }
            resyncing = true;
            self.pos += 1;
            self.skipped += 1;
        }
        None
    }
}

pub fn iterate_frames(data: &[u8]) -> FrameIter<'_> {
    FrameIter::new(data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamInfo {
    pub frame_count: usize,
    pub total_duration_s: f64,
    pub nominal_bitrate_kbps: u32,
    pub sample_rate_hz: u32,
    pub is_cbr: bool,
    pub audio_bytes: usize,
    pub skipped_bytes: usize,
}

pub fn stream_info(data: &[u8]) -> Result<StreamInfo, StreamError> {
    let mut frames = FrameIter::new(data);
    let first = frames.next().ok_or(StreamError::NoFrames)?;
    let mut info = StreamInfo {
        frame_count: 1,
        total_duration_s: first.header.duration_s(),
        nominal_bitrate_kbps: first.header.bitrate_kbps,
        sample_rate_hz: first.header.sample_rate_hz,
        is_cbr: true,
        audio_bytes: first.bytes.len(),
        skipped_bytes: 0,
    };
    for frame in frames.by_ref() {
        info.frame_count += 1;
        info.total_duration_s += frame.header.duration_s();
        info.audio_bytes += frame.bytes.len();
        if frame.header.bitrate_kbps != info.nominal_bitrate_kbps {
            info.is_cbr = false;
        }
    }
    info.skipped_bytes = frames.skipped_bytes();
    Ok(info)
}

/// Generates decodable MPEG-1 Layer III frames carrying silence.
///
/// Every frame has zeroed side information, so decoders treat the whole main
/// data area as ancillary bytes. The generator stamps a 32-bit frame counter
/// and a stream tag there so every frame of a stream is distinct, which lets
/// byte-level tests locate any frame inside a capture. Padding follows the
/// usual fractional accumulator so the average bitrate is exact.
#[derive(Debug, Clone)]
pub struct SilentStream {
    bitrate_kbps: u32,
    sample_rate_hz: u32,
    channel_mode: ChannelMode,
    tag: u32,
}

impl SilentStream {
    pub fn new(bitrate_kbps: u32, sample_rate_hz: u32, channel_mode: ChannelMode) -> Option<Self> {
        encode_header(bitrate_kbps, sample_rate_hz, false, channel_mode)?;
        Some(Self {
            bitrate_kbps,
            sample_rate_hz,
            channel_mode,
            tag: 0,
        })
    }

    pub fn with_tag(mut self, tag: u32) -> Self {
        self.tag = tag;
        self
    }

    /// Number of frames needed to cover `duration_s` (rounded up).
    pub fn frames_for(&self, duration_s: f64) -> usize {
        let per_frame = f64::from(SAMPLES_PER_FRAME) / f64::from(self.sample_rate_hz);
        (duration_s / per_frame - 1e-9).ceil().max(0.0) as usize
    }

    pub fn frames(&self, count: usize) -> Vec<u8> {
        let numerator = 144 * self.bitrate_kbps as u64 * 1000;
        let sr = u64::from(self.sample_rate_hz);
        let side = self.channel_mode.side_info_len();
        let mut out = Vec::with_capacity(count * (numerator / sr + 1) as usize);
        let mut remainder = 0u64;
        for index in 0..count {
            remainder += numerator % sr;
            let padding = remainder >= sr;
            if padding {
                remainder -= sr;
            }
            let header =
                encode_header(self.bitrate_kbps, self.sample_rate_hz, padding, self.channel_mode)
                    .expect("validated in constructor");
            let len = frame_len(self.bitrate_kbps, self.sample_rate_hz, padding);
            let start = out.len();
            out.extend_from_slice(&header);
            out.resize(start + len, 0);
            let payload = &mut out[start + HEADER_LEN + side..start + len];
            let stamp = [(index as u32).to_be_bytes(), self.tag.to_be_bytes()].concat();
            let n = stamp.len().min(payload.len());
            payload[..n].copy_from_slice(&stamp[..n]);
        }
        out
    }

    pub fn duration(&self, duration_s: f64) -> Vec<u8> {
        self.frames(self.frames_for(duration_s))
    }
}
