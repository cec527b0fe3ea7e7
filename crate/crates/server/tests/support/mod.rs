#![allow(dead_code)]

use std::path::Path;
use std::time::Duration;

use chrono::Utc;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;
use wavecaster::config::ServerConfig;
use wavecaster::RunningServer;
use wavecaster_core::catalog::{Catalog, Policy, Track, TrackMeta};
use wavecaster_core::mp3frame::{iterate_frames, ChannelMode, SilentStream};

/// 128 kbps joint-stereo silence whose frames are stamped with `(index, tag)`.
pub fn track_bytes(tag: u32, seconds: f64) -> Vec<u8> {
    SilentStream::new(128, 44_100, ChannelMode::JointStereo)
        .unwrap()
        .with_tag(tag)
        .duration(seconds)
}

pub struct Fixture {
    pub title: &'static str,
    pub artist: &'static str,
    pub genre: &'static str,
    pub seconds: f64,
}

pub fn fixture(title: &'static str, artist: &'static str, genre: &'static str, seconds: f64) -> Fixture {
    Fixture {
        title,
        artist,
        genre,
        seconds,
    }
}

/// Writes the fixtures' audio under `dir/media` and registers them, in order.
pub fn seed_library(dir: &Path, fixtures: &[Fixture]) -> Vec<Track> {
    let catalog = Catalog::open(dir, Policy::default()).unwrap();
    let media = dir.join("media");
    std::fs::create_dir_all(&media).unwrap();
    fixtures
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let path = media.join(format!("track{i}.mp3"));
            std::fs::write(&path, track_bytes(i as u32 + 1, f.seconds)).unwrap();
            catalog
                .add_track(
                    TrackMeta {
                        title: f.title.into(),
                        artist: f.artist.into(),
                        album: String::new(),
                        genre: f.genre.into(),
                        language: "en".into(),
                    },
                    &path,
                    Utc::now(),
                )
                .unwrap()
        })
        .collect()
}

pub async fn start(dir: &Path, tweak: impl FnOnce(&mut ServerConfig)) -> RunningServer {
    let mut config = ServerConfig::ephemeral(dir);
    config.seed = Some(7);
    tweak(&mut config);
    wavecaster::start(&config).await.expect("server starts")
}

/// Frames of the given tracks, played in order forever, starting at the frame
/// equal to `first`. Returns `len` bytes.
pub fn cyclic_expectation(tracks: &[Track], first: &[u8], len: usize) -> Option<Vec<u8>> {
    let files: Vec<Vec<u8>> = tracks.iter().map(|t| std::fs::read(&t.path).unwrap()).collect();
    let frames: Vec<&[u8]> = files.iter().flat_map(|f| iterate_frames(f).map(|fr| fr.bytes)).collect();
    let start = frames.iter().position(|f| first.starts_with(f))?;
    let mut out = Vec::with_capacity(len + 512);
    let mut i = start;
    while out.len() < len {
        out.extend_from_slice(frames[i % frames.len()]);
        i += 1;
    }
    out.truncate(len);
    Some(out)
}

/// Opens a raw listener connection and records everything for `duration`.
pub async fn capture(addr: std::net::SocketAddr, metadata: bool, duration: Duration) -> Vec<u8> {
    let mut socket = TcpStream::connect(addr).await.unwrap();
    let mut request = String::from("GET / HTTP/1.0\r\nHost: test\r\nUser-Agent: capture\r\n");
    if metadata {
        request.push_str("Icy-MetaData: 1\r\n");
    }
    request.push_str("\r\n");
    socket.write_all(request.as_bytes()).await.unwrap();
    let mut out = Vec::new();
    let deadline = tokio::time::Instant::now() + duration;
    let mut buf = vec![0u8; 32 * 1024];
    loop {
        match tokio::time::timeout_at(deadline, socket.read(&mut buf)).await {
            Ok(Ok(0)) | Err(_) => break,
            Ok(Ok(n)) => out.extend_from_slice(&buf[..n]),
            Ok(Err(e)) => panic!("capture failed: {e}"),
        }
    }
    out
}

/// Metadata block positions found by walking the capture with the metaint
/// rule alone: `(absolute offset of the length byte, payload)`.
pub fn walk_blocks(capture: &[u8], header_len: usize, metaint: usize) -> (Vec<u8>, Vec<(usize, Vec<u8>)>) {
    let mut audio = Vec::new();
    let mut blocks = Vec::new();
    let mut pos = header_len;
    loop {
        let take = metaint.min(capture.len() - pos);
        audio.extend_from_slice(&capture[pos..pos + take]);
        pos += take;
        if pos >= capture.len() {
            break;
        }
        let len = capture[pos] as usize * 16;
        if pos + 1 + len > capture.len() {
            break;
        }
        blocks.push((pos, capture[pos + 1..pos + 1 + len].to_vec()));
        pos += 1 + len;
    }
    (audio, blocks)
}

/// Whole frames at the front of `audio` (drops a trailing partial frame).
pub fn whole_frames(audio: &[u8]) -> usize {
    let mut end = 0;
    for frame in iterate_frames(audio) {
        if frame.offset != end {
            break;
        }
        end = frame.offset + frame.bytes.len();
    }
    end
}

pub struct Api {
    pub client: reqwest::Client,
    pub base: String,
    pub token: Option<String>,
}

impl Api {
    pub fn new(server: &RunningServer) -> Self {
        Self {
            client: reqwest::Client::new(),
            base: server.api_url(),
            token: None,
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub fn get(&self, path: &str) -> reqwest::RequestBuilder {
        self.auth(self.client.get(self.url(path)))
    }

    pub fn post(&self, path: &str) -> reqwest::RequestBuilder {
        self.auth(self.client.post(self.url(path)))
    }

    pub fn delete(&self, path: &str) -> reqwest::RequestBuilder {
        self.auth(self.client.delete(self.url(path)))
    }

    fn auth(&self, req: reqwest::RequestBuilder) -> reqwest::RequestBuilder {
        match &self.token {
            Some(t) => req.bearer_auth(t),
            None => req,
        }
    }

    /// Registers `login` and keeps its session token.
    pub async fn sign_up(&mut self, login: &str) -> String {
        let body = serde_json::json!({ "login": login, "password": "secret-pass" });
        let r = self.client.post(self.url("/api/register")).json(&body).send().await.unwrap();
        assert_eq!(r.status(), 201);
        let user: serde_json::Value = r.json().await.unwrap();
        let r = self.client.post(self.url("/api/login")).json(&body).send().await.unwrap();
        assert_eq!(r.status(), 200);
        let session: serde_json::Value = r.json().await.unwrap();
        self.token = Some(session["token"].as_str().unwrap().to_string());
        user["user_id"].as_str().unwrap().to_string()
    }
}

/// Polls until `f` holds or the timeout passes.
pub async fn eventually(timeout: Duration, mut f: impl FnMut() -> bool) -> bool {
    let deadline = tokio::time::Instant::now() + timeout;
    while tokio::time::Instant::now() < deadline {
        if f() {
            return true;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    f()
}
