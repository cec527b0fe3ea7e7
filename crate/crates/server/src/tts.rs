//! Text-to-speech adapters selected by the `--tts-adapter` option.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use wavecaster_core::scheduler::{CommandSynthesizer, StubSynthesizer, SynthError, Synthesizer};

/// POSTs `{"text", "voice"}` as JSON. The endpoint answers either with
/// `{"path": "..."}` naming a file it wrote, or with the MP3 bytes themselves
/// (`Content-Type: audio/mpeg`).
#[derive(Debug, Clone)]
pub struct HttpSynthesizer {
    pub endpoint: String,
    pub timeout: Duration,
}

#[derive(Serialize)]
struct SynthRequest<'a> {
    text: &'a str,
    voice: &'a str,
}

#[derive(Deserialize)]
struct SynthResponse {
    path: PathBuf,
}

impl Synthesizer for HttpSynthesizer {
    fn synthesize(&self, text: &str, voice: &str, out_dir: &Path) -> Result<PathBuf, SynthError> {
        let failed = |e: reqwest::Error| SynthError::Failed(format!("{}: {e}", self.endpoint));
        let client = reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(failed)?;
        let response = client
            .post(&self.endpoint)
            .json(&SynthRequest { text, voice })
            .send()
            .map_err(failed)?;
        let status = response.status();
        if !status.is_success() {
            return Err(SynthError::Failed(format!("{} answered {status}", self.endpoint)));
        }
        let is_audio = response
            .headers()
            .get(reqwest::header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .is_some_and(|v| v.starts_with("audio/"));
        if is_audio {
            let bytes = response.bytes().map_err(failed)?;
            std::fs::create_dir_all(out_dir)?;
            let path = out_dir.join(format!("announce_{}.mp3", chrono::Utc::now().timestamp_millis()));
            std::fs::write(&path, &bytes)?;
            return Ok(path);
        }
        let body: SynthResponse = response.json().map_err(failed)?;
        Ok(if body.path.is_absolute() {
            body.path
        } else {
            out_dir.join(body.path)
        })
    }
}

/// `stub`, an `http(s)://` endpoint, or a command line (program and fixed
/// leading arguments, whitespace separated).
pub fn adapter_from_spec(spec: &str) -> Arc<dyn Synthesizer> {
    let spec = spec.trim();
    if spec.is_empty() || spec == "stub" {
        return Arc::new(StubSynthesizer);
    }
    if spec.starts_with("http://") || spec.starts_with("https://") {
        return Arc::new(HttpSynthesizer {
            endpoint: spec.to_string(),
            timeout: Duration::from_secs(60),
        });
    }
    let mut words = spec.split_whitespace().map(String::from);
    let program = words.next().unwrap_or_default();
    Arc::new(CommandSynthesizer {
        program,
        args: words.collect(),
    })
}
