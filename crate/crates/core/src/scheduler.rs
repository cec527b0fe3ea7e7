//! Decides what plays next.
//!
//! Outside programs the station runs a popularity-weighted shuffle over the
//! base playlist. Queued programs start at the first track boundary at or
//! after their requested time, then play their items in order without
//! interruption. Announcements are synthesized to MP3 and ingested as
//! ordinary tracks.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use chrono::{DateTime, Duration, Utc};
use rand::Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::catalog::{self, Catalog, CatalogError, ProgramState, ScheduledProgram, Track, TrackMeta};
use crate::mp3frame::{ChannelMode, SilentStream, StreamInfo};

pub const ANNOUNCEMENT_GENRE: &str = "announcement";

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("the library is empty")]
    EmptyLibrary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Shuffle,
    Program,
}

/// How tracks are picked outside programs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Selection {
    #[default]
    Weighted,
    /// Walks the base playlist in order, wrapping to the start.
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveProgram {
    pub id: String,
    pub items: Vec<String>,
    /// Index of the next item to start.
    pub cursor: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlayState {
    pub mode: Mode,
    pub selection: Selection,
    pub current_track: Option<String>,
    pub current_started: Option<DateTime<Utc>>,
    pub current_ends: Option<DateTime<Utc>>,
    /// Pending programs ordered by (requested_start, seq).
    pub program_queue: Vec<ScheduledProgram>,
    pub active: Option<ActiveProgram>,
    pub base_playlist: Vec<String>,
    pub base_index: usize,
}

impl PlayState {
    pub fn new(base_playlist: Vec<String>) -> Self {
        Self {
            mode: Mode::Shuffle,
            selection: Selection::Weighted,
            current_track: None,
            current_started: None,
            current_ends: None,
            program_queue: Vec::new(),
            active: None,
            base_playlist,
            base_index: 0,
        }
    }

    pub fn with_selection(mut self, selection: Selection) -> Self {
        self.selection = selection;
        self
    }

    /// Replaces the queue with the pending programs among `programs`.
    pub fn sync_programs(&mut self, programs: &[ScheduledProgram]) {
        let active = self.active.as_ref().map(|a| a.id.as_str());
        let mut queue: Vec<ScheduledProgram> = programs
            .iter()
            .filter(|p| p.state == ProgramState::Pending && Some(p.id.as_str()) != active)
            .cloned()
            .collect();
        queue.sort_by(|a, b| a.requested_start.cmp(&b.requested_start).then(a.seq.cmp(&b.seq)));
        self.program_queue = queue;
    }

    pub fn enqueue(&mut self, program: ScheduledProgram) {
        let at = self
            .program_queue
            .partition_point(|p| (p.requested_start, p.seq) <= (program.requested_start, program.seq));
        self.program_queue.insert(at, program);
    }

    pub fn cancel(&mut self, id: &str) -> bool {
        let before = self.program_queue.len();
        self.program_queue.retain(|p| p.id != id);
        before != self.program_queue.len()
    }

    pub fn is_mid_track(&self, now: DateTime<Utc>) -> bool {
        matches!(self.current_ends, Some(end) if end > now)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    StartTrack(String),
    StartProgram { program: String, track: String },
    FinishProgram(String),
    Idle,
}

/// What the scheduler knows about the library at a step.
#[derive(Debug, Clone, Default)]
pub struct LibraryView {
    pub durations: HashMap<String, f64>,
    pub likes: HashMap<String, usize>,
}

impl LibraryView {
    pub fn from_catalog(catalog: &Catalog, now: DateTime<Utc>) -> Self {
        Self {
            durations: catalog.tracks().into_iter().map(|t| (t.id, t.duration_s)).collect(),
            likes: catalog.like_counts(now),
        }
    }

    fn duration(&self, id: &str) -> Duration {
        let secs = self.durations.get(id).copied().unwrap_or(0.0);
        Duration::microseconds((secs * 1e6).round() as i64)
    }
}

/// Draws a track from `playlist` with weight `1 + likes`, skipping `previous`
/// whenever another track is available.
pub fn next_item<R: Rng + ?Sized>(
    playlist: &[String],
    previous: Option<&str>,
    likes: &HashMap<String, usize>,
    rng: &mut R,
) -> Result<String, ScheduleError> {
    if playlist.is_empty() {
        return Err(ScheduleError::EmptyLibrary);
    }
    let has_alternative = previous.is_some_and(|prev| playlist.iter().any(|t| t != prev));
    let candidates: Vec<&String> = playlist
        .iter()
        .filter(|t| !(has_alternative && Some(t.as_str()) == previous))
        .collect();
    let weights: Vec<u64> = candidates
        .iter()
        .map(|t| 1 + likes.get(t.as_str()).copied().unwrap_or(0) as u64)
        .collect();
    let total: u64 = weights.iter().sum();
    let mut ticket = rng.random_range(0..total);
    for (track, w) in candidates.iter().zip(&weights) {
        if ticket < *w {
            return Ok((*track).clone());
        }
        ticket -= w;
    }
    unreachable!("ticket below total weight")
}

fn next_sequential(state: &mut PlayState) -> Result<String, ScheduleError> {
    if state.base_playlist.is_empty() {
        return Err(ScheduleError::EmptyLibrary);
    }
    if state.base_index >= state.base_playlist.len() {
        state.base_index = 0;
    }
    let id = state.base_playlist[state.base_index].clone();
    state.base_index += 1;
    if state.base_index >= state.base_playlist.len() {
        state.base_index = 0;
    }
    Ok(id)
}

/// Advances the station by at most one decision.
///
/// While a track is playing this is `Idle`. At a boundary, a running program
/// continues with its next item or finishes; otherwise the earliest due
/// program starts, and failing that a track is drawn from the base playlist.
/// After `FinishProgram` the boundary is still open and the caller steps
/// again.
pub fn scheduler_step<R: Rng + ?Sized>(
    state: &mut PlayState,
    now: DateTime<Utc>,
    library: &LibraryView,
    rng: &mut R,
) -> Result<Action, ScheduleError> {
    if state.is_mid_track(now) {
        return Ok(Action::Idle);
    }

    if let Some(active) = state.active.as_mut() {
        if active.cursor < active.items.len() {
            let track = active.items[active.cursor].clone();
            active.cursor += 1;
            begin(state, &track, now, library);
            return Ok(Action::StartTrack(track));
        }
        let id = active.id.clone();
        state.active = None;
        state.mode = Mode::Shuffle;
        state.current_track = None;
        state.current_started = None;
        state.current_ends = None;
        return Ok(Action::FinishProgram(id));
    }

    if state.program_queue.first().is_some_and(|p| p.requested_start <= now) {
        let program = state.program_queue.remove(0);
        let track = program.items[0].clone();
        state.active = Some(ActiveProgram {
            id: program.id.clone(),
            items: program.items,
            cursor: 1,
        });
        state.mode = Mode::Program;
        begin(state, &track, now, library);
        return Ok(Action::StartProgram {
            program: program.id,
            track,
        });
    }

    if state.base_playlist.is_empty() {
        return Ok(Action::Idle);
    }
    let track = match state.selection {
        Selection::Weighted => next_item(
            &state.base_playlist,
            state.current_track.as_deref(),
            &library.likes,
            rng,
        )?,
        Selection::Sequential => next_sequential(state)?,
    };
    begin(state, &track, now, library);
    Ok(Action::StartTrack(track))
}

fn begin(state: &mut PlayState, track: &str, now: DateTime<Utc>, library: &LibraryView) {
    state.current_track = Some(track.to_string());
    state.current_started = Some(now);
    state.current_ends = Some(now + library.duration(track));
}

// ---- announcements ----

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("announcement text is empty")]
    EmptyText,
    #[error("synthesizer failed: {0}")]
    Failed(String),
    #[error("synthesizer i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum AnnounceError {
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("synthesizer output is not usable MP3: {0}")]
    InvalidOutput(#[source] CatalogError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
}

/// Text-to-speech backend producing an MP3 file.
pub trait Synthesizer: Send + Sync {
    fn synthesize(&self, text: &str, voice: &str, out_dir: &Path) -> Result<PathBuf, SynthError>;
}

/// Deterministic stand-in: silent 64 kbps mono MP3 whose length grows with
/// the text, named after a digest of `(voice, text)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubSynthesizer;

impl StubSynthesizer {
    pub const SECONDS_PER_CHAR: f64 = 0.08;

    pub fn duration_for(text: &str) -> f64 {
        (text.chars().count() as f64 * Self::SECONDS_PER_CHAR).max(1.0)
    }
}

impl Synthesizer for StubSynthesizer {
    fn synthesize(&self, text: &str, voice: &str, out_dir: &Path) -> Result<PathBuf, SynthError> {
        let digest = Sha256::new()
            .chain_update(voice.as_bytes())
            .chain_update([0])
            .chain_update(text.as_bytes())
            .finalize();
        std::fs::create_dir_all(out_dir)?;
        let path = out_dir.join(format!("announce_{}.mp3", hex::encode(&digest[..6])));
        let stream = SilentStream::new(64, 44100, ChannelMode::Mono).expect("valid stub format");
        std::fs::write(&path, stream.duration(Self::duration_for(text)))?;
        Ok(path)
    }
}

/// Runs `program <text> <voice>` with the output directory as working
/// directory; the last non-empty stdout line is the produced file.
#[derive(Debug, Clone)]
pub struct CommandSynthesizer {
    pub program: String,
    pub args: Vec<String>,
}

impl CommandSynthesizer {
    pub fn new(program: impl Into<String>) -> Self {
        Self {
            program: program.into(),
            args: Vec::new(),
        }
    }
}

impl Synthesizer for CommandSynthesizer {
    fn synthesize(&self, text: &str, voice: &str, out_dir: &Path) -> Result<PathBuf, SynthError> {
        std::fs::create_dir_all(out_dir)?;
        let output = Command::new(&self.program)
            .args(&self.args)
            .arg(text)
            .arg(voice)
            .current_dir(out_dir)
            .output()?;
        if !output.status.success() {
            return Err(SynthError::Failed(format!(
                "{} exited with {}: {}",
                self.program,
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        let stdout = String::from_utf8_lossy(&output.stdout);
        let line = stdout
            .lines()
            .map(str::trim)
            .rfind(|l| !l.is_empty())
            .ok_or_else(|| SynthError::Failed(format!("{} printed no path", self.program)))?;
        let path = PathBuf::from(line);
        Ok(if path.is_absolute() { path } else { out_dir.join(path) })
    }
}

/// A synthesized announcement that has been checked but not yet ingested.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnouncementPreview {
    pub text: String,
    pub voice: String,
    pub path: PathBuf,
    pub info: StreamInfo,
}

/// First phase: synthesize and validate, leaving the library untouched.
pub fn preview_announcement(
    text: &str,
    voice: &str,
    synth: &dyn Synthesizer,
    out_dir: &Path,
) -> Result<AnnouncementPreview, AnnounceError> {
    let text = text.trim();
    if text.is_empty() {
        return Err(SynthError::EmptyText.into());
    }
    let path = synth.synthesize(text, voice, out_dir)?;
    let info = catalog::probe_file(&path).map_err(AnnounceError::InvalidOutput)?;
    Ok(AnnouncementPreview {
        text: text.to_string(),
        voice: voice.to_string(),
        path,
        info,
    })
}

/// Second phase: ingest the previewed file as an announcement track.
pub fn commit_announcement(
    catalog: &Catalog,
    preview: &AnnouncementPreview,
    now: DateTime<Utc>,
) -> Result<Track, AnnounceError> {
    let title: String = preview.text.chars().take(60).collect();
    let meta = TrackMeta {
        title,
        artist: String::new(),
        album: String::new(),
        genre: ANNOUNCEMENT_GENRE.to_string(),
        language: preview.voice.clone(),
    };
    catalog.add_track(meta, &preview.path, now).map_err(|e| match e {
        CatalogError::NoValidFrame(_) => AnnounceError::InvalidOutput(e),
        other => AnnounceError::Catalog(other),
    })
}

pub fn make_announcement(
    catalog: &Catalog,
    text: &str,
    voice: &str,
    synth: &dyn Synthesizer,
    now: DateTime<Utc>,
) -> Result<Track, AnnounceError> {
    let dir = catalog.dir().join("announcements");
    let preview = preview_announcement(text, voice, synth, &dir)?;
    commit_announcement(catalog, &preview, now)
}
