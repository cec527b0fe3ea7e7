//! The on-air loop: asks the scheduler what to play, reads the file's frames
//! and publishes them to the ring at their real-time deadlines.

use std::sync::Arc;
use std::time::Duration;

use bytes::Bytes;
use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::Serialize;
use tokio::time::Instant;
use tracing::{info, warn};
use wavecaster_core::catalog::{Catalog, Track};
use wavecaster_core::mp3frame::iterate_frames;
use wavecaster_core::scheduler::{scheduler_step, Action, LibraryView, PlayState, Selection};

use crate::ring::BroadcastRing;

const EMPTY_LIBRARY_POLL: Duration = Duration::from_millis(500);
const HISTORY_LIMIT: usize = 1024;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct NowPlaying {
    pub track_id: String,
    pub title: String,
    pub artist: String,
    pub genre: String,
    /// Title as sent in the stream metadata.
    pub display_title: String,
    pub started: DateTime<Utc>,
    pub program_id: Option<String>,
    pub stream_url: String,
}

/// Timing of the producer, for monitoring and tests.
#[derive(Debug, Clone, Default, Serialize)]
pub struct PacerStats {
    pub frames_published: u64,
    pub audio_seconds: f64,
    /// Worst observed delay between a frame's deadline and its publication.
    pub max_lateness_s: f64,
    /// Delay of the most recent frame.
    pub last_lateness_s: f64,
    pub tracks_started: u64,
}

#[derive(Debug, Clone)]
pub struct StationOptions {
    pub stream_url: String,
    pub selection: Selection,
    pub seed: Option<u64>,
}

#[derive(Debug)]
pub struct Station {
    catalog: Arc<Catalog>,
    ring: Arc<BroadcastRing>,
    options: StationOptions,
    now_playing: RwLock<Option<NowPlaying>>,
    pacer: Mutex<PacerStats>,
    history: Mutex<Vec<(DateTime<Utc>, Action)>>,
}

impl Station {
    pub fn new(catalog: Arc<Catalog>, ring: Arc<BroadcastRing>, options: StationOptions) -> Self {
        Self {
            catalog,
            ring,
            options,
            now_playing: RwLock::new(None),
            pacer: Mutex::new(PacerStats::default()),
            history: Mutex::new(Vec::new()),
        }
    }

    pub fn now_playing(&self) -> Option<NowPlaying> {
        self.now_playing.read().clone()
    }

    pub fn pacer_stats(&self) -> PacerStats {
        self.pacer.lock().clone()
    }

    /// Scheduler decisions taken so far, most recent last.
    pub fn history(&self) -> Vec<(DateTime<Utc>, Action)> {
        self.history.lock().clone()
    }

    pub fn ring(&self) -> &Arc<BroadcastRing> {
        &self.ring
    }

    /// Runs forever; spawn it as a task.
    pub async fn run(self: Arc<Self>) {
        let mut rng = match self.options.seed {
            Some(seed) => StdRng::seed_from_u64(seed),
            None => StdRng::from_os_rng(),
        };
        let mut state = PlayState::new(self.catalog.playlist()).with_selection(self.options.selection);
        let mut current_program: Option<String> = None;
        let mut deadline: Option<Instant> = None;
        let mut failures = 0usize;

        loop {
            if let Some(d) = deadline {
                tokio::time::sleep_until(d).await;
            }
            let now = Utc::now();
            state.base_playlist = self.catalog.playlist();
            state.sync_programs(&self.catalog.programs());
            // the previous file has been fully published: this is a boundary
            state.current_ends = None;
            let library = LibraryView::from_catalog(&self.catalog, now);
            let action = match scheduler_step(&mut state, now, &library, &mut rng) {
                Ok(a) => a,
                Err(e) => {
                    warn!(error = %e, "scheduler failed");
                    Action::Idle
                }
            };
            {
                let mut history = self.history.lock();
                if history.len() >= HISTORY_LIMIT {
                    history.drain(..HISTORY_LIMIT / 2);
                }
                history.push((now, action.clone()));
            }

            let track_id = match action {
                Action::Idle => {
                    deadline = None;
                    tokio::time::sleep(EMPTY_LIBRARY_POLL).await;
                    continue;
                }
                Action::FinishProgram(id) => {
                    if let Err(e) = self.catalog.mark_program_done(&id, now) {
                        warn!(program = %id, error = %e, "could not mark program done");
                    }
                    info!(program = %id, "program finished, back to shuffle");
                    current_program = None;
                    continue;
                }
                Action::StartProgram { program, track } => {
                    if let Err(e) = self.catalog.mark_program_playing(&program, now) {
                        warn!(program = %program, error = %e, "could not mark program playing");
                    }
                    info!(program = %program, "program started");
                    current_program = Some(program);
                    track
                }
                Action::StartTrack(track) => track,
            };

            let Some(track) = self.catalog.track(&track_id) else {
                warn!(track = %track_id, "scheduled track vanished from the catalog");
                failures += 1;
                self.back_off(&mut deadline, failures).await;
                continue;
            };
            match self.play(&track, current_program.clone(), deadline).await {
                Some(next) => {
                    deadline = Some(next);
                    failures = 0;
                }
                None => {
                    failures += 1;
                    self.back_off(&mut deadline, failures).await;
                }
            }
        }
    }

    async fn back_off(&self, deadline: &mut Option<Instant>, failures: usize) {
        // a library full of broken files must not spin the loop
        if failures >= self.catalog.playlist().len().max(1) {
            tokio::time::sleep(EMPTY_LIBRARY_POLL).await;
            *deadline = None;
        }
    }

    /// Publishes every frame of `track` on schedule; returns the deadline of
    /// the frame that would follow, or `None` if the file was unusable.
    async fn play(&self, track: &Track, program: Option<String>, start: Option<Instant>) -> Option<Instant> {
        let data = match tokio::fs::read(&track.path).await {
            Ok(d) => Bytes::from(d),
            Err(e) => {
                warn!(track = %track.id, path = %track.path.display(), error = %e, "cannot read track");
                return None;
            }
        };
        let frames: Vec<(usize, usize, f64)> = iterate_frames(&data)
            .map(|f| (f.offset, f.bytes.len(), f.header.duration_s()))
            .collect();
        if frames.is_empty() {
            warn!(track = %track.id, "track has no playable frames");
            return None;
        }

        let title: Arc<str> = Arc::from(track.display_title());
        *self.now_playing.write() = Some(NowPlaying {
            track_id: track.id.clone(),
            title: track.title.clone(),
            artist: track.artist.clone(),
            genre: track.genre.clone(),
            display_title: title.to_string(),
            started: Utc::now(),
            program_id: program,
            stream_url: self.options.stream_url.clone(),
        });
        self.pacer.lock().tracks_started += 1;
        info!(track = %track.id, title = %title, frames = frames.len(), "on air");

        let t0 = start.unwrap_or_else(Instant::now);
        let mut elapsed = 0.0f64;
        for (offset, len, duration) in frames {
            let due = t0 + Duration::from_secs_f64(elapsed);
            tokio::time::sleep_until(due).await;
            let lateness = Instant::now().saturating_duration_since(due).as_secs_f64();
            self.ring.publish(data.slice(offset..offset + len), duration, title.clone());
            elapsed += duration;
            let mut stats = self.pacer.lock();
            stats.frames_published += 1;
            stats.audio_seconds += duration;
            stats.last_lateness_s = lateness;
            stats.max_lateness_s = stats.max_lateness_s.max(lateness);
        }
        Some(t0 + Duration::from_secs_f64(elapsed))
    }
}
