//! Persistent store for tracks, ads, users, likes and programs.
//!
//! The store lives in a library directory as five JSON documents
//! (`songs`, `playlist`, `user_likes`, `ads`, `programs`). Every mutation is
//! applied to a copy of the in-memory state, written to disk, and only then
//! committed, so a failed operation leaves both memory and disk unchanged.

mod auth;
mod model;
mod persist;

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, Utc};
use parking_lot::{Mutex, RwLock};
use thiserror::Error;

use crate::mp3frame::{self, StreamInfo};

pub use model::{
    Ad, Like, NewAd, NewProgram, ProgramState, ScheduledProgram, Track, TrackMeta, UserAccount,
};
pub use persist::{CatalogData, Doc};

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed document {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("csv export failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("no valid frame in {0}")]
    NoValidFrame(PathBuf),
    #[error("unknown user {0}")]
    UnknownUser(String),
    #[error("unknown track {0}")]
    UnknownTrack(String),
    #[error("unknown ad {0}")]
    UnknownAd(String),
    #[error("unknown program {0}")]
    UnknownProgram(String),
    #[error("login {0} is already registered")]
    DuplicateLogin(String),
    #[error("login must not be empty")]
    EmptyLogin,
    #[error("wrong credentials")]
    WrongSecret,
    #[error("session token is invalid")]
    InvalidToken,
    #[error("session token has expired")]
    ExpiredToken,
    #[error("a program needs at least one item")]
    EmptyProgram,
    #[error("requested start {0} is in the past")]
    StartInPast(DateTime<Utc>),
    #[error("program {id} is {state:?}, expected {expected:?}")]
    InvalidTransition {
        id: String,
        state: ProgramState,
        expected: ProgramState,
    },
    #[error("field {0} must not be empty")]
    EmptyField(&'static str),
}

pub type Result<T, E = CatalogError> = std::result::Result<T, E>;

/// Expiry windows for likes and sessions.
#[derive(Debug, Clone, Copy)]
pub struct Policy {
    pub like_lifetime: Duration,
    pub like_cooldown: Duration,
    pub session_idle: Duration,
}

impl Default for Policy {
    fn default() -> Self {
        Self {
            like_lifetime: Duration::days(30),
            like_cooldown: Duration::hours(24),
            session_idle: Duration::hours(24),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub token: String,
    pub user_id: String,
    pub issued: DateTime<Utc>,
    pub last_activity: DateTime<Utc>,
}

/// Shared handle to the library. Reads run concurrently; mutations are
/// serialized.
#[derive(Debug)]
pub struct Catalog {
    dir: PathBuf,
    policy: Policy,
    data: RwLock<CatalogData>,
    sessions: Mutex<HashMap<String, Session>>,
}

impl Catalog {
    /// Opens (or creates) the store in `dir`.
    pub fn open(dir: impl Into<PathBuf>, policy: Policy) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|source| CatalogError::Io {
            path: dir.clone(),
            source,
        })?;
        let data = CatalogData::load(&dir)?;
        Ok(Self {
            dir,
            policy,
            data: RwLock::new(data),
            sessions: Mutex::new(HashMap::new()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    /// A consistent copy of the whole store.
    pub fn snapshot(&self) -> CatalogData {
        self.data.read().clone()
    }

    /// Writes every document, regardless of what changed.
    pub fn save(&self) -> Result<()> {
        let data = self.data.read();
        for doc in Doc::ALL {
            data.save_doc(&self.dir, doc)?;
        }
        Ok(())
    }

    fn mutate<R>(&self, docs: &[Doc], f: impl FnOnce(&mut CatalogData) -> Result<R>) -> Result<R> {
        let mut guard = self.data.write();
        let mut next = guard.clone();
        let out = f(&mut next)?;
        for &doc in docs {
            next.save_doc(&self.dir, doc)?;
        }
        *guard = next;
        Ok(out)
    }

    // ---- tracks ----

    pub fn track(&self, id: &str) -> Option<Track> {
        self.data.read().track(id).cloned()
    }

    pub fn tracks(&self) -> Vec<Track> {
        self.data.read().songs.clone()
    }

    pub fn playlist(&self) -> Vec<String> {
        self.data.read().playlist.clone()
    }

    /// Parses `file`, stores a new track and appends it to the base playlist.
    pub fn add_track(&self, meta: TrackMeta, file: &Path, now: DateTime<Utc>) -> Result<Track> {
        if meta.title.trim().is_empty() {
            return Err(CatalogError::EmptyField("title"));
        }
        let info = probe_file(file)?;
        self.mutate(&[Doc::Songs, Doc::Playlist], |data| {
            let id = fresh_id("song", now, |id| data.track(id).is_some());
            let track = Track {
                id: id.clone(),
                title: meta.title,
                artist: meta.artist,
                album: meta.album,
                genre: meta.genre,
                language: meta.language,
                path: file.to_path_buf(),
                added: now,
                duration_s: info.total_duration_s,
                bitrate_kbps: info.nominal_bitrate_kbps,
            };
            data.songs.push(track.clone());
            data.playlist.push(id);
            Ok(track)
        })
    }

    // ---- users and sessions ----

    pub fn user(&self, id: &str) -> Option<UserAccount> {
        self.data.read().users.iter().find(|u| u.id == id).cloned()
    }

    pub fn register_user(&self, login: &str, secret: &str, now: DateTime<Utc>) -> Result<UserAccount> {
        let login = login.trim();
        if login.is_empty() {
            return Err(CatalogError::EmptyLogin);
        }
        self.mutate(&[Doc::UserLikes], |data| {
            if data.users.iter().any(|u| u.login == login) {
                return Err(CatalogError::DuplicateLogin(login.to_string()));
            }
            let id = fresh_id("user", now, |id| data.users.iter().any(|u| u.id == id));
            let user = UserAccount {
                id,
                login: login.to_string(),
                credential: auth::hash_secret(secret),
                registered: now,
                last_seen: now,
            };
            data.users.push(user.clone());
            Ok(user)
        })
    }

    /// Checks the secret of the account named by login or id and opens a session.
    pub fn authenticate(&self, login_or_id: &str, secret: &str, now: DateTime<Utc>) -> Result<Session> {
        let user_id = self.mutate(&[Doc::UserLikes], |data| {
            let user = data
                .users
                .iter_mut()
                .find(|u| u.login == login_or_id || u.id == login_or_id)
                .ok_or(CatalogError::WrongSecret)?;
            if !auth::verify_secret(&user.credential, secret) {
                return Err(CatalogError::WrongSecret);
            }
            user.last_seen = now;
            Ok(user.id.clone())
        })?;
        let session = Session {
            token: auth::new_token(),
            user_id,
            issued: now,
            last_activity: now,
        };
        let mut sessions = self.sessions.lock();
        let idle = self.policy.session_idle;
        sessions.retain(|_, s| now - s.last_activity <= idle);
        sessions.insert(session.token.clone(), session.clone());
        Ok(session)
    }

    /// Resolves a token to its user, refreshing the inactivity clock.
    pub fn validate_token(&self, token: &str, now: DateTime<Utc>) -> Result<String> {
        let mut sessions = self.sessions.lock();
        let session = sessions.get_mut(token).ok_or(CatalogError::InvalidToken)?;
        if now - session.last_activity > self.policy.session_idle {
            sessions.remove(token);
            return Err(CatalogError::ExpiredToken);
        }
        session.last_activity = now;
        Ok(session.user_id.clone())
    }

    // ---- likes ----

    /// Stores a like unless the same user liked the same track within the
    /// cooldown window. Expired likes are purged on the way.
    pub fn record_like(&self, user_id: &str, track_id: &str, now: DateTime<Utc>) -> Result<bool> {
        let policy = self.policy;
        // read-only pre-check so duplicates do not rewrite the documents
        {
            let data = self.data.read();
            data.require_user(user_id)?;
            data.track(track_id)
                .ok_or_else(|| CatalogError::UnknownTrack(track_id.to_string()))?;
            if data.in_cooldown(user_id, track_id, now, policy.like_cooldown) {
                return Ok(false);
            }
        }
        self.mutate(&[Doc::UserLikes], |data| {
            data.require_user(user_id)?;
            let genre = data
                .track(track_id)
                .ok_or_else(|| CatalogError::UnknownTrack(track_id.to_string()))?
                .genre
                .clone();
            data.likes.retain(|l| now - l.at <= policy.like_lifetime);
            if data.in_cooldown(user_id, track_id, now, policy.like_cooldown) {
                return Ok(false);
            }
            data.likes.push(Like {
                user_id: user_id.to_string(),
                track_id: track_id.to_string(),
                genre,
                at: now,
            });
            Ok(true)
        })
    }

    /// Live-like counts per genre for one user, most liked first.
    pub fn liked_genres(&self, user_id: &str, now: DateTime<Utc>) -> Result<Vec<(String, usize)>> {
        let data = self.data.read();
        data.require_user(user_id)?;
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for like in data.live_likes(now, self.policy.like_lifetime) {
            if like.user_id == user_id {
                *counts.entry(like.genre.as_str()).or_default() += 1;
            }
        }
        let mut out: Vec<(String, usize)> =
            counts.into_iter().map(|(g, n)| (g.to_string(), n)).collect();
        // BTreeMap order is genre ascending; a stable sort keeps it for ties
        out.sort_by_key(|e| std::cmp::Reverse(e.1));
        Ok(out)
    }

    /// Live-like count per track id.
    pub fn like_counts(&self, now: DateTime<Utc>) -> HashMap<String, usize> {
        let data = self.data.read();
        let mut counts = HashMap::new();
        for like in data.live_likes(now, self.policy.like_lifetime) {
            *counts.entry(like.track_id.clone()).or_default() += 1;
        }
        counts
    }

    /// Most liked tracks, ties broken by title then id.
    pub fn top_songs(&self, limit: usize, now: DateTime<Utc>) -> Vec<(Track, usize)> {
        let counts = self.like_counts(now);
        let data = self.data.read();
        let mut rows: Vec<(Track, usize)> = data
            .songs
            .iter()
            .filter_map(|t| counts.get(&t.id).map(|&n| (t.clone(), n)))
            .collect();
        rows.sort_by(|a, b| {
            b.1.cmp(&a.1)
                .then_with(|| a.0.title.cmp(&b.0.title))
                .then_with(|| a.0.id.cmp(&b.0.id))
        });
        rows.truncate(limit);
        rows
    }

    /// Writes the like statistics as CSV to `out`.
    pub fn write_stats<W: Write>(&self, out: W, now: DateTime<Utc>) -> Result<()> {
        write_stats_csv(&self.top_songs(usize::MAX, now), out)
    }

    pub fn export_stats(&self, destination: &Path, now: DateTime<Utc>) -> Result<()> {
        let file = std::fs::File::create(destination).map_err(|source| CatalogError::Io {
            path: destination.to_path_buf(),
            source,
        })?;
        self.write_stats(std::io::BufWriter::new(file), now)
    }

    // ---- ads ----

    pub fn ads(&self) -> Vec<Ad> {
        self.data.read().ads.clone()
    }

    pub fn ad(&self, id: &str) -> Option<Ad> {
        self.data.read().ads.iter().find(|a| a.id == id).cloned()
    }

    pub fn add_ad(&self, new: NewAd, now: DateTime<Utc>) -> Result<Ad> {
        if new.creative_path.trim().is_empty() {
            return Err(CatalogError::EmptyField("creative_path"));
        }
        if new.target_genre.trim().is_empty() {
            return Err(CatalogError::EmptyField("target_genre"));
        }
        self.mutate(&[Doc::Ads], |data| {
            let id = fresh_id("ad", now, |id| data.ads.iter().any(|a| a.id == id));
            let ad = Ad {
                id,
                creative_path: new.creative_path,
                target_genre: new.target_genre,
                click_url: new.click_url,
                impressions: 0,
            };
            data.ads.push(ad.clone());
            Ok(ad)
        })
    }

    /// Counts one impression; returns the new total.
    pub fn record_impression(&self, ad_id: &str) -> Result<u64> {
        self.mutate(&[Doc::Ads], |data| {
            let ad = data
                .ads
                .iter_mut()
                .find(|a| a.id == ad_id)
                .ok_or_else(|| CatalogError::UnknownAd(ad_id.to_string()))?;
            ad.impressions += 1;
            Ok(ad.impressions)
        })
    }

    /// Operator action starting a new campaign for the ad.
    pub fn reset_impressions(&self, ad_id: &str) -> Result<()> {
        self.mutate(&[Doc::Ads], |data| {
            let ad = data
                .ads
                .iter_mut()
                .find(|a| a.id == ad_id)
                .ok_or_else(|| CatalogError::UnknownAd(ad_id.to_string()))?;
            ad.impressions = 0;
            Ok(())
        })
    }

    // ---- programs ----

    pub fn programs(&self) -> Vec<ScheduledProgram> {
        self.data.read().programs.clone()
    }

    pub fn program(&self, id: &str) -> Option<ScheduledProgram> {
        self.data.read().programs.iter().find(|p| p.id == id).cloned()
    }

    pub fn enqueue_program(&self, new: NewProgram, now: DateTime<Utc>) -> Result<ScheduledProgram> {
        if new.items.is_empty() {
            return Err(CatalogError::EmptyProgram);
        }
        if new.requested_start < now {
            return Err(CatalogError::StartInPast(new.requested_start));
        }
        self.mutate(&[Doc::Programs], |data| {
            if let Some(missing) = new.items.iter().find(|id| data.track(id).is_none()) {
                return Err(CatalogError::UnknownTrack(missing.clone()));
            }
            let id = fresh_id("program", now, |id| data.programs.iter().any(|p| p.id == id));
            let seq = data.programs.iter().map(|p| p.seq + 1).max().unwrap_or(0);
            let program = ScheduledProgram {
                id,
                seq,
                title: new.title,
                description: new.description,
                published: new.published,
                requested_start: new.requested_start,
                items: new.items,
                state: ProgramState::Pending,
                started_at: None,
                finished_at: None,
            };
            data.programs.push(program.clone());
            Ok(program)
        })
    }

    pub fn cancel_program(&self, id: &str) -> Result<()> {
        self.transition(id, ProgramState::Pending, ProgramState::Cancelled, |_| {})
    }

    pub fn mark_program_playing(&self, id: &str, now: DateTime<Utc>) -> Result<()> {
        self.transition(id, ProgramState::Pending, ProgramState::Playing, |p| {
            p.started_at = Some(now)
        })
    }

    pub fn mark_program_done(&self, id: &str, now: DateTime<Utc>) -> Result<()> {
        self.transition(id, ProgramState::Playing, ProgramState::Done, |p| {
            p.finished_at = Some(now)
        })
    }

    fn transition(
        &self,
        id: &str,
        expected: ProgramState,
        to: ProgramState,
        stamp: impl FnOnce(&mut ScheduledProgram),
    ) -> Result<()> {
        self.mutate(&[Doc::Programs], |data| {
            let program = data
                .programs
                .iter_mut()
                .find(|p| p.id == id)
                .ok_or_else(|| CatalogError::UnknownProgram(id.to_string()))?;
            if program.state != expected {
                return Err(CatalogError::InvalidTransition {
                    id: id.to_string(),
                    state: program.state,
                    expected,
                });
            }
            program.state = to;
            stamp(program);
            Ok(())
        })
    }
}

/// Reads an MP3 file and returns its stream info, rejecting files without a
/// single valid frame.
pub fn probe_file(file: &Path) -> Result<StreamInfo> {
    let bytes = std::fs::read(file).map_err(|source| CatalogError::Io {
        path: file.to_path_buf(),
        source,
    })?;
    mp3frame::stream_info(&bytes).map_err(|_| CatalogError::NoValidFrame(file.to_path_buf()))
}

/// `<prefix>_<unix millis>`, with `-1`, `-2`, ... appended on collision.
fn fresh_id(prefix: &str, now: DateTime<Utc>, exists: impl Fn(&str) -> bool) -> String {
    let base = format!("{prefix}_{}", now.timestamp_millis());
    if !exists(&base) {
        return base;
    }
    (1..)
        .map(|n| format!("{base}-{n}"))
        .find(|candidate| !exists(candidate))
        .expect("unbounded suffix range")
}

/// Serializes `title,genre,album,artist,likes` rows with LF line endings.
pub fn write_stats_csv<W: Write>(rows: &[(Track, usize)], out: W) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    writer.write_record(["title", "genre", "album", "artist", "likes"])?;
    for (track, likes) in rows {
        writer.write_record([
            track.title.as_str(),
            track.genre.as_str(),
            track.album.as_str(),
            track.artist.as_str(),
            &likes.to_string(),
        ])?;
    }
    writer.flush().map_err(|e| CatalogError::Csv(e.into()))?;
    Ok(())
}
