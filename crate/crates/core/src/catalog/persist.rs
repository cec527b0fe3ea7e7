use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::model::{Ad, Like, ScheduledProgram, Track, UserAccount};
use super::{CatalogError, Result};

/// The store's documents, one file each under the library directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Doc {
    Songs,
    Playlist,
    UserLikes,
    Ads,
    Programs,
}

impl Doc {
    pub const ALL: [Doc; 5] = [
        Doc::Songs,
        Doc::Playlist,
        Doc::UserLikes,
        Doc::Ads,
        Doc::Programs,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            Doc::Songs => "songs.json",
            Doc::Playlist => "playlist.json",
            Doc::UserLikes => "user_likes.json",
            Doc::Ads => "ads.json",
            Doc::Programs => "programs.json",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CatalogData {
    pub songs: Vec<Track>,
    pub playlist: Vec<String>,
    pub users: Vec<UserAccount>,
    pub likes: Vec<Like>,
    pub ads: Vec<Ad>,
    pub programs: Vec<ScheduledProgram>,
}

#[derive(Serialize, Deserialize)]
struct SongsDoc {
    songs: Vec<Track>,
}

#[derive(Serialize, Deserialize)]
struct PlaylistDoc {
    items: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct UserLikesDoc {
    users: Vec<UserAccount>,
    likes: Vec<Like>,
}

#[derive(Serialize, Deserialize)]
struct AdsDoc {
    ads: Vec<Ad>,
}

#[derive(Serialize, Deserialize)]
struct ProgramsDoc {
    programs: Vec<ScheduledProgram>,
}

impl CatalogData {
    pub fn load(dir: &Path) -> Result<Self> {
        let mut data = CatalogData::default();
        if let Some(doc) = read_doc::<SongsDoc>(dir, Doc::Songs)? {
            data.songs = doc.songs;
        }
        if let Some(doc) = read_doc::<PlaylistDoc>(dir, Doc::Playlist)? {
            data.playlist = doc.items;
        }
        if let Some(doc) = read_doc::<UserLikesDoc>(dir, Doc::UserLikes)? {
            data.users = doc.users;
            data.likes = doc.likes;
        }
        if let Some(doc) = read_doc::<AdsDoc>(dir, Doc::Ads)? {
            data.ads = doc.ads;
        }
        if let Some(doc) = read_doc::<ProgramsDoc>(dir, Doc::Programs)? {
            data.programs = doc.programs;
        }
        Ok(data)
    }

    pub fn save_doc(&self, dir: &Path, doc: Doc) -> Result<()> {
        let bytes = match doc {
            Doc::Songs => to_json(&SongsDoc { songs: self.songs.clone() }),
            Doc::Playlist => to_json(&PlaylistDoc { items: self.playlist.clone() }),
            Doc::UserLikes => to_json(&UserLikesDoc {
                users: self.users.clone(),
                likes: self.likes.clone(),
            }),
            Doc::Ads => to_json(&AdsDoc { ads: self.ads.clone() }),
            Doc::Programs => to_json(&ProgramsDoc { programs: self.programs.clone() }),
        };
        write_atomic(&dir.join(doc.file_name()), &bytes)
    }

    pub fn track(&self, id: &str) -> Option<&Track> {
        self.songs.iter().find(|t| t.id == id)
    }

    pub(super) fn require_user(&self, id: &str) -> Result<&UserAccount> {
        self.users
            .iter()
            .find(|u| u.id == id)
            .ok_or_else(|| CatalogError::UnknownUser(id.to_string()))
    }

    pub fn live_likes(&self, now: DateTime<Utc>, lifetime: Duration) -> impl Iterator<Item = &Like> {
        self.likes.iter().filter(move |l| now - l.at <= lifetime)
    }

    pub(super) fn in_cooldown(&self, user_id: &str, track_id: &str, now: DateTime<Utc>, cooldown: Duration) -> bool {
        self.likes
            .iter()
            .any(|l| l.user_id == user_id && l.track_id == track_id && now - l.at < cooldown)
    }
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("store documents serialize");
    bytes.push(b'\n');
    bytes
}

fn read_doc<T: DeserializeOwned>(dir: &Path, doc: Doc) -> Result<Option<T>> {
    let path = dir.join(doc.file_name());
    let bytes = match std::fs::read(&path) {
        Ok(bytes) => bytes,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(source) => return Err(CatalogError::Io { path, source }),
    };
    serde_json::from_slice(&bytes)
        .map(Some)
        .map_err(|source| CatalogError::Parse { path, source })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp: PathBuf = path.with_extension("json.tmp");
    let io_err = |source| CatalogError::Io {
        path: path.to_path_buf(),
        source,
    };
    std::fs::write(&tmp, bytes).map_err(io_err)?;
    std::fs::rename(&tmp, path).map_err(io_err)
}
