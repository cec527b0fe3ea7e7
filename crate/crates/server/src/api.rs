//! JSON control plane on the API port.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, FromRequest, FromRequestParts, Multipart, Path as UrlPath, Request, State};
use axum::http::header::{AUTHORIZATION, CONTENT_TYPE, LOCATION};
use axum::http::request::Parts;
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use chrono::Utc;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;
use tracing::{info, warn};
use wavecaster_core::adserve::{self, RotationMode};
use wavecaster_core::catalog::{
    Ad, Catalog, CatalogError, NewAd, NewProgram, ProgramState, ScheduledProgram, Track, TrackMeta,
};
use wavecaster_core::mp3frame::iterate_frames;
use wavecaster_core::scheduler::{
    commit_announcement, preview_announcement, AnnounceError, AnnouncementPreview, SynthError, Synthesizer,
};

use crate::feed::{build_podcast_feed, ChannelInfo};
use crate::station::{NowPlaying, Station};

const UPLOAD_LIMIT: usize = 256 * 1024 * 1024;

/// Bootstrap document for the browser console.
#[derive(Debug, Clone, Serialize)]
pub struct ConsoleConfig {
    pub api_base_url: String,
    pub stream_url: String,
    pub poll_interval_ms: u64,
    pub rotation_interval_ms: u64,
    pub rotation_mode: RotationMode,
}

pub struct ApiContext {
    pub catalog: Arc<Catalog>,
    pub station: Arc<Station>,
    pub synth: Arc<dyn Synthesizer>,
    pub announce_voice: String,
    pub channel: ChannelInfo,
    pub console: ConsoleConfig,
    pub console_dir: Option<PathBuf>,
    previews: Mutex<HashMap<String, AnnouncementPreview>>,
}

impl ApiContext {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        catalog: Arc<Catalog>,
        station: Arc<Station>,
        synth: Arc<dyn Synthesizer>,
        announce_voice: String,
        channel: ChannelInfo,
        console: ConsoleConfig,
        console_dir: Option<PathBuf>,
    ) -> Self {
        Self {
            catalog,
            station,
            synth,
            announce_voice,
            channel,
            console,
            console_dir,
            previews: Mutex::new(HashMap::new()),
        }
    }
}

pub type AppState = Arc<ApiContext>;

pub fn router(state: AppState) -> Router {
    let mut app = Router::new()
        .route("/api/register", post(register))
        .route("/api/login", post(login))
        .route("/api/like", post(like))
        .route("/api/ads", get(list_ads).post(add_ad))
        .route("/api/ads/{id}/impression", post(impression))
        .route("/api/ads/{id}/reset", post(reset_ad))
        .route("/api/ads/{id}/creative", get(ad_creative))
        .route("/api/now-playing", get(now_playing))
        .route("/api/stats", get(stats_json))
        .route("/api/stats.csv", get(stats_csv))
        .route("/api/feed.rss", get(feed))
        .route("/api/tracks", get(list_tracks).post(upload_track))
        .route("/api/programs", get(list_programs).post(create_program))
        .route("/api/programs/{id}", delete(cancel_program))
        .route("/api/programs/{id}/episode.mp3", get(episode))
        .route("/api/announce", post(announce))
        .route("/api/announce/{preview}/commit", post(commit_preview))
        .route("/console/config.json", get(console_config));
    if let Some(dir) = &state.console_dir {
        app = app.nest_service("/console", ServeDir::new(dir).append_index_html_on_directories(true));
    }
    app.fallback(|| async { ApiError::NotFound("no such endpoint".into()) })
        .layer(DefaultBodyLimit::max(UPLOAD_LIMIT))
        .with_state(state)
}

// ---- errors ----

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Unauthorized(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("{0}")]
    BadGateway(String),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    fn status(&self) -> StatusCode {
        match self {
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Unauthorized(_) => StatusCode::UNAUTHORIZED,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::BadGateway(_) => StatusCode::BAD_GATEWAY,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            warn!(error = %self, "request failed");
        }
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

impl From<CatalogError> for ApiError {
    fn from(e: CatalogError) -> Self {
        let msg = e.to_string();
        match e {
            CatalogError::UnknownUser(_)
            | CatalogError::UnknownTrack(_)
            | CatalogError::UnknownAd(_)
            | CatalogError::UnknownProgram(_) => ApiError::NotFound(msg),
            CatalogError::DuplicateLogin(_) | CatalogError::InvalidTransition { .. } => ApiError::Conflict(msg),
            CatalogError::WrongSecret | CatalogError::InvalidToken | CatalogError::ExpiredToken => {
                ApiError::Unauthorized(msg)
            }
            CatalogError::EmptyLogin
            | CatalogError::EmptyField(_)
            | CatalogError::EmptyProgram
            | CatalogError::StartInPast(_)
            | CatalogError::NoValidFrame(_) => ApiError::Unprocessable(msg),
            CatalogError::Io { .. } | CatalogError::Parse { .. } | CatalogError::Csv(_) => ApiError::Internal(msg),
        }
    }
}

impl From<AnnounceError> for ApiError {
    fn from(e: AnnounceError) -> Self {
        match e {
            AnnounceError::Synth(SynthError::EmptyText) => ApiError::Unprocessable(e.to_string()),
            AnnounceError::Synth(_) => ApiError::BadGateway(e.to_string()),
            AnnounceError::InvalidOutput(_) => ApiError::BadGateway(e.to_string()),
            AnnounceError::Catalog(c) => c.into(),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// JSON body whose rejections come back as JSON errors.
pub struct Body<T>(pub T);

impl<S, T> FromRequest<S> for Body<T>
where
    Json<T>: FromRequest<S, Rejection = JsonRejection>,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Body(v)),
            Err(e) => Err(ApiError::BadRequest(e.body_text())),
        }
    }
}

/// The authenticated listener or operator behind a bearer token.
pub struct Caller(pub String);

impl FromRequestParts<AppState> for Caller {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let header = parts
            .headers
            .get(AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .ok_or_else(|| ApiError::Unauthorized("missing bearer token".into()))?;
        let token = header
            .strip_prefix("Bearer ")
            .or_else(|| header.strip_prefix("bearer "))
            .ok_or_else(|| ApiError::Unauthorized("expected a bearer token".into()))?;
        let user = state.catalog.validate_token(token.trim(), Utc::now())?;
        Ok(Caller(user))
    }
}

// ---- accounts and likes ----

#[derive(Debug, Deserialize)]
struct Credentials {
    login: String,
    password: String,
}

async fn register(State(s): State<AppState>, Body(c): Body<Credentials>) -> ApiResult<impl IntoResponse> {
    let user = s.catalog.register_user(&c.login, &c.password, Utc::now())?;
    info!(user = %user.id, "registered");
    Ok((StatusCode::CREATED, Json(json!({ "user_id": user.id, "login": user.login }))))
}

async fn login(State(s): State<AppState>, Body(c): Body<Credentials>) -> ApiResult<impl IntoResponse> {
    let session = s.catalog.authenticate(&c.login, &c.password, Utc::now())?;
    Ok(Json(json!({
        "token": session.token,
        "user_id": session.user_id,
        "idle_timeout_s": s.catalog.policy().session_idle.num_seconds(),
    })))
}

#[derive(Debug, Deserialize)]
struct LikeRequest {
    track_id: String,
}

async fn like(State(s): State<AppState>, Caller(user): Caller, Body(req): Body<LikeRequest>) -> ApiResult<impl IntoResponse> {
    let accepted = s.catalog.record_like(&user, &req.track_id, Utc::now())?;
    Ok(Json(json!({ "accepted": accepted })))
}

// ---- ads ----

#[derive(Debug, Serialize)]
pub struct AdView {
    pub id: String,
    pub creative_url: String,
    pub target_genre: String,
    pub click_url: String,
    pub impressions: u64,
}

fn is_remote(creative: &str) -> bool {
    creative.starts_with("http://") || creative.starts_with("https://")
}

impl AdView {
    fn new(ad: Ad) -> Self {
        let creative_url = if is_remote(&ad.creative_path) {
            ad.creative_path.clone()
        } else {
            format!("/api/ads/{}/creative", ad.id)
        };
        Self {
            id: ad.id,
            creative_url,
            target_genre: ad.target_genre,
            click_url: ad.click_url,
            impressions: ad.impressions,
        }
    }
}

/// The listener's selection, in slot order. Rotation happens in the client.
async fn list_ads(State(s): State<AppState>, Caller(user): Caller) -> ApiResult<impl IntoResponse> {
    let selection = adserve::select_for_listener(&s.catalog, &user, Utc::now())?;
    let ads: Vec<AdView> = selection
        .ids()
        .iter()
        .filter_map(|id| s.catalog.ad(id))
        .map(AdView::new)
        .collect();
    Ok(Json(json!({ "ads": ads, "rotation_mode": s.console.rotation_mode })))
}

async fn impression(State(s): State<AppState>, _: Caller, UrlPath(id): UrlPath<String>) -> ApiResult<impl IntoResponse> {
    let impressions = adserve::record_impression(&s.catalog, &id)?;
    Ok(Json(json!({ "id": id, "impressions": impressions })))
}

async fn reset_ad(State(s): State<AppState>, _: Caller, UrlPath(id): UrlPath<String>) -> ApiResult<impl IntoResponse> {
    s.catalog.reset_impressions(&id)?;
    Ok(Json(json!({ "id": id, "impressions": 0 })))
}

async fn ad_creative(State(s): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let ad = s.catalog.ad(&id).ok_or_else(|| ApiError::NotFound(format!("unknown ad {id}")))?;
    if is_remote(&ad.creative_path) {
        let location = HeaderValue::from_str(&ad.creative_path).map_err(|e| ApiError::Internal(e.to_string()))?;
        return Ok((StatusCode::FOUND, [(LOCATION, location)]).into_response());
    }
    let path = resolve(&s.catalog, &ad.creative_path);
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|_| ApiError::NotFound(format!("creative of {id} is missing")))?;
    Ok(([(CONTENT_TYPE, image_type(&path))], bytes).into_response())
}

fn image_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("gif") => "image/gif",
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        Some("svg") => "image/svg+xml",
        _ => "application/octet-stream",
    }
}

#[derive(Debug, Deserialize)]
struct AdJson {
    creative_url: String,
    target_genre: String,
    #[serde(default)]
    click_url: String,
}

/// Multipart (`creative` file plus `target_genre`, `click_url`) or JSON with a
/// remote `creative_url`.
async fn add_ad(State(s): State<AppState>, _: Caller, req: Request) -> ApiResult<impl IntoResponse> {
    let multipart = req
        .headers()
        .get(CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    let new = if multipart {
        let form = read_form(
            Multipart::from_request(req, &s).await.map_err(|e| ApiError::BadRequest(e.body_text()))?,
            &s.catalog.dir().join("creatives"),
            "creative",
        )
        .await?;
        let file = form.file.clone().ok_or_else(|| ApiError::BadRequest("missing creative file".into()))?;
        NewAd {
            creative_path: file.display().to_string(),
            target_genre: form.field("target_genre"),
            click_url: form.field("click_url"),
        }
    } else {
        let Body(body) = Body::<AdJson>::from_request(req, &s).await?;
        NewAd {
            creative_path: body.creative_url,
            target_genre: body.target_genre,
            click_url: body.click_url,
        }
    };
    let ad = s.catalog.add_ad(new, Utc::now())?;
    Ok((StatusCode::CREATED, Json(AdView::new(ad))))
}

// ---- uploads ----

struct Form {
    fields: HashMap<String, String>,
    file: Option<PathBuf>,
}

impl Form {
    fn field(&self, name: &str) -> String {
        self.fields.get(name).cloned().unwrap_or_default()
    }
}

/// Stores the part named `file_field` under `dir` and collects the text fields.
async fn read_form(mut multipart: Multipart, dir: &Path, file_field: &str) -> ApiResult<Form> {
    let bad = |e: axum::extract::multipart::MultipartError| ApiError::BadRequest(e.body_text());
    let mut form = Form {
        fields: HashMap::new(),
        file: None,
    };
    while let Some(field) = multipart.next_field().await.map_err(bad)? {
        let name = field.name().unwrap_or_default().to_string();
        if name == file_field {
            let original = field.file_name().unwrap_or("upload.bin").to_string();
            let bytes = field.bytes().await.map_err(bad)?;
            tokio::fs::create_dir_all(dir)
                .await
                .map_err(|e| ApiError::Internal(e.to_string()))?;
            let path = unique_path(dir, &sanitize_file_name(&original));
            tokio::fs::write(&path, &bytes)
                .await
                .map_err(|e| ApiError::Internal(e.to_string()))?;
            form.file = Some(path);
        } else {
            let text = field.text().await.map_err(bad)?;
            form.fields.insert(name, text);
        }
    }
    Ok(form)
}

/// Keeps only the final path component and a conservative character set.
pub fn sanitize_file_name(name: &str) -> String {
    let base = name.rsplit(['/', '\\']).next().unwrap_or_default();
    let cleaned: String = base
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') { c } else { '_' })
        .collect();
    let cleaned = cleaned.trim_start_matches('.');
    if cleaned.is_empty() {
        "upload.bin".to_string()
    } else {
        cleaned.to_string()
    }
}

fn unique_path(dir: &Path, name: &str) -> PathBuf {
    let candidate = dir.join(name);
    if !candidate.exists() {
        return candidate;
    }
    let (stem, ext) = match name.rsplit_once('.') {
        Some((s, e)) => (s.to_string(), format!(".{e}")),
        None => (name.to_string(), String::new()),
    };
    (1..)
        .map(|i| dir.join(format!("{stem}-{i}{ext}")))
        .find(|p| !p.exists())
        .expect("unbounded search")
}

fn resolve(catalog: &Catalog, path: &str) -> PathBuf {
    let p = PathBuf::from(path);
    if p.is_absolute() {
        p
    } else {
        catalog.dir().join(p)
    }
}

async fn upload_track(State(s): State<AppState>, _: Caller, multipart: Multipart) -> ApiResult<impl IntoResponse> {
    let form = read_form(multipart, &s.catalog.dir().join("media"), "file").await?;
    let file = form.file.clone().ok_or_else(|| ApiError::BadRequest("missing file part".into()))?;
    let meta = TrackMeta {
        title: form.field("title"),
        artist: form.field("artist"),
        album: form.field("album"),
        genre: form.field("genre"),
        language: form.field("language"),
    };
    let catalog = s.catalog.clone();
    let result = tokio::task::spawn_blocking(move || catalog.add_track(meta, &file, Utc::now()))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    match result {
        Ok(track) => {
            info!(track = %track.id, "track uploaded");
            Ok((StatusCode::CREATED, Json(track)))
        }
        Err(e) => {
            if let Some(path) = form.file {
                let _ = tokio::fs::remove_file(path).await;
            }
            Err(e.into())
        }
    }
}

async fn list_tracks(State(s): State<AppState>, _: Caller) -> Json<Vec<Track>> {
    Json(s.catalog.tracks())
}

// ---- now playing and statistics ----

#[derive(Debug, Serialize)]
struct NowPlayingView {
    on_air: bool,
    #[serde(flatten)]
    track: Option<NowPlaying>,
}

async fn now_playing(State(s): State<AppState>, _: Caller) -> Json<NowPlayingView> {
    let track = s.station.now_playing();
    Json(NowPlayingView {
        on_air: track.is_some(),
        track,
    })
}

#[derive(Debug, Serialize)]
struct StatRow {
    track_id: String,
    title: String,
    artist: String,
    genre: String,
    likes: usize,
}

async fn stats_json(State(s): State<AppState>, _: Caller) -> Json<Vec<StatRow>> {
    let rows = s
        .catalog
        .top_songs(usize::MAX, Utc::now())
        .into_iter()
        .map(|(t, likes)| StatRow {
            track_id: t.id,
            title: t.title,
            artist: t.artist,
            genre: t.genre,
            likes,
        })
        .collect();
    Json(rows)
}

async fn stats_csv(State(s): State<AppState>, _: Caller) -> ApiResult<Response> {
    let mut out = Vec::new();
    s.catalog.write_stats(&mut out, Utc::now())?;
    Ok(([(CONTENT_TYPE, "text/csv; charset=utf-8")], out).into_response())
}

// ---- programs and podcast ----

async fn list_programs(State(s): State<AppState>, _: Caller) -> Json<Vec<ScheduledProgram>> {
    Json(s.catalog.programs())
}

async fn create_program(State(s): State<AppState>, _: Caller, Body(new): Body<NewProgram>) -> ApiResult<impl IntoResponse> {
    let program = s.catalog.enqueue_program(new, Utc::now())?;
    info!(program = %program.id, start = %program.requested_start, "program scheduled");
    Ok((StatusCode::CREATED, Json(program)))
}

async fn cancel_program(State(s): State<AppState>, _: Caller, UrlPath(id): UrlPath<String>) -> ApiResult<StatusCode> {
    s.catalog.cancel_program(&id)?;
    Ok(StatusCode::NO_CONTENT)
}

/// The program's items as one MP3 stream (frames only, tags dropped).
pub fn episode_bytes(catalog: &Catalog, program: &ScheduledProgram) -> Vec<u8> {
    let mut out = Vec::new();
    for id in &program.items {
        let Some(track) = catalog.track(id) else { continue };
        let Ok(data) = std::fs::read(&track.path) else { continue };
        for frame in iterate_frames(&data) {
            out.extend_from_slice(frame.bytes);
        }
    }
    out
}

fn episode_len(catalog: &Catalog, program: &ScheduledProgram) -> u64 {
    program
        .items
        .iter()
        .filter_map(|id| catalog.track(id))
        .filter_map(|t| std::fs::read(&t.path).ok())
        .map(|data| iterate_frames(&data).map(|f| f.bytes.len() as u64).sum::<u64>())
        .sum()
}

async fn feed(State(s): State<AppState>) -> ApiResult<Response> {
    let catalog = s.catalog.clone();
    let channel = s.channel.clone();
    let xml = tokio::task::spawn_blocking(move || {
        build_podcast_feed(&catalog.programs(), &channel, Utc::now(), |p| episode_len(&catalog, p))
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(([(CONTENT_TYPE, "application/rss+xml; charset=utf-8")], xml).into_response())
}

async fn episode(State(s): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let program = s
        .catalog
        .program(&id)
        .filter(|p| p.published && p.state == ProgramState::Done)
        .ok_or_else(|| ApiError::NotFound(format!("no published episode {id}")))?;
    let catalog = s.catalog.clone();
    let bytes = tokio::task::spawn_blocking(move || episode_bytes(&catalog, &program))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(([(CONTENT_TYPE, "audio/mpeg")], bytes).into_response())
}

// ---- announcements ----

#[derive(Debug, Deserialize)]
struct AnnounceRequest {
    text: String,
    #[serde(default)]
    voice: Option<String>,
    /// `false` synthesizes a preview without touching the library.
    #[serde(default = "yes")]
    commit: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Serialize)]
struct PreviewView {
    preview_id: String,
    text: String,
    voice: String,
    duration_s: f64,
    bitrate_kbps: u32,
}

async fn announce(State(s): State<AppState>, _: Caller, Body(req): Body<AnnounceRequest>) -> ApiResult<Response> {
    let voice = req.voice.filter(|v| !v.trim().is_empty()).unwrap_or_else(|| s.announce_voice.clone());
    let synth = s.synth.clone();
    let dir = s.catalog.dir().join("announcements");
    let text = req.text;
    let preview = tokio::task::spawn_blocking(move || preview_announcement(&text, &voice, synth.as_ref(), &dir))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
    if req.commit {
        let track = commit_announcement(&s.catalog, &preview, Utc::now())?;
        info!(track = %track.id, "announcement added");
        return Ok((StatusCode::CREATED, Json(track)).into_response());
    }
    let id = format!("preview_{}", Utc::now().timestamp_nanos_opt().unwrap_or_default());
    let view = PreviewView {
        preview_id: id.clone(),
        text: preview.text.clone(),
        voice: preview.voice.clone(),
        duration_s: preview.info.total_duration_s,
        bitrate_kbps: preview.info.nominal_bitrate_kbps,
    };
    s.previews.lock().insert(id, preview);
    Ok(Json(view).into_response())
}

async fn commit_preview(State(s): State<AppState>, _: Caller, UrlPath(id): UrlPath<String>) -> ApiResult<impl IntoResponse> {
    let preview = s
        .previews
        .lock()
        .remove(&id)
        .ok_or_else(|| ApiError::NotFound(format!("unknown preview {id}")))?;
    let track = commit_announcement(&s.catalog, &preview, Utc::now())?;
    Ok((StatusCode::CREATED, Json(track)))
}

async fn console_config(State(s): State<AppState>) -> Json<ConsoleConfig> {
    Json(s.console.clone())
}
