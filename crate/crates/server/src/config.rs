use std::net::IpAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use wavecaster_core::icy::{DEFAULT_API_PORT, DEFAULT_METAINT, DEFAULT_STREAM_PORT};

#[derive(Debug, Parser)]
#[command(name = "wavecaster", version, about = "Internet radio station server")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Run the station: ICY stream, scheduler and JSON API.
    Serve(ServerConfig),
    /// Fill a gap in a mono WAV file by autoregressive interpolation.
    Restore(RestoreArgs),
    /// Add MP3 files to the library.
    Ingest(IngestArgs),
    /// Write a silent constant-bitrate MP3 file.
    GenerateFixture(FixtureArgs),
}

#[derive(Debug, Clone, Parser)]
pub struct ServerConfig {
    #[arg(long, env = "WAVECASTER_LIBRARY_DIR", default_value = "library")]
    pub library_dir: PathBuf,
    #[arg(long, default_value = "0.0.0.0")]
    pub bind: IpAddr,
    #[arg(long, default_value_t = DEFAULT_STREAM_PORT)]
    pub stream_port: u16,
    #[arg(long, default_value_t = DEFAULT_API_PORT)]
    pub api_port: u16,
    /// Audio bytes between in-band metadata blocks.
    #[arg(long, default_value_t = DEFAULT_METAINT, value_parser = positive_metaint)]
    pub metaint: usize,
    /// Seconds of audio kept for burst-on-connect.
    #[arg(long, default_value_t = 10.0)]
    pub ring_seconds: f64,
    #[arg(long, default_value_t = 100)]
    pub max_listeners: usize,
    #[arg(long, default_value = "Wavecaster")]
    pub station_name: String,
    #[arg(long, default_value = "Various")]
    pub station_genre: String,
    /// Bitrate advertised in `icy-br`.
    #[arg(long, default_value_t = 128)]
    pub bitrate: u32,
    /// `stub`, an http(s) endpoint, or a command line.
    #[arg(long, default_value = "stub")]
    pub tts_adapter: String,
    #[arg(long, default_value = "default")]
    pub announce_voice: String,
    /// Console shows the next five ads in order instead of the classic stride.
    #[arg(long)]
    pub fair_rotation: bool,
    /// Base URL clients use to reach the API (feed links, console bootstrap).
    #[arg(long)]
    pub public_url: Option<String>,
    /// URL clients use to reach the stream.
    #[arg(long)]
    pub public_stream_url: Option<String>,
    /// Directory with the built console, served under /console/.
    #[arg(long)]
    pub console_dir: Option<PathBuf>,
    /// Play the base playlist in order instead of the weighted shuffle.
    #[arg(long)]
    pub sequential: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 30)]
    pub like_lifetime_days: i64,
    #[arg(long, default_value_t = 24)]
    pub like_cooldown_hours: i64,
    #[arg(long, default_value_t = 24)]
    pub session_idle_hours: i64,
    #[arg(long, default_value_t = 5000)]
    pub poll_interval_ms: u64,
    #[arg(long, default_value_t = 5000)]
    pub rotation_interval_ms: u64,
    #[arg(long, default_value = "Wavecaster podcast")]
    pub feed_title: String,
    #[arg(long, default_value = "Recorded programs")]
    pub feed_description: String,
}

impl ServerConfig {
    /// Defaults for a library, listening on ephemeral loopback ports.
    pub fn ephemeral(library_dir: impl Into<PathBuf>) -> Self {
        let mut config = Self::parse_from(["serve"]);
        config.library_dir = library_dir.into();
        config.bind = IpAddr::from([127, 0, 0, 1]);
        config.stream_port = 0;
        config.api_port = 0;
        config
    }
}

fn positive_metaint(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if (1..=1 << 20).contains(&n) => Ok(n),
        Ok(_) => Err("metaint must be between 1 and 1048576".into()),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Debug, Clone, Args)]
pub struct RestoreArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub gap_start: usize,
    #[arg(long)]
    pub gap_len: usize,
    #[arg(long, default_value_t = wavecaster_core::restore::DEFAULT_ORDER)]
    pub order: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct IngestArgs {
    #[arg(long, env = "WAVECASTER_LIBRARY_DIR", default_value = "library")]
    pub library_dir: PathBuf,
    #[arg(long, default_value = "")]
    pub artist: String,
    #[arg(long, default_value = "")]
    pub genre: String,
    #[arg(long, default_value = "")]
    pub language: String,
    /// Titles default to the file stem.
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Channels {
    Mono,
    Stereo,
    JointStereo,
}

#[derive(Debug, Clone, Args)]
pub struct FixtureArgs {
    #[arg(long, default_value_t = 128)]
    pub bitrate: u32,
    #[arg(long, default_value_t = 44_100)]
    pub sample_rate: u32,
    #[arg(long, value_enum, default_value = "joint-stereo")]
    pub channels: Channels,
    #[arg(long, default_value_t = 30.0)]
    pub seconds: f64,
    #[arg(long)]
    pub out: PathBuf,
}
