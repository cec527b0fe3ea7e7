//! Offline subcommands: WAV gap restoration, library ingest, fixture generation.

use std::path::{Path, PathBuf};

use chrono::Utc;
use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use thiserror::Error;
use wavecaster_core::catalog::{Catalog, CatalogError, Policy, Track, TrackMeta};
use wavecaster_core::mp3frame::{ChannelMode, SilentStream};
use wavecaster_core::restore::{gap_fill_with, GapFillOptions, RestoreError};

use crate::config::{Channels, FixtureArgs, IngestArgs, RestoreArgs};

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("{0} has {1} channels; only mono is supported")]
    NotMono(PathBuf, u16),
    #[error(transparent)]
    Restore(#[from] RestoreError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("{0}")]
    Invalid(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Reads a mono WAV into samples scaled to [-1, 1].
pub fn read_mono_wav(path: &Path) -> Result<(WavSpec, Vec<f64>), ToolError> {
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(ToolError::NotMono(path.to_path_buf(), spec.channels));
    }
    let samples = match spec.sample_format {
        SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<Vec<_>, _>>()?,
        SampleFormat::Int => {
            let scale = f64::from(1u32 << (spec.bits_per_sample - 1));
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) / scale))
                .collect::<Result<Vec<_>, _>>()?
        }
    };
    Ok((spec, samples))
}

/// Writes samples with the given spec, clipping integer formats.
pub fn write_mono_wav(path: &Path, spec: WavSpec, samples: &[f64]) -> Result<(), ToolError> {
    let mut writer = WavWriter::create(path, spec)?;
    match spec.sample_format {
        SampleFormat::Float => {
            for &s in samples {
                writer.write_sample(s as f32)?;
            }
        }
        SampleFormat::Int => {
            let scale = f64::from(1u32 << (spec.bits_per_sample - 1));
            let (lo, hi) = (-scale, scale - 1.0);
            for &s in samples {
                writer.write_sample((s * scale).round().clamp(lo, hi) as i32)?;
            }
        }
    }
    writer.finalize()?;
    Ok(())
}

pub fn restore(args: &RestoreArgs) -> Result<(), ToolError> {
    let (spec, samples) = read_mono_wav(&args.input)?;
    let options = GapFillOptions {
        order: args.order,
        ..GapFillOptions::default()
    };
    let filled = gap_fill_with(&samples, args.gap_start, args.gap_len, options)?;
    write_mono_wav(&args.out, spec, &filled)
}

pub fn ingest(args: &IngestArgs) -> Result<Vec<Track>, ToolError> {
    let catalog = Catalog::open(&args.library_dir, Policy::default())?;
    let mut added = Vec::new();
    for file in &args.files {
        let title = file
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("untitled")
            .replace('_', " ");
        let path = std::path::absolute(file)?;
        let meta = TrackMeta {
            title,
            artist: args.artist.clone(),
            album: String::new(),
            genre: args.genre.clone(),
            language: args.language.clone(),
        };
        added.push(catalog.add_track(meta, &path, Utc::now())?);
    }
    Ok(added)
}

pub fn generate_fixture(args: &FixtureArgs) -> Result<usize, ToolError> {
    let mode = match args.channels {
        Channels::Mono => ChannelMode::Mono,
        Channels::Stereo => ChannelMode::Stereo,
        Channels::JointStereo => ChannelMode::JointStereo,
    };
    let stream = SilentStream::new(args.bitrate, args.sample_rate, mode).ok_or_else(|| {
        ToolError::Invalid(format!(
            "{} kbps at {} Hz is not a valid MPEG-1 Layer III combination",
            args.bitrate, args.sample_rate
        ))
    })?;
    let bytes = stream.duration(args.seconds);
    std::fs::write(&args.out, &bytes)?;
    Ok(stream.frames_for(args.seconds))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wav_round_trip_preserves_int16() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let samples: Vec<f64> = (0..100).map(|i| f64::from(i - 50) / 64.0).collect();
        write_mono_wav(&path, spec, &samples).unwrap();
        let (_, back) = read_mono_wav(&path).unwrap();
        for (a, b) in samples.iter().zip(&back) {
            assert!((a - b).abs() < 1.0 / 32768.0);
        }
    }

    #[test]
    fn stereo_input_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_mono_wav(&path), Err(ToolError::NotMono(_, 2))));
    }

    #[test]
    fn restore_fills_sine_gap() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.wav");
        let out = dir.path().join("out.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 44_100,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        };
        let w = 2.0 * std::f64::consts::PI * 440.0 / 44_100.0;
        let clean: Vec<f64> = (0..8192).map(|n| 0.5 * (w * n as f64).sin()).collect();
        let mut damaged = clean.clone();
        damaged[4000..4256].fill(0.0);
        write_mono_wav(&input, spec, &damaged).unwrap();
        restore(&RestoreArgs {
            input,
            gap_start: 4000,
            gap_len: 256,
            order: 32,
            out: out.clone(),
        })
        .unwrap();
        let (_, filled) = read_mono_wav(&out).unwrap();
        let err: f64 = (4000..4256).map(|i| (filled[i] - clean[i]).powi(2)).sum();
        let energy: f64 = (4000..4256).map(|i| clean[i].powi(2)).sum();
        assert!((err / energy).sqrt() < 0.01);
    }
}
