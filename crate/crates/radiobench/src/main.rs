use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Context;
use clap::Parser;
use radiobench::{run_load_test, Disconnect, Expectations, LoadTest};

/// Connects N ICY listeners to a stream and checks integrity and throughput.
#[derive(Debug, Parser)]
#[command(name = "radiobench", version)]
struct Args {
    /// Stream URL, e.g. http://127.0.0.1:8000/
    #[arg(long)]
    url: String,
    #[arg(long, default_value_t = 10)]
    listeners: usize,
    #[arg(long, default_value_t = 60.0)]
    seconds: f64,
    /// Expected stream bitrate A in kbps.
    #[arg(long)]
    expect_bitrate: Option<f64>,
    /// Upper bound on metadata overhead B in kbps.
    #[arg(long)]
    max_sync_kbps: Option<f64>,
    /// Seconds to wait for the connect burst before measuring.
    #[arg(long, default_value_t = 2.0)]
    settle: f64,
    /// Drop listener I after S seconds (repeatable, `I:S`).
    #[arg(long = "kill", value_parser = parse_kill)]
    kill: Vec<(usize, Duration)>,
    /// Write the full report as JSON to this file.
    #[arg(long)]
    json: Option<PathBuf>,
}

fn parse_kill(s: &str) -> Result<(usize, Duration), String> {
    let (i, t) = s.split_once(':').ok_or("expected INDEX:SECONDS")?;
    let i = i.parse().map_err(|e| format!("{e}"))?;
    let t: f64 = t.parse().map_err(|e| format!("{e}"))?;
    Duration::try_from_secs_f64(t).map(|d| (i, d)).map_err(|e| e.to_string())
}

#[tokio::main]
async fn main() -> anyhow::Result<ExitCode> {
    let args = Args::parse();
    let mut test = LoadTest::new(
        args.url.clone(),
        args.listeners,
        Duration::try_from_secs_f64(args.seconds).context("--seconds")?,
    );
    test.settle = Duration::try_from_secs_f64(args.settle).context("--settle")?;
    test.kill = args.kill;
    test.expectations = Expectations {
        bitrate_kbps: args.expect_bitrate,
        max_sync_kbps: args.max_sync_kbps,
        ..Expectations::default()
    };

    let report = run_load_test(&test).await.with_context(|| format!("load test against {}", args.url))?;

    for l in &report.listeners {
        let state = match &l.disconnect {
            Disconnect::Completed => "ok".to_string(),
            Disconnect::Killed => "killed".to_string(),
            Disconnect::ServerClosed => "closed by server".to_string(),
            Disconnect::Failed(e) => format!("failed: {e}"),
        };
        println!(
            "listener {:>3}: {:>8.2} kbps audio, {:>6.3} kbps metadata, {:>6} frames, {} titles, {state}",
            l.index,
            l.audio_kbps,
            l.sync_kbps,
            l.frames_recovered,
            l.titles.len()
        );
    }
    println!(
        "aggregate {:.1} kbps, model {:.1} kbps, residual {:+.2}%",
        report.aggregate_kbps,
        report.model_kbps,
        report.residual * 100.0
    );
    if let Some(path) = &args.json {
        let json = serde_json::to_string_pretty(&report)?;
        std::fs::write(path, json).with_context(|| format!("writing {}", path.display()))?;
    }
    for f in &report.failures {
        eprintln!("FAIL {f}");
    }
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
