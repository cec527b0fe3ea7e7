use anyhow::Context;
use clap::Parser;
use tracing_subscriber::EnvFilter;
use wavecaster::config::{Cli, Command};
use wavecaster::tools;

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();

    match Cli::parse().command {
        Command::Serve(config) => {
            let server = wavecaster::start(&config).await.context("starting server")?;
            println!("stream: {}", server.stream_url());
            println!("api:    {}", server.api_url());
            tokio::select! {
                _ = server.wait() => anyhow::bail!("a server task stopped unexpectedly"),
                r = tokio::signal::ctrl_c() => r.context("waiting for ctrl-c")?,
            }
        }
        Command::Restore(args) => {
            tools::restore(&args).with_context(|| format!("restoring {}", args.input.display()))?;
            println!("wrote {}", args.out.display());
        }
        Command::Ingest(args) => {
            for track in tools::ingest(&args)? {
                println!("{}\t{}\t{:.1}s", track.id, track.display_title(), track.duration_s);
            }
        }
        Command::GenerateFixture(args) => {
            let frames = tools::generate_fixture(&args)?;
            println!("wrote {} frames to {}", frames, args.out.display());
        }
    }
    Ok(())
}
