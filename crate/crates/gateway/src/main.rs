use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use semgate_gateway::{Gateway, GatewayConfig};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "semgate", version, about = "Semantic caching gateway for chat-completions APIs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the gateway until SIGINT/SIGTERM.
    Serve {
        /// JSON config file; SEMGATE_* environment variables override it.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print the effective configuration as JSON and exit.
    Config {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutdown requested");
}

async fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Serve { config } => {
            let cfg = GatewayConfig::load(config.as_deref())?;
            let gateway = Gateway::from_config(&cfg)?;
            let listener = tokio::net::TcpListener::bind(&cfg.listen)
                .await
                .with_context(|| format!("binding {}", cfg.listen))?;
            gateway.serve(listener, shutdown_signal()).await?;
        }
        Command::Config { config } => {
            let mut cfg = GatewayConfig::load(config.as_deref())?;
            for key in [&mut cfg.upstream.api_key, &mut cfg.embedding.api_key] {
                if key.is_some() {
                    *key = Some("<redacted>".into());
                }
            }
            println!("{}", serde_json::to_string_pretty(&cfg)?);
        }
    }
    Ok(())
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            tracing::error!("{e:#}");
            eprintln!("semgate: {e:#}");
            ExitCode::FAILURE
        }
    }
}
