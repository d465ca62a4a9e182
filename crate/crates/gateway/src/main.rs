use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use smartline_gateway::cli::{run_offline, Cli, Command};
use smartline_gateway::serve;
use tracing_subscriber::EnvFilter;

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Serve(args) => args.service_config().and_then(|config| {
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async {
                let handle = serve(config).await?;
                println!("listening on http://{}", handle.local_addr());
                let _ = tokio::signal::ctrl_c().await;
                tracing::info!("shutting down");
                let fed = handle.shutdown().await?;
                tracing::info!(ticks = fed, "event log flushed");
                Ok(())
            })
        }),
        _ => run_offline(&cli).map(|out| {
            let _ = std::io::stdout().write_all(out.as_bytes());
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
