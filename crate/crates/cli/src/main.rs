use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use gardener_cli::commands::{self, Context};
use gardener_cli::server::{self, AppState};

#[derive(Parser)]
#[command(name = "gardener", version, about = "Grow a project from a one-line seed")]
struct Cli {
    /// Garden directory (for `serve`, the directory holding gardens).
    #[arg(long, global = true, default_value = ".")]
    workspace: PathBuf,
    /// Settings file; defaults to <workspace>/gardener.toml when present.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create an empty garden.
    Init { workspace: Option<PathBuf> },
    /// Plant the seed prompt.
    Seed { text: String },
    /// Perform up to N work units.
    Step {
        #[arg(default_value_t = 1)]
        units: usize,
    },
    /// Work until nothing is left.
    Play {
        #[arg(long, default_value_t = 10_000)]
        max_units: usize,
    },
    Pause,
    /// Print the tree and the leaves in execution order.
    Status,
    /// Write the garden document to a file.
    Export { path: PathBuf },
    /// Asset index maintenance.
    Index {
        #[command(subcommand)]
        command: IndexCommand,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
    },
}

#[derive(Subcommand)]
enum IndexCommand {
    /// Embed every thumbnail listed in a manifest.
    Build {
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    let workspace = match &cli.command {
        Command::Init { workspace: Some(dir) } => dir.clone(),
        _ => cli.workspace.clone(),
    };
    let ctx = Context::load(workspace, cli.config.as_deref())?;
    let out = match cli.command {
        Command::Init { .. } => commands::init(&ctx)?,
        Command::Seed { text } => commands::seed(&ctx, &text)?,
        Command::Step { units } => commands::step(&ctx, units)?,
        Command::Play { max_units } => {
            let done = commands::play(&ctx, max_units, |line| println!("{line}"))?;
            format!("{done} units")
        }
        Command::Pause => commands::pause(&ctx)?,
        Command::Status => commands::status(&ctx)?,
        Command::Export { path } => commands::export(&ctx, &path)?,
        Command::Index { command: IndexCommand::Build { manifest, out } } => {
            commands::index_build(&ctx, &manifest, out.as_deref())?
        }
        Command::Serve { port, host } => {
            let state = AppState::new(ctx.workspace, ctx.settings);
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(server::serve(state, SocketAddr::new(host, port)))?;
            return Ok(());
        }
    };
    println!("{out}");
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
