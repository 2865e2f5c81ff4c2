use anyhow::Result;
use clap::Parser;
use fedsplit_cli::{init_logging, serve_blackboard, BlackboardArgs};

/// Keyless forwarder that sequences and relays encrypted gradient frames.
#[derive(Debug, Parser)]
#[command(name = "blackboard", version)]
struct Cli {
    #[command(flatten)]
    args: BlackboardArgs,
}

fn main() -> Result<()> {
    init_logging();
    serve_blackboard(&Cli::parse().args)
}
