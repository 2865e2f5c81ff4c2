//! Argument types shared by the `fedsplit` and `blackboard` binaries.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use fedsplit::blackboard::{Blackboard, BlackboardConfig, DEFAULT_QUEUE_DEPTH};

/// Options of the forwarder. There is deliberately no way to pass key material.
#[derive(Debug, Clone, Args)]
pub struct BlackboardArgs {
    /// Address to listen on, e.g. 127.0.0.1:7000.
    #[arg(long)]
    pub bind: String,
    /// Agents per session; frames are held until this many have joined.
    #[arg(long)]
    pub agents: usize,
    /// Append one header line per forwarded frame to this file.
    #[arg(long)]
    pub audit: Option<PathBuf>,
    /// Exit after this many sessions have completed.
    #[arg(long)]
    pub sessions: Option<usize>,
    /// Frames buffered per receiver before the sender is blocked.
    #[arg(long, default_value_t = DEFAULT_QUEUE_DEPTH)]
    pub queue_depth: usize,
}

pub fn serve_blackboard(args: &BlackboardArgs) -> Result<()> {
    let config = BlackboardConfig {
        bind: args.bind.clone(),
        expected_agents: args.agents,
        audit_path: args.audit.clone(),
        queue_depth: args.queue_depth,
        max_sessions: args.sessions,
    };
    let bb = Blackboard::bind(config).with_context(|| format!("binding {}", args.bind))?;
    // Printed on stdout so scripts can pick up an ephemeral port.
    println!("listening on {}", bb.local_addr()?);
    bb.serve().context("blackboard stopped")
}

pub fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_millis()
        .init();
}
