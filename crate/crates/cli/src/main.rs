// `!(x > 0.0)` style checks are kept so NaN flags are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod args;
mod commands;
mod manifest;

use std::path::Path;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use commands::UsageError;

/// 2 for bad arguments or settings, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let usage = err.chain().any(|e| {
        e.is::<UsageError>()
            || matches!(
                e.downcast_ref::<abstain::Error>(),
                Some(abstain::Error::Config(_))
            )
    });
    if usage {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::try_parse().unwrap_or_else(|e| e.exit());
    let result = match cli.command {
        Command::Replay(r) => commands::replay(&r.manifest, cli.out_dir.as_deref()),
        cmd => commands::execute(
            cmd,
            cli.seed,
            cli.jobs,
            cli.out_dir.as_deref().unwrap_or(Path::new(".")),
        ),
    };
    match result {
        Ok(m) => {
            for out in &m.outputs {
                println!("{}", m.out_dir.join(out).display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
