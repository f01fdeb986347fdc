//! `normlex` command-line front end: argument parsing, the subcommands and
//! the local HTTP service.

pub mod args;
pub mod commands;
pub mod serve;

use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::net::SocketAddr;

use anyhow::Context;
use clap::Parser;

use crate::args::{Cli, Command};
use crate::commands::{exit_code, UsageError};

/// Parses `argv` and runs the subcommand. Returns the process exit code:
/// 0 on success, 1 on runtime errors and 2 on usage errors.
pub fn run<I, T>(argv: I, stdin: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let rendered = e.render();
            if e.use_stderr() {
                let _ = write!(err, "{rendered}");
                return 2;
            }
            let _ = write!(out, "{rendered}");
            return 0;
        }
    };
    let result = match &cli.command {
        Command::BuildIndex(a) => commands::cmd_build_index(a, out, err),
        Command::Normalize(a) => commands::cmd_normalize(a, stdin, out, err),
        Command::TrainMt(a) => commands::cmd_train_mt(a, out, err),
        Command::Translate(a) => commands::cmd_translate(a, stdin, out),
        Command::Evaluate(a) => commands::cmd_evaluate(a, out, err),
        Command::Serve(a) => (|| {
            let addr: SocketAddr = format!("{}:{}", a.host, a.port)
                .parse()
                .map_err(|_| UsageError(format!("invalid listen address {}:{}", a.host, a.port)))?;
            let normalizer = commands::build_normalizer(&a.pipeline, err)?;
            serve::run_server(serve::AppState::new(normalizer, a.workers), addr, a.workers).context("server failed")
        })(),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            exit_code(&e)
        }
    }
}
