use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;

mod args;
mod commands;
mod config;
mod manifest;

use args::{Cli, Command};

fn error_class(e: &wop::Error) -> (&'static str, u8) {
    use wop::Error::*;
    match e {
        InvalidArgument(_) => ("usage", 2),
        Divergence { .. } => ("divergence", 4),
        Parse { .. } | Data(_) | Shape { .. } | State(_) | Selection(_) | Io { .. } => ("data", 3),
    }
}

fn default_manifest_path(cmd: &Command) -> PathBuf {
    let beside = |p: &Path| {
        let mut s = p.as_os_str().to_owned();
        s.push(".manifest.json");
        PathBuf::from(s)
    };
    match cmd {
        Command::Gen(a) => a.out.join("gen.manifest.json"),
        Command::Select(a) => a.out.join("select.manifest.json"),
        Command::Apply(a) => a.out.join("apply.manifest.json"),
        Command::Extract(a) => beside(&a.out),
        Command::Train(a) => beside(&a.out),
        Command::Eval(a) => match &a.out {
            Some(p) => beside(p),
            None => PathBuf::from("eval.manifest.json"),
        },
    }
}

fn main() -> ExitCode {
    let raw: Vec<OsString> = std::env::args_os().collect();
    let argv = match config::expand(raw) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error[usage]: {msg}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(if code == 0 { 0 } else { 2 });
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error[usage]: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error[usage]: {e}");
            return ExitCode::from(2);
        }
    }
    let manifest_path = cli
        .manifest
        .clone()
        .unwrap_or_else(|| default_manifest_path(&cli.command));
    match commands::run(&cli.command, cli.threads) {
        Ok(recorder) => {
            if let Err(e) = recorder.finish(&manifest_path) {
                eprintln!("error[data]: {}: {e}", manifest_path.display());
                return ExitCode::from(3);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let (class, code) = error_class(&e);
            eprintln!("error[{class}]: {e}");
            ExitCode::from(code)
        }
    }
}
