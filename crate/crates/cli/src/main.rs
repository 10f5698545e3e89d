//! `culprit`: synthesize, build, train, evaluate, identify and serve.
//!
//! Exit codes: 0 on success, 1 on a domain error (printed as one
//! `error: <kind>: <message>` line), 2 on a usage error.

mod args;
mod commands;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, FromArgMatches};
use culprit::kv::KeyValues;

use crate::args::Cli;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] culprit::Error),

    #[error(transparent)]
    Service(#[from] culprit_service::ServiceError),

    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Service(e) => e.kind(),
            CliError::File { .. } => "io",
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let argv: Vec<OsString> = std::env::args_os().collect();
    let cli = match parse(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error: {}: {message}", e.kind());
            ExitCode::from(1)
        }
    }
}

/// Parses `argv`, expanding `--config FILE` into flags placed right after
/// the subcommand name. Keys may be written in snake or kebab case.
fn parse(argv: Vec<OsString>) -> Result<Cli, clap::Error> {
    let mut cmd = Cli::command();
    let (config, mut rest) = take_config(argv);
    if let Some(path) = config {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| cmd.error(ErrorKind::Io, format!("cannot read config {}: {e}", path.display())))?;
        let kv = KeyValues::parse(&text)
            .map_err(|e| cmd.error(ErrorKind::InvalidValue, format!("config {}: {e}", path.display())))?;
        let at = rest
            .iter()
            .skip(1)
            .position(|a| cmd.find_subcommand(a).is_some())
            .map(|i| i + 1);
        if let Some(at) = at {
            let sub = cmd.find_subcommand(&rest[at]).expect("found above").clone();
            let injected = config_flags(&sub, &kv, &rest[at + 1..])
                .map_err(|m| cmd.error(ErrorKind::UnknownArgument, format!("config {}: {m}", path.display())))?;
            rest.splice(at + 1..at + 1, injected);
        }
    }
    let matches = cmd.try_get_matches_from_mut(rest)?;
    Cli::from_arg_matches(&matches).map_err(|e| e.format(&mut cmd))
}

fn take_config(argv: Vec<OsString>) -> (Option<PathBuf>, Vec<OsString>) {
    let mut config = None;
    let mut rest = Vec::with_capacity(argv.len());
    let mut it = argv.into_iter();
    while let Some(a) = it.next() {
        match a.to_str() {
            Some("--config") => match it.next() {
                Some(p) => config = Some(PathBuf::from(p)),
                None => rest.push(a),
            },
            Some(s) if s.starts_with("--config=") => config = Some(PathBuf::from(&s["--config=".len()..])),
            _ => rest.push(a),
        }
    }
    (config, rest)
}

fn config_flags(sub: &clap::Command, kv: &KeyValues, given: &[OsString]) -> Result<Vec<OsString>, String> {
    let mut out = Vec::new();
    for (key, value) in kv.iter() {
        let flag = key.replace('_', "-");
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(flag.as_str()))
            .ok_or_else(|| format!("`{key}` is not a flag of `{}`", sub.get_name()))?;
        let long = format!("--{flag}");
        let overridden = given.iter().any(|g| {
            g.to_str()
                .is_some_and(|g| g == long || g.starts_with(&format!("{long}=")))
        });
        if overridden {
            continue;
        }
        if arg.get_action().takes_values() {
            out.push(OsString::from(format!("{long}={value}")));
        } else {
            match value {
                "true" => out.push(OsString::from(long)),
                "false" => {}
                other => return Err(format!("`{key}` is a switch; expected true or false, got {other:?}")),
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(args: &[&str]) -> Vec<OsString> {
        args.iter().map(OsString::from).collect()
    }

    #[test]
    fn config_entries_become_flags_and_command_line_wins() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        std::fs::write(&path, "# synth\nn = 40\nsignal_strength = 0.5\nout = a\n").unwrap();
        let cli = parse(os(&["culprit", "--config", path.to_str().unwrap(), "synth", "--out", "b"])).unwrap();
        let args::Command::Synth(s) = cli.command else { panic!() };
        assert_eq!((s.n, s.signal_strength), (Some(40), Some(0.5)));
        assert_eq!(s.out, PathBuf::from("b"));
    }

    #[test]
    fn switches_in_config_take_true_or_false() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        std::fs::write(&path, "resample-distractors = true\nshared-word-embedding = false\n").unwrap();
        let cli = parse(os(&["culprit", "train", "--out", "o", "--config", path.to_str().unwrap()])).unwrap();
        let args::Command::Train(t) = cli.command else { panic!() };
        assert!(t.resample_distractors);
        assert!(!t.shared_word_embedding);
    }

    #[test]
    fn unknown_config_key_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        std::fs::write(&path, "bogus = 1\n").unwrap();
        let err = parse(os(&["culprit", "--config", path.to_str().unwrap(), "synth", "--out", "o"])).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
