//! `key=value` configuration files layered under command-line flags.
//!
//! Values from `--config FILE` are spliced into the argument list ahead of
//! the user's own flags. Every subcommand lets a later flag override an
//! earlier one, so the precedence is defaults < config file < flags.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{ArgAction, Command};
use esl::formats::parse_key_values;

use crate::CliError;

/// Position and value of the first `--config` flag.
fn find_config(args: &[OsString]) -> Result<Option<(usize, usize, PathBuf)>, CliError> {
    for (i, a) in args.iter().enumerate() {
        let Some(s) = a.to_str() else { continue };
        if s == "--" {
            break;
        }
        if s == "--config" {
            let v = args.get(i + 1).ok_or_else(|| CliError::Usage("--config needs a file".into()))?;
            return Ok(Some((i, 2, PathBuf::from(v))));
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Ok(Some((i, 1, PathBuf::from(v))));
        }
    }
    Ok(None)
}

/// Expands `--config FILE` into the flags it defines for the chosen
/// subcommand. Keys the subcommand does not accept are reported and skipped.
pub fn expand(cmd: &Command, mut args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let Some((at, width, path)) = find_config(&args)? else { return Ok(args) };
    args.drain(at..at + width);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let pairs = parse_key_values(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    let sub_pos = args.iter().skip(1).position(|a| a.to_str().is_some_and(|s| cmd.find_subcommand(s).is_some()));
    let Some(sub_pos) = sub_pos.map(|p| p + 1) else { return Ok(args) };
    let sub = cmd.find_subcommand(args[sub_pos].to_str().unwrap_or_default()).expect("found above");
    let mut injected = Vec::new();
    for (key, value) in pairs {
        let long = key.replace('_', "-");
        let found = sub.get_arguments().chain(cmd.get_arguments()).find(|a| a.get_long() == Some(long.as_str()));
        let Some(arg) = found else {
            eprintln!("note: config key `{key}` is not used by `{}`", sub.get_name());
            continue;
        };
        match arg.get_action() {
            ArgAction::SetTrue => match value.as_str() {
                "true" | "1" | "yes" => injected.push(OsString::from(format!("--{long}"))),
                "false" | "0" | "no" => {}
                _ => return Err(CliError::Usage(format!("config key `{key}` expects true or false, got `{value}`"))),
            },
            _ => {
                injected.push(OsString::from(format!("--{long}")));
                injected.push(OsString::from(value));
            }
        }
    }
    args.splice(sub_pos + 1..sub_pos + 1, injected);
    Ok(args)
}
