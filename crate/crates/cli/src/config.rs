//! `--config` files and the resolved-configuration echo.
//!
//! A config file holds `key=value` lines whose keys are long flag names;
//! blank lines and `#` comments are skipped. Values fill in flags absent
//! from the command line.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::Path;

use clap::{ArgAction, ArgMatches, Command};

use crate::failure::Failure;

fn takes_value(arg: &clap::Arg) -> bool {
    arg.get_num_args().is_none_or(|n| n.takes_values())
        && !matches!(arg.get_action(), ArgAction::SetTrue | ArgAction::SetFalse | ArgAction::Count | ArgAction::Help | ArgAction::Version)
}

fn find_long<'a>(cmd: &'a Command, name: &str) -> Option<&'a clap::Arg> {
    cmd.get_arguments().find(|a| a.get_long() == Some(name))
}

/// Path given to `--config`, if any.
fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            return None;
        }
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(v.into());
        }
    }
    None
}

/// First token that is neither an option nor an option's value.
fn subcommand_name(cmd: &Command, args: &[OsString]) -> Option<String> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if let Some(long) = s.strip_prefix("--") {
            if !long.contains('=') && find_long(cmd, long).is_some_and(takes_value) {
                it.next();
            }
        } else if !s.starts_with('-') {
            return Some(s.into_owned());
        }
    }
    None
}

pub fn parse_config(text: &str, source: &Path) -> Result<Vec<(String, String)>, Failure> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Failure::Usage(format!("{}:{}: expected key=value", source.display(), i + 1)));
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Appends config-file values for flags not already on the command line.
pub fn merge_config_file(cmd: &mut Command, mut args: Vec<OsString>) -> Result<Vec<OsString>, Failure> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let path = Path::new(&path).to_path_buf();
    let text = std::fs::read_to_string(&path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let entries = parse_config(&text, &path)?;
    cmd.build();
    let sub = subcommand_name(cmd, &args)
        .and_then(|name| cmd.find_subcommand(&name).cloned())
        .ok_or_else(|| Failure::Usage("--config needs a subcommand".into()))?;
    let present = |key: &str, args: &[OsString]| {
        let flag = format!("--{key}");
        args.iter().any(|a| {
            let s = a.to_string_lossy();
            s == flag || s.starts_with(&format!("{flag}="))
        })
    };
    for (key, value) in entries {
        let Some(arg) = find_long(&sub, &key) else {
            return Err(Failure::Usage(format!(
                "{}: unknown key '{key}' for '{}'",
                path.display(),
                sub.get_name()
            )));
        };
        if key == "config" || present(&key, &args) {
            continue;
        }
        if takes_value(arg) {
            args.push(format!("--{key}={value}").into());
        } else {
            match value.as_str() {
                "true" => args.push(format!("--{key}").into()),
                "false" => {}
                _ => return Err(Failure::Usage(format!("{}: '{key}' must be true or false", path.display()))),
            }
        }
    }
    Ok(args)
}

/// Every flag of the subcommand with its resolved value, in a form that can
/// be fed back through `--config`. Positional arguments are listed as
/// comments.
pub fn resolved_echo(sub: &Command, matches: &ArgMatches) -> String {
    let mut out = format!("# collabres {} {}\n", sub.get_name(), env!("CARGO_PKG_VERSION"));
    for arg in sub.get_arguments() {
        let id = arg.get_id().as_str();
        if matches!(arg.get_action(), ArgAction::Help | ArgAction::Version | ArgAction::Count) || id == "config" {
            continue;
        }
        let value = match matches.try_get_raw(id) {
            Ok(Some(raw)) => raw.map(|v| v.to_string_lossy().into_owned()).collect::<Vec<_>>().join(","),
            _ => continue,
        };
        match arg.get_long() {
            Some(long) => {
                let _ = writeln!(out, "{long}={value}");
            }
            None => {
                let _ = writeln!(out, "# {id}={value}");
            }
        }
    }
    out
}
