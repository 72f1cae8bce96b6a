//! `--config FILE` support: a `key = value` document whose keys are the long
//! flag names of the chosen subcommand. Config entries are spliced in ahead
//! of the command-line flags, so explicit flags win.

use std::ffi::OsString;

use clap::{ArgAction, Command};

#[derive(Debug)]
pub enum ConfigError {
    Read(String, std::io::Error),
    Invalid(String),
}

/// Parses `key = value` lines. Blank lines and lines starting with `#` are
/// skipped.
pub fn parse(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected `key = value`, found `{line}`", i + 1))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(format!("line {}: empty key", i + 1));
        }
        out.push((key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

/// Replaces `--config FILE` in `args` by the flags it describes.
pub fn expand(args: Vec<OsString>, cli: &Command) -> Result<Vec<OsString>, ConfigError> {
    let Some(sub_name) = args.get(1).and_then(|s| s.to_str()) else {
        return Ok(args);
    };
    let Some(sub) = cli.find_subcommand(sub_name) else {
        return Ok(args);
    };
    let mut path = None;
    let mut rest = Vec::new();
    let mut iter = args[2..].iter().cloned();
    while let Some(arg) = iter.next() {
        match arg.to_str() {
            Some("--config") => path = iter.next(),
            Some(s) if s.starts_with("--config=") => path = Some(s["--config=".len()..].into()),
            _ => rest.push(arg),
        }
    }
    let Some(path) = path else {
        return Ok(args);
    };
    let display = path.to_string_lossy().into_owned();
    let text = std::fs::read_to_string(&path).map_err(|e| ConfigError::Read(display.clone(), e))?;
    let entries = parse(&text).map_err(|e| ConfigError::Invalid(format!("{display}: {e}")))?;

    let mut expanded = vec![args[0].clone(), args[1].clone()];
    for (key, value) in entries {
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()) && key != "config")
            .ok_or_else(|| {
                ConfigError::Invalid(format!("{display}: unknown key `{key}` for `{sub_name}`"))
            })?;
        match arg.get_action() {
            ArgAction::SetTrue => match value.as_str() {
                "true" | "yes" | "1" => expanded.push(format!("--{key}").into()),
                "false" | "no" | "0" => {}
                _ => {
                    return Err(ConfigError::Invalid(format!(
                        "{display}: `{key}` expects true or false, found `{value}`"
                    )))
                }
            },
            _ => {
                expanded.push(format!("--{key}").into());
                expanded.push(value.into());
            }
        }
    }
    expanded.extend(rest);
    Ok(expanded)
}
