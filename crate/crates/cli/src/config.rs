//! `--config` overlay: a `key = value` file whose keys mirror flag names.
//! Flags given on the command line win over the file.

use std::ffi::OsString;
use std::path::Path;

use crate::CliError;

fn flag_name(arg: &str) -> Option<&str> {
    let rest = arg.strip_prefix("--")?;
    Some(rest.split_once('=').map_or(rest, |(k, _)| k))
}

pub fn parse_file(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("--config: cannot read {}: {e}", path.display())))?;
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::validation(format!("--config: line {} is not `key = value`", n + 1)))?;
        let key = k.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() {
            return Err(CliError::validation(format!(
                "--config: line {} has an empty key",
                n + 1
            )));
        }
        let value = v.trim().trim_matches('"').to_string();
        pairs.push((key, value));
    }
    Ok(pairs)
}

/// Removes `--config FILE` from `args` and appends the file's settings for
/// every flag not already present.
pub fn overlay(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let mut out = Vec::with_capacity(args.len());
    let mut config = None;
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        match a.to_str() {
            Some("--config") => {
                let path = it
                    .next()
                    .ok_or_else(|| CliError::validation("--config: missing file path"))?;
                config = Some(path);
            }
            Some(s) if s.starts_with("--config=") => config = Some(OsString::from(&s["--config=".len()..])),
            _ => out.push(a),
        }
    }
    let Some(path) = config else {
        return Ok(out);
    };
    let present: Vec<String> = out
        .iter()
        .filter_map(|a| a.to_str().and_then(flag_name).map(str::to_string))
        .collect();
    for (key, value) in parse_file(Path::new(&path))? {
        if present.contains(&key) {
            continue;
        }
        match value.as_str() {
            "true" => out.push(format!("--{key}").into()),
            "false" => {}
            _ => {
                out.push(format!("--{key}").into());
                out.push(value.into());
            }
        }
    }
    Ok(out)
}
