//! Flat `key = value` config files. Each key names a long flag of the
//! chosen subcommand; the entries are spliced in ahead of the real
//! command-line arguments so that flags given on the command line win.

use std::ffi::OsString;
use std::fs;

/// Parses config text into `--key value` argument pairs.
pub fn config_args(text: &str) -> Result<Vec<OsString>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
        let key = key.trim().replace('_', "-");
        if key.is_empty() || key == "config" {
            return Err(format!("line {}: invalid key `{}`", i + 1, key));
        }
        let value = value.trim();
        let value = value
            .strip_prefix('"')
            .and_then(|v| v.strip_suffix('"'))
            .unwrap_or(value);
        out.push(OsString::from(format!("--{key}")));
        out.push(OsString::from(value));
    }
    Ok(out)
}

/// Removes `--config <path>` from `args` and splices the file's entries
/// in right after the subcommand name. Usage problems are left for clap to
/// report; only an unreadable or malformed file is an error here.
pub fn expand_config(mut args: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let Some(pos) = args.iter().position(|a| {
        let s = a.to_string_lossy();
        s == "--config" || s.starts_with("--config=")
    }) else {
        return Ok(args);
    };
    let flag = args.remove(pos).to_string_lossy().into_owned();
    let path = match flag.strip_prefix("--config=") {
        Some(p) => OsString::from(p),
        None if pos < args.len() => args.remove(pos),
        None => return Ok(args.into_iter().chain([OsString::from("--config")]).collect()),
    };
    let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.to_string_lossy()))?;
    let extra = config_args(&text).map_err(|e| format!("{}: {e}", path.to_string_lossy()))?;
    let at = 2.min(args.len());
    args.splice(at..at, extra);
    Ok(args)
}
