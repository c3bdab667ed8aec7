//! `--config` files: JSON objects whose keys are long flag names. Values
//! are spliced into the argument list unless the flag is already present.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use serde_json::Value;

const SUBCOMMANDS: [&str; 6] = ["gen", "extract", "train", "select", "apply", "eval"];

fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

/// Returns `args` with values from the config file filled in.
pub fn expand(args: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let root: Value =
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    // Run manifests keep the resolved flags under "config".
    let map = match root.get("config") {
        Some(Value::Object(m)) if root.get("command").is_some() => m.clone(),
        _ => match root {
            Value::Object(m) => m,
            _ => return Err(format!("{}: expected a JSON object", path.display())),
        },
    };
    let Some(sub_at) = args
        .iter()
        .position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref()))
    else {
        return Ok(args);
    };
    let given = |flag: &str| {
        args.iter().any(|a| {
            let s = a.to_string_lossy();
            s == flag || s.starts_with(&format!("{flag}="))
        })
    };
    let has_positional = args[sub_at + 1..]
        .iter()
        .any(|a| !a.to_string_lossy().starts_with("--"));

    let mut extra: Vec<OsString> = Vec::new();
    let mut positional: Vec<OsString> = Vec::new();
    for (key, value) in &map {
        let name = key.replace('_', "-");
        if name == "inputs" {
            if !has_positional {
                if let Value::Array(items) = value {
                    positional.extend(items.iter().filter_map(scalar).map(OsString::from));
                }
            }
            continue;
        }
        if name == "config" || name == "manifest" {
            continue;
        }
        let flag = format!("--{name}");
        if given(&flag) {
            continue;
        }
        match value {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => extra.push(flag.into()),
            Value::Array(items) => {
                if items.is_empty() {
                    continue;
                }
                let parts: Option<Vec<String>> = items.iter().map(scalar).collect();
                let parts = parts.ok_or_else(|| format!("config key '{key}': nested values"))?;
                extra.push(flag.into());
                extra.push(parts.join(",").into());
            }
            Value::Object(_) => return Err(format!("config key '{key}': nested objects")),
            v => {
                extra.push(flag.into());
                extra.push(scalar(v).expect("scalar").into());
            }
        }
    }
    let mut out: Vec<OsString> = args[..=sub_at].to_vec();
    out.extend(extra);
    out.extend(args[sub_at + 1..].iter().cloned());
    if !positional.is_empty() {
        out.push("--".into());
        out.extend(positional);
    }
    Ok(out)
}
