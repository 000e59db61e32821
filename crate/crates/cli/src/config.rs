//! Flag/config-file merging. A command's flags are serialized to JSON, the
//! optional config file is laid over them key by key, and the result is
//! deserialized back. A run manifest is accepted as a config file: its
//! `config` member is used.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

pub const OUTPUT_ROOT_ENV: &str = "APC_OUTPUT_ROOT";

pub fn resolve<T: Serialize + DeserializeOwned>(from_flags: &T, file: Option<&Path>) -> Result<T> {
    let mut base = serde_json::to_value(from_flags)?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut overlay: Value =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if overlay.get("command").is_some() {
            if let Some(cfg) = overlay.get_mut("config") {
                overlay = cfg.take();
            }
        }
        merge(&mut base, overlay);
    }
    serde_json::from_value(base).context("config does not match the command's options")
}

/// Recursive object merge; non-object values replace.
fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Relative output paths live under the output root when it is set.
pub fn output_dir(out: &Path, root: Option<&Path>) -> PathBuf {
    match root {
        Some(r) if out.is_relative() => r.join(out),
        _ => out.to_path_buf(),
    }
}
