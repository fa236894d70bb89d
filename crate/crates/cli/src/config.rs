//! Settings resolution: command-line flags over the `--config` file over
//! built-in defaults.
//!
//! The config file is TOML with one table per subcommand:
//!
//! ```toml
//! [train]
//! latents = 256
//! steps = 20000
//! ```

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

pub fn resolve<S>(section: &str, file: Option<&Path>, flags: &impl Serialize) -> Result<S, CliError>
where
    S: Serialize + DeserializeOwned + Default,
{
    let mut merged = serde_json::to_value(S::default()).expect("defaults serialize");
    if let Some(path) = file {
        let text =
            std::fs::read_to_string(path).map_err(|e| saeoverlap::Error::Io { path: path.to_path_buf(), source: e })?;
        let doc: toml::Table =
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        if let Some(table) = doc.get(section) {
            let v = serde_json::to_value(table).expect("toml maps to json");
            if !v.is_object() {
                return Err(CliError::Usage(format!("{}: [{section}] must be a table", path.display())));
            }
            overlay(&mut merged, v);
        }
    }
    overlay(&mut merged, serde_json::to_value(flags).expect("flags serialize"));
    serde_json::from_value(merged).map_err(|e| CliError::Usage(format!("{section} settings: {e}")))
}

/// Recursively copies the non-null entries of `top` over `base`.
fn overlay(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                if v.is_null() {
                    continue;
                }
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => overlay(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) if !t.is_null() => *b = t,
        _ => {}
    }
}

/// Settings as echoed into manifests: a JSON object.
pub fn echo(settings: &impl Serialize) -> Map<String, Value> {
    match serde_json::to_value(settings).expect("settings serialize") {
        Value::Object(m) => m,
        other => Map::from_iter([("value".to_string(), other)]),
    }
}
