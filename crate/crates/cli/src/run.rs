//! Output directory bookkeeping and the run manifest.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

use saeoverlap::io::{config_hash, Table};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub status: String,
    pub version: &'static str,
    pub threads: usize,
    pub config_hash: String,
    pub config: Map<String, Value>,
    pub seeds: Vec<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub warnings: Vec<String>,
}

/// `config` minus every `out` key, so the hash does not depend on where
/// results are written.
fn without_out(config: &Map<String, Value>) -> Map<String, Value> {
    config
        .iter()
        .filter(|(k, _)| k.as_str() != "out")
        .map(|(k, v)| match v {
            Value::Object(inner) => (k.clone(), Value::Object(without_out(inner))),
            _ => (k.clone(), v.clone()),
        })
        .collect()
}

pub struct Run {
    pub out: PathBuf,
    pub manifest: RunManifest,
}

impl Run {
    pub fn new(command: &str, out: &Path, config: Map<String, Value>) -> Result<Self, saeoverlap::Error> {
        std::fs::create_dir_all(out).map_err(|e| saeoverlap::Error::Io { path: out.to_path_buf(), source: e })?;
        Ok(Self {
            out: out.to_path_buf(),
            manifest: RunManifest {
                command: command.to_string(),
                status: "running".into(),
                version: env!("CARGO_PKG_VERSION"),
                threads: rayon::current_num_threads(),
                config_hash: config_hash(&without_out(&config)),
                config,
                seeds: Vec::new(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                warnings: Vec::new(),
            },
        })
    }

    pub fn hash(&self) -> &str {
        &self.manifest.config_hash
    }

    pub fn input(&mut self, p: &Path) {
        self.manifest.inputs.push(p.display().to_string());
    }

    /// Registers `name` as an output and returns its full path.
    pub fn output(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        self.manifest.outputs.push(p.display().to_string());
        p
    }

    pub fn table(&mut self, name: &str, t: &Table) -> saeoverlap::Result<()> {
        let p = self.output(name);
        t.write(p)
    }

    pub fn json(&mut self, name: &str, v: &impl Serialize) -> saeoverlap::Result<()> {
        let p = self.output(name);
        let text = serde_json::to_string_pretty(v).expect("serializable") + "\n";
        std::fs::write(&p, text).map_err(|e| saeoverlap::Error::Io { path: p, source: e })
    }

    pub fn warn(&mut self, w: String) {
        eprintln!("warning: {w}");
        self.manifest.warnings.push(w);
    }

    pub fn finish(mut self, status: &str) -> std::io::Result<()> {
        self.manifest.status = status.to_string();
        let text = serde_json::to_string_pretty(&self.manifest).expect("serializable") + "\n";
        std::fs::write(self.out.join(MANIFEST), text)
    }
}
