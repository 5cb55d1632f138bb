//! Run directories and their manifests.

use std::path::PathBuf;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::RunConfig;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Serialize)]
struct Output {
    file: String,
    description: String,
}

pub struct RunDir {
    path: PathBuf,
    command: &'static str,
    outputs: Vec<Output>,
    params: Map<String, Value>,
    results: Map<String, Value>,
}

impl RunDir {
    /// Creates `<out>/<timestamp>-seed<seed>`, suffixed `-2`, `-3`, … on collision.
    pub fn create(cfg: &RunConfig, command: &'static str) -> Result<Self> {
        let stamp = chrono::Local::now().format("%Y%m%dT%H%M%S");
        let base = cfg.run.out.join(format!("{stamp}-seed{}", cfg.run.seed));
        std::fs::create_dir_all(&cfg.run.out)
            .with_context(|| format!("creating {}", cfg.run.out.display()))?;
        let mut path = base.clone();
        let mut n = 1;
        loop {
            match std::fs::create_dir(&path) {
                Ok(()) => break,
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    n += 1;
                    path = PathBuf::from(format!("{}-{n}", base.display()));
                }
                Err(e) => return Err(e).with_context(|| format!("creating {}", path.display())),
            }
        }
        Ok(Self {
            path,
            command,
            outputs: Vec::new(),
            params: Map::new(),
            results: Map::new(),
        })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// Records an output already written to `file(name)`.
    pub fn record(&mut self, name: &str, description: impl Into<String>) {
        self.outputs.push(Output {
            file: name.to_string(),
            description: description.into(),
        });
    }

    pub fn write(
        &mut self,
        name: &str,
        bytes: impl AsRef<[u8]>,
        description: impl Into<String>,
    ) -> Result<()> {
        let p = self.file(name);
        std::fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))?;
        self.record(name, description);
        Ok(())
    }

    pub fn param(&mut self, key: &str, value: impl Serialize) {
        self.params.insert(
            key.to_string(),
            serde_json::to_value(value).expect("serializable"),
        );
    }

    pub fn result(&mut self, key: &str, value: impl Serialize) {
        self.results.insert(
            key.to_string(),
            serde_json::to_value(value).expect("serializable"),
        );
    }

    pub fn finish(self, cfg: &RunConfig) -> Result<PathBuf> {
        let manifest = json!({
            "command": self.command,
            "created": chrono::Local::now().to_rfc3339(),
            "config": cfg,
            "parameters": self.params,
            "results": self.results,
            "outputs": self.outputs,
        });
        let p = self.path.join(MANIFEST);
        std::fs::write(&p, serde_json::to_string_pretty(&manifest)? + "\n")
            .with_context(|| format!("writing {}", p.display()))?;
        Ok(self.path)
    }
}
