//! Run manifests: what was run, on which inputs, producing which files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use roadhazard::eval::sha256_hex;
use serde::Serialize;
use serde_json::Value;

#[derive(Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: Value,
    pub seeds: BTreeMap<String, u64>,
    /// Input path as given, mapped to its SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output path relative to the run directory, mapped to its SHA-256.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &'static str, config: Value) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            config,
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> roadhazard::Result<()> {
        self.inputs.insert(path.display().to_string(), sha256_hex(&std::fs::read(path)?));
        Ok(())
    }

    /// Hashes every file under `dir` except the manifest itself, in sorted order.
    pub fn write(mut self, dir: &Path) -> roadhazard::Result<()> {
        let mut files = Vec::new();
        collect_files(dir, dir, &mut files)?;
        files.sort();
        for rel in files {
            if rel == Path::new(MANIFEST) {
                continue;
            }
            let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            self.outputs.insert(key, sha256_hex(&std::fs::read(dir.join(&rel))?));
        }
        let mut text = serde_json::to_string_pretty(&self)?;
        text.push('\n');
        std::fs::write(dir.join(MANIFEST), text)?;
        Ok(())
    }
}

pub const MANIFEST: &str = "manifest.json";

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if let Ok(rel) = path.strip_prefix(root) {
            out.push(rel.to_path_buf());
        }
    }
    Ok(())
}
