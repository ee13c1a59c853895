use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "run-manifest.json";

/// What a run read and wrote, enough to repeat it.
#[derive(Debug, Default)]
pub struct Manifest {
    pub command: String,
    pub args: Vec<String>,
    pub seed: Option<u64>,
    pub config: BTreeMap<String, String>,
    inputs: Vec<(String, String)>,
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

/// SHA-256 of a file, or of a directory's relative paths and contents in
/// sorted order. Run manifests in the directory are skipped.
pub fn digest(path: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, &mut files)?;
        files.retain(|f| f.file_name().is_none_or(|n| n != MANIFEST_NAME));
        files.sort();
        for f in files {
            let rel = f.strip_prefix(path).unwrap_or(&f);
            hasher.update(rel.to_string_lossy().as_bytes());
            hasher.update([0]);
            hasher.update(fs::read(&f).with_context(|| format!("reading {}", f.display()))?);
            hasher.update([0]);
        }
    } else {
        hasher.update(fs::read(path).with_context(|| format!("reading {}", path.display()))?);
    }
    Ok(hex::encode(hasher.finalize()))
}

impl Manifest {
    pub fn new(command: &str, args: &[String]) -> Self {
        Self {
            command: command.to_string(),
            args: args.to_vec(),
            ..Self::default()
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let d = digest(path)?;
        self.inputs.push((path.display().to_string(), d));
        Ok(())
    }

    /// Writes the manifest, with digests of `outputs` (relative to `out_dir`).
    pub fn write(&self, out_dir: &Path, outputs: &[&str]) -> Result<()> {
        let mut outs = Vec::new();
        for name in outputs {
            outs.push(json!({ "path": name, "sha256": digest(&out_dir.join(name))? }));
        }
        let doc = json!({
            "tool": "occ-forecast",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "args": self.args,
            "seed": self.seed,
            "config": self.config,
            "inputs": self.inputs.iter().map(|(p, d)| json!({ "path": p, "sha256": d })).collect::<Vec<Value>>(),
            "outputs": outs,
        });
        let path = out_dir.join(MANIFEST_NAME);
        fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}
