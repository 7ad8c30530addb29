//! Deterministic output files: CSV bodies with 17-significant-digit floats
//! ('.' decimal, no locale) plus one JSONL metadata line per run. Every file
//! opens with its producing config hash, so artifacts are traceable and
//! byte-identical across reruns with the same argv and seed.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;
use sha2::{Digest, Sha256};

pub fn fmt_float(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        // keep integers readable while staying locale-free
        format!("{v:.1}")
    } else {
        format!("{v:.16e}")
    }
}

pub struct OutputDir {
    dir: PathBuf,
    config_hash: String,
}

impl OutputDir {
    pub fn create(dir: &Path, resolved_config: &serde_json::Value) -> Result<Self, String> {
        fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
        let canonical = serde_json::to_string(resolved_config)
            .map_err(|e| format!("config serialization: {e}"))?;
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        let config_hash = format!("{:x}", hasher.finalize());
        Ok(Self {
            dir: dir.to_path_buf(),
            config_hash,
        })
    }

    pub fn hash(&self) -> &str {
        &self.config_hash
    }

    pub fn write_csv(&self, name: &str, header: &str, rows: &[String]) -> Result<PathBuf, String> {
        let path = self.dir.join(name);
        let mut body = String::new();
        body.push_str(&format!("# config_hash={}\n", self.config_hash));
        body.push_str(header);
        body.push('\n');
        for row in rows {
            body.push_str(row);
            body.push('\n');
        }
        fs::write(&path, body).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
        Ok(path)
    }

    pub fn write_jsonl(&self, name: &str, lines: &[serde_json::Value]) -> Result<PathBuf, String> {
        let path = self.dir.join(name);
        let mut body = String::new();
        for line in lines {
            body.push_str(&line.to_string());
            body.push('\n');
        }
        fs::write(&path, body).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
        Ok(path)
    }

    /// One metadata line: command, resolved config echo, seed, hash, version.
    pub fn write_metadata(
        &self,
        command: &str,
        resolved_config: &serde_json::Value,
        seed: u64,
    ) -> Result<PathBuf, String> {
        let line = json!({
            "command": command,
            "config": resolved_config,
            "seed": seed,
            "config_hash": self.config_hash,
            "version": format!("fluctlab {}", env!("CARGO_PKG_VERSION")),
        });
        self.write_jsonl("metadata.jsonl", &[line])
    }
}
