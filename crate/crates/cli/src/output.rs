use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// One CSV cell.
pub enum Cell {
    F(f64),
    OptF(Option<f64>),
    I(i64),
    S(String),
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

pub fn csv(header: &[&str], rows: &[Vec<Cell>]) -> String {
    let mut out = header.join(",");
    out.push_str("\r\n");
    for row in rows {
        let fields: Vec<String> = row
            .iter()
            .map(|c| match c {
                Cell::F(x) => float(*x),
                Cell::OptF(x) => x.map(float).unwrap_or_default(),
                Cell::I(i) => i.to_string(),
                Cell::S(s) => quote(s),
            })
            .collect();
        let _ = write!(out, "{}\r\n", fields.join(","));
    }
    out
}

pub fn json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub name: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub params: serde_json::Value,
    pub files: Vec<FileDigest>,
}

/// Collects output files and writes them with a manifest.
pub struct Outputs {
    dir: PathBuf,
    files: Vec<(String, String)>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf(), files: Vec::new() }
    }

    pub fn add(&mut self, name: &str, content: String) {
        self.files.push((name.to_string(), content));
    }

    pub fn write(self, command: &str, seed: Option<u64>, params: serde_json::Value) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(&self.dir).with_context(|| format!("creating {}", self.dir.display()))?;
        let mut written = Vec::new();
        let mut digests = Vec::new();
        for (name, content) in &self.files {
            let path = self.dir.join(name);
            fs::write(&path, content).with_context(|| format!("writing {}", path.display()))?;
            digests.push(FileDigest {
                name: name.clone(),
                bytes: content.len(),
                sha256: hex::encode(Sha256::digest(content.as_bytes())),
            });
            written.push(path);
        }
        let manifest = RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            params,
            files: digests,
        };
        let path = self.dir.join(format!("{command}_manifest.json"));
        fs::write(&path, json(&manifest)?).with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_quotes_and_formats() {
        let s = csv(&["a", "b", "c"], &[vec![Cell::F(0.1), Cell::OptF(None), Cell::S("x,y".into())]]);
        assert_eq!(s, "a,b,c\r\n1.0000000000000001e-1,,\"x,y\"\r\n");
    }
}
