//! On-disk study layout and its manifest.
//!
//! ```text
//! <root>/
//!   manifest.toml      every file written by a stage, with SHA-256 and sources
//!   participants.csv   participant profiles
//!   plans/  logs/  eeg/  scored/  reports/
//! ```
//!
//! Stages stage their outputs in a [`Batch`]; nothing on disk changes until
//! every output has been computed, and each file is replaced by rename.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const WORKSPACE_ENV: &str = "OSVS_WORKSPACE";
pub const MANIFEST: &str = "manifest.toml";
pub const PARTICIPANTS: &str = "participants.csv";
pub const DIRS: [&str; 5] = ["plans", "logs", "eeg", "scored", "reports"];

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub participant: Option<String>,
    /// Workspace-relative paths this file was derived from.
    #[serde(default)]
    pub sources: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn get(&self, path: &str) -> Option<&ManifestEntry> {
        self.files.iter().find(|e| e.path == path)
    }

    fn upsert(&mut self, entry: ManifestEntry) {
        let mut by_path: BTreeMap<String, ManifestEntry> =
            self.files.drain(..).map(|e| (e.path.clone(), e)).collect();
        by_path.insert(entry.path.clone(), entry);
        self.files = by_path.into_values().collect();
    }

    /// Every file `path` was derived from, directly or transitively.
    pub fn trace(&self, path: &str) -> Vec<String> {
        let mut seen = std::collections::BTreeSet::new();
        let mut stack = vec![path.to_string()];
        while let Some(p) = stack.pop() {
            for s in self.get(&p).map(|e| e.sources.as_slice()).unwrap_or_default() {
                if seen.insert(s.clone()) {
                    stack.push(s.clone());
                }
            }
        }
        seen.into_iter().collect()
    }
}

#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn exists(&self, rel: &str) -> bool {
        self.path(rel).is_file()
    }

    pub fn read(&self, rel: &str) -> Result<Vec<u8>> {
        let p = self.path(rel);
        fs::read(&p).map_err(|e| CliError::io(&p, e))
    }

    pub fn read_text(&self, rel: &str) -> Result<String> {
        let bytes = self.read(rel)?;
        String::from_utf8(bytes).map_err(|_| CliError::validation(format!("{rel}: not UTF-8")))
    }

    /// Read a file and check it against its manifest hash, if it has one.
    pub fn read_verified(&self, rel: &str) -> Result<Vec<u8>> {
        let bytes = self.read(rel)?;
        if let Some(e) = self.manifest()?.get(rel) {
            let actual = sha256_hex(&bytes);
            if actual != e.sha256 {
                return Err(CliError::Conformance(format!(
                    "{rel} changed since it was recorded (manifest {}, file {actual})",
                    e.sha256
                )));
            }
        }
        Ok(bytes)
    }

    /// Sorted workspace-relative paths in `dir` whose names end in `suffix`.
    pub fn list(&self, dir: &str, suffix: &str) -> Result<Vec<String>> {
        let p = self.path(dir);
        if !p.is_dir() {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for entry in fs::read_dir(&p).map_err(|e| CliError::io(&p, e))? {
            let entry = entry.map_err(|e| CliError::io(&p, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.ends_with(suffix) && !name.starts_with('.') && entry.path().is_file() {
                out.push(format!("{dir}/{name}"));
            }
        }
        out.sort();
        Ok(out)
    }

    pub fn manifest(&self) -> Result<Manifest> {
        if !self.exists(MANIFEST) {
            return Ok(Manifest::default());
        }
        toml::from_str(&self.read_text(MANIFEST)?).map_err(|e| CliError::validation(format!("{MANIFEST}: {e}")))
    }

    /// Files whose content no longer matches the manifest, or are missing.
    pub fn verify(&self) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for e in self.manifest()?.files {
            match fs::read(self.path(&e.path)) {
                Ok(bytes) if sha256_hex(&bytes) == e.sha256 => {}
                _ => bad.push(e.path),
            }
        }
        Ok(bad)
    }

    pub fn batch(&self) -> Batch<'_> {
        Batch {
            ws: self,
            staged: Vec::new(),
        }
    }
}

/// Outputs of one stage. Each file is written to a hidden temporary
/// sibling as it is added; [`Batch::commit`] renames them all into place and
/// rewrites the manifest. Dropping an uncommitted batch discards the
/// temporaries and leaves earlier results untouched.
pub struct Batch<'a> {
    ws: &'a Workspace,
    staged: Vec<(ManifestEntry, PathBuf)>,
}

impl Batch<'_> {
    pub fn add(
        &mut self,
        path: impl Into<String>,
        bytes: impl AsRef<[u8]>,
        kind: &str,
        participant: Option<&str>,
        sources: &[String],
    ) -> Result<()> {
        let path = path.into();
        let bytes = bytes.as_ref();
        let mut sources = sources.to_vec();
        sources.sort();
        sources.dedup();
        let tmp = write_temp(&self.ws.path(&path), bytes)?;
        self.staged.push((
            ManifestEntry {
                path,
                sha256: sha256_hex(bytes),
                kind: kind.to_string(),
                participant: participant.map(str::to_string),
                sources,
            },
            tmp,
        ));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.staged.len()
    }

    pub fn is_empty(&self) -> bool {
        self.staged.is_empty()
    }

    pub fn commit(mut self) -> Result<Vec<ManifestEntry>> {
        let mut manifest = self.ws.manifest()?;
        let staged = std::mem::take(&mut self.staged);
        let mut entries = Vec::with_capacity(staged.len());
        for (entry, tmp) in staged {
            let dest = self.ws.path(&entry.path);
            fs::rename(&tmp, &dest).map_err(|e| CliError::io(&dest, e))?;
            manifest.upsert(entry.clone());
            entries.push(entry);
        }
        let text = toml::to_string(&manifest).expect("manifest serializes");
        let dest = self.ws.path(MANIFEST);
        let tmp = write_temp(&dest, text.as_bytes())?;
        fs::rename(&tmp, &dest).map_err(|e| CliError::io(&dest, e))?;
        Ok(entries)
    }
}

impl Drop for Batch<'_> {
    fn drop(&mut self) {
        for (_, tmp) in &self.staged {
            let _ = fs::remove_file(tmp);
        }
    }
}

fn write_temp(dest: &Path, bytes: &[u8]) -> Result<PathBuf> {
    let dir = dest.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let name = dest.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| CliError::io(&tmp, e))?;
    Ok(tmp)
}
