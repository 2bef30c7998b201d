//! Content-addressed output directory.
//!
//! Each entry lives in `<root>/<kind>/<hash>/` and holds `params.json`, its
//! data files and `summary.txt`. The hash covers the kind and every file, so
//! identical runs land in the same entry. Entries are built in a temporary
//! directory and renamed into place, and never modified afterwards.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{KhepError, Result};

pub const CATALOG_ENV: &str = "KHEP_CATALOG";
pub const PARAMS_FILE: &str = "params.json";
pub const SUMMARY_FILE: &str = "summary.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    Trajectory,
    Orbit,
    Domain,
    Report,
}

impl EntryKind {
    pub const ALL: [EntryKind; 4] = [
        EntryKind::Trajectory,
        EntryKind::Orbit,
        EntryKind::Domain,
        EntryKind::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntryKind::Trajectory => "trajectory",
            EntryKind::Orbit => "orbit",
            EntryKind::Domain => "domain",
            EntryKind::Report => "report",
        }
    }
}

impl std::str::FromStr for EntryKind {
    type Err = KhepError;

    fn from_str(s: &str) -> Result<Self> {
        EntryKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| KhepError::InvalidArgument(format!("unknown entry kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub kind: EntryKind,
    pub hash: String,
    pub params: serde_json::Value,
    /// File names inside the entry directory, sorted.
    pub files: Vec<String>,
    pub path: PathBuf,
}

#[derive(Debug, Clone)]
pub struct Catalog {
    root: PathBuf,
}

/// Hash of an entry: kind, then each `(name, bytes)` in name order.
pub fn content_hash(kind: EntryKind, files: &[(String, Vec<u8>)]) -> String {
    let mut sorted: Vec<&(String, Vec<u8>)> = files.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let mut h = Sha256::new();
    h.update(kind.as_str().as_bytes());
    for (name, bytes) in sorted {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    hex::encode(h.finalize())[..16].to_string()
}

impl Catalog {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// Root from `KHEP_CATALOG`, else `default`.
    pub fn from_env(default: impl Into<PathBuf>) -> Self {
        match std::env::var_os(CATALOG_ENV) {
            Some(v) if !v.is_empty() => Self::new(v),
            _ => Self::new(default),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Stores an entry. `files` are the data files; `params.json` and
    /// `summary.txt` are added here.
    pub fn write(
        &self,
        kind: EntryKind,
        params: &serde_json::Value,
        files: Vec<(String, Vec<u8>)>,
        summary: &str,
    ) -> Result<CatalogEntry> {
        let mut all = files;
        for (name, _) in &all {
            if name == PARAMS_FILE
                || name == SUMMARY_FILE
                || name.contains(['/', '\\'])
                || name.starts_with('.')
            {
                return Err(KhepError::InvalidArgument(format!(
                    "reserved or invalid file name {name:?}"
                )));
            }
        }
        all.push((PARAMS_FILE.to_string(), serde_json::to_vec_pretty(params)?));
        all.push((SUMMARY_FILE.to_string(), summary.as_bytes().to_vec()));
        let hash = content_hash(kind, &all);
        let dir = self.root.join(kind.as_str());
        fs::create_dir_all(&dir)?;
        let target = dir.join(&hash);
        if !target.exists() {
            let nanos = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_nanos())
                .unwrap_or(0);
            let tmp = dir.join(format!(".tmp-{hash}-{}-{nanos}", std::process::id()));
            fs::create_dir_all(&tmp)?;
            for (name, bytes) in &all {
                fs::write(tmp.join(name), bytes)?;
            }
            if let Err(e) = fs::rename(&tmp, &target) {
                // another writer may have produced the same entry first
                let _ = fs::remove_dir_all(&tmp);
                if !target.exists() {
                    return Err(e.into());
                }
            }
        }
        self.load(kind, &hash)
    }

    fn load(&self, kind: EntryKind, hash: &str) -> Result<CatalogEntry> {
        let path = self.root.join(kind.as_str()).join(hash);
        let params: serde_json::Value = serde_json::from_slice(&fs::read(path.join(PARAMS_FILE))?)?;
        let mut files: Vec<String> = fs::read_dir(&path)?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        files.sort();
        Ok(CatalogEntry {
            kind,
            hash: hash.to_string(),
            params,
            files,
            path,
        })
    }

    pub fn list(&self, kind: Option<EntryKind>) -> Result<Vec<CatalogEntry>> {
        let kinds: Vec<EntryKind> = match kind {
            Some(k) => vec![k],
            None => EntryKind::ALL.to_vec(),
        };
        let mut out = Vec::new();
        for k in kinds {
            let dir = self.root.join(k.as_str());
            if !dir.is_dir() {
                continue;
            }
            let mut names: Vec<String> = fs::read_dir(&dir)?
                .filter_map(|e| e.ok())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .filter(|n| !n.starts_with('.'))
                .collect();
            names.sort();
            for n in names {
                out.push(self.load(k, &n)?);
            }
        }
        Ok(out)
    }

    /// Finds an entry by hash or unique hash prefix.
    pub fn get(&self, hash: &str) -> Result<CatalogEntry> {
        let matches: Vec<CatalogEntry> = self
            .list(None)?
            .into_iter()
            .filter(|e| e.hash.starts_with(hash))
            .collect();
        match matches.len() {
            1 => Ok(matches.into_iter().next().expect("one match")),
            0 => Err(KhepError::InvalidArgument(format!(
                "no catalog entry {hash}"
            ))),
            n => Err(KhepError::InvalidArgument(format!(
                "{n} entries match {hash}"
            ))),
        }
    }

    pub fn read(&self, entry: &CatalogEntry, name: &str) -> Result<Vec<u8>> {
        Ok(fs::read(entry.path.join(name))?)
    }

    /// Recomputes the content hash of an entry.
    pub fn verify(&self, entry: &CatalogEntry) -> Result<bool> {
        let files: Vec<(String, Vec<u8>)> = entry
            .files
            .iter()
            .map(|n| Ok((n.clone(), fs::read(entry.path.join(n))?)))
            .collect::<Result<_>>()?;
        Ok(content_hash(entry.kind, &files) == entry.hash)
    }
}
