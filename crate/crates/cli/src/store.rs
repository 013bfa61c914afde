//! The artifact store: one directory per pipeline, written atomically and
//! indexed by `MANIFEST.json`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::hex;

pub const STORE_ENV: &str = "IDFORGE_STORE";
pub const DEFAULT_STORE: &str = "idforge-store";
pub const MANIFEST: &str = "MANIFEST.json";
pub const TOOL: &str = "idforge";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// `--out`, then `IDFORGE_STORE`, then the config file, then `./idforge-store`.
pub fn store_root(flag: Option<&Path>, config: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(STORE_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    config.map_or_else(|| PathBuf::from(DEFAULT_STORE), Path::to_path_buf)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub command: String,
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: BTreeMap<String, ManifestEntry>,
}

pub struct Store {
    root: PathBuf,
    manifest: Manifest,
    config_hash: String,
    seed: u64,
}

impl Store {
    pub fn open(root: PathBuf, config_hash: String, seed: u64) -> Result<Self> {
        fs::create_dir_all(&root).with_context(|| format!("cannot create store {}", root.display()))?;
        let mp = root.join(MANIFEST);
        let manifest = match fs::read(&mp) {
            Ok(b) => serde_json::from_slice(&b).with_context(|| format!("corrupt {}", mp.display()))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Manifest::default(),
            Err(e) => return Err(e).with_context(|| format!("cannot read {}", mp.display())),
        };
        Ok(Self {
            root,
            manifest,
            config_hash,
            seed,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    /// Path of a stage input, or an error naming the command that makes it.
    pub fn require(&self, name: &str, producer: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if !p.is_file() {
            bail!("missing {}; run `idforge {producer}` first", p.display());
        }
        Ok(p)
    }

    /// Serializes into memory, then writes `name` via temp file and rename.
    pub fn write_with<F>(&mut self, name: &str, command: &str, f: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write_bytes(name, command, &buf)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, command: &str, value: &T) -> Result<PathBuf> {
        self.write_with(name, command, |b| {
            serde_json::to_writer_pretty(&mut *b, value)?;
            b.push(b'\n');
            Ok(())
        })
    }

    pub fn write_bytes(&mut self, name: &str, command: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        atomic_write(&path, bytes)?;
        self.manifest.files.insert(
            name.to_string(),
            ManifestEntry {
                command: command.to_string(),
                tool: TOOL.into(),
                version: VERSION.into(),
                config_hash: self.config_hash.clone(),
                seed: self.seed,
                sha256: hex(&Sha256::digest(bytes)),
                bytes: bytes.len() as u64,
            },
        );
        Ok(path)
    }

    pub fn save_manifest(&self) -> Result<()> {
        let mut b = serde_json::to_vec_pretty(&self.manifest)?;
        b.push(b'\n');
        atomic_write(&self.path(MANIFEST), &b)
    }
}

pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("cannot write in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .map_err(|e| e.error)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_are_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Store::open(dir.path().join("s"), "h".into(), 3).unwrap();
        s.write_bytes("a.txt", "test", b"abc").unwrap();
        s.save_manifest().unwrap();
        assert_eq!(fs::read(s.path("a.txt")).unwrap(), b"abc");
        let again = Store::open(dir.path().join("s"), "h".into(), 3).unwrap();
        let e = &again.manifest().files["a.txt"];
        assert_eq!(e.sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(e.seed, 3);
        assert!(again.require("a.txt", "x").is_ok());
        let err = again.require("b.txt", "pairs").unwrap_err().to_string();
        assert!(err.contains("idforge pairs"), "{err}");
    }
}
