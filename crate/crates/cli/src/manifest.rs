use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use rankgan::checkpoint::{file_sha256, FORMAT_VERSION};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub name: String,
    /// Relative paths resolve against the manifest's directory.
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to repeat a command: its settings, the checksums of
/// what it read and of what it wrote.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub checkpoint_version: u32,
    pub command: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<Artifact>,
    pub artifacts: Vec<Artifact>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: impl IntoIterator<Item = (String, String)>) -> Self {
        RunManifest {
            manifest_version: MANIFEST_VERSION,
            checkpoint_version: FORMAT_VERSION,
            command: command.to_string(),
            seed,
            config: config.into_iter().collect(),
            inputs: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn add_input(&mut self, name: &str, path: &Path) -> Result<()> {
        let abs = std::fs::canonicalize(path).with_context(|| format!("cannot resolve {}", path.display()))?;
        let sha256 = file_sha256(&abs)?;
        self.inputs.push(Artifact { name: name.into(), path: abs, sha256 });
        Ok(())
    }

    /// Records `file` inside `dir`; silently skips files that were not written.
    pub fn add_artifact(&mut self, dir: &Path, name: &str, file: &str) -> Result<()> {
        let p = dir.join(file);
        if p.exists() {
            self.artifacts.push(Artifact { name: name.into(), path: PathBuf::from(file), sha256: file_sha256(&p)? });
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let p = dir.join(MANIFEST_FILE);
        std::fs::write(&p, serde_json::to_string_pretty(self)? + "\n").with_context(|| format!("writing {}", p.display()))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        let m: RunManifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        if m.manifest_version > MANIFEST_VERSION {
            bail!("manifest version {} is newer than supported {MANIFEST_VERSION}", m.manifest_version);
        }
        Ok(m)
    }

    /// Checks that every input and artifact exists with its recorded checksum.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for a in self.inputs.iter().chain(&self.artifacts) {
            let p = if a.path.is_absolute() { a.path.clone() } else { dir.join(&a.path) };
            if !p.exists() {
                bail!("{} ({}) is missing", a.name, p.display());
            }
            if file_sha256(&p)? != a.sha256 {
                bail!("{} ({}) does not match its recorded checksum", a.name, p.display());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_and_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), "one").unwrap();
        let mut m = RunManifest::new("train", 4, [("k".to_string(), "v".to_string())]);
        m.add_artifact(dir.path(), "a", "a.txt").unwrap();
        m.add_artifact(dir.path(), "absent", "b.txt").unwrap();
        assert_eq!(m.artifacts.len(), 1);
        m.save(dir.path()).unwrap();
        let back = RunManifest::load(dir.path()).unwrap();
        assert_eq!(back, m);
        back.verify(dir.path()).unwrap();
        std::fs::write(dir.path().join("a.txt"), "two").unwrap();
        assert!(back.verify(dir.path()).is_err());
        std::fs::remove_file(dir.path().join("a.txt")).unwrap();
        assert!(back.verify(dir.path()).is_err());
    }
}
