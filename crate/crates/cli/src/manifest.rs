use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub name: String,
    pub path: PathBuf,
}

/// Record of what a run consumed, written before any training starts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub dataset: DatasetRef,
    pub seeds: Vec<u64>,
    pub extra: BTreeMap<String, String>,
    pub input_hash: String,
    pub out_dir: PathBuf,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
        write!(s, "{b:02x}").expect("string write");
        s
    })
}

/// Git-style object hash: sha256 of `blob <len>\0<content>`.
fn blob_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex(&h.finalize())
}

/// Hash over every dataset file (sorted by name), the resolved config, the
/// command, seeds and any extra arguments.
pub fn input_hash(
    command: &str,
    dataset_dir: &Path,
    config_text: &str,
    seeds: &[u64],
    extra: &BTreeMap<String, String>,
) -> Result<String> {
    let mut files: Vec<PathBuf> = fs::read_dir(dataset_dir)
        .with_context(|| format!("reading dataset directory {}", dataset_dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.is_file());
    files.sort();

    let mut tree = String::new();
    for f in &files {
        let bytes = fs::read(f).with_context(|| format!("reading {}", f.display()))?;
        let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        writeln!(tree, "{} {name}", blob_hash(&bytes))?;
    }
    writeln!(tree, "{} config", blob_hash(config_text.as_bytes()))?;
    writeln!(tree, "command {command}")?;
    writeln!(tree, "seeds {seeds:?}")?;
    for (k, v) in extra {
        writeln!(tree, "{k} {v}")?;
    }
    Ok(blob_hash(tree.as_bytes()))
}

impl RunManifest {
    pub fn default_out_dir(&self) -> PathBuf {
        PathBuf::from("runs").join(format!("{}-{}-{}", self.command, self.dataset.name, &self.input_hash[..12]))
    }

    /// Creates the output directory and writes `manifest.json`. An existing
    /// manifest with a different input hash is refused rather than mixed.
    pub fn write(&self) -> Result<()> {
        fs::create_dir_all(&self.out_dir).with_context(|| format!("creating {}", self.out_dir.display()))?;
        let path = self.out_dir.join("manifest.json");
        if path.exists() {
            let old: RunManifest = serde_json::from_str(&fs::read_to_string(&path)?)
                .with_context(|| format!("reading existing {}", path.display()))?;
            if old.input_hash != self.input_hash {
                bail!(
                    "output directory {} holds a different run (input hash {}); choose another --out",
                    self.out_dir.display(),
                    old.input_hash
                );
            }
        }
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_matches_git_object_format() {
        // printf 'blob 0\0' | sha256sum
        assert_eq!(blob_hash(b""), "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813");
    }

    #[test]
    fn hash_tracks_inputs() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("X_A.txt"), "1, 2\n").unwrap();
        let extra = BTreeMap::new();
        let h1 = input_hash("train", dir.path(), "k = 1\n", &[0], &extra).unwrap();
        assert_eq!(h1, input_hash("train", dir.path(), "k = 1\n", &[0], &extra).unwrap());
        assert_ne!(h1, input_hash("train", dir.path(), "k = 2\n", &[0], &extra).unwrap());
        assert_ne!(h1, input_hash("train", dir.path(), "k = 1\n", &[1], &extra).unwrap());
        fs::write(dir.path().join("X_A.txt"), "1, 3\n").unwrap();
        assert_ne!(h1, input_hash("train", dir.path(), "k = 1\n", &[0], &extra).unwrap());
    }
}
