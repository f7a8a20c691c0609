use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub sha256: String,
    pub bytes: u64,
    pub stage: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageEntry {
    pub config_sha256: String,
    /// Hash of every consumed artifact at the time the stage ran.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

/// Content hashes of every artifact in an output directory, keyed by file
/// name, and the inputs each stage consumed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifacts: BTreeMap<String, ArtifactEntry>,
    pub stages: BTreeMap<String, StageEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> CliResult<(String, u64)> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok((sha256_hex(&bytes), bytes.len() as u64))
}

impl Manifest {
    pub fn load(dir: &Path) -> CliResult<Self> {
        let path = dir.join(MANIFEST);
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, dir: &Path) -> CliResult<()> {
        let path = dir.join(MANIFEST);
        let mut text = serde_json::to_string_pretty(self).map_err(|e| CliError::Internal(e.to_string()))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }

    /// Records a finished stage: hashes its outputs and stores the hashes
    /// its inputs had when it ran. Outputs previously owned by the stage
    /// but not produced this time are dropped.
    pub fn record(
        &mut self,
        dir: &Path,
        stage: &str,
        config_sha256: String,
        inputs: &[&str],
        outputs: &[String],
    ) -> CliResult<()> {
        let mut input_hashes = BTreeMap::new();
        for &name in inputs {
            let (sha, _) = file_sha256(&dir.join(name))?;
            input_hashes.insert(name.to_owned(), sha);
        }
        if let Some(old) = self.stages.get(stage) {
            for name in &old.outputs {
                if !outputs.contains(name) {
                    self.artifacts.remove(name);
                }
            }
        }
        for name in outputs {
            let (sha256, bytes) = file_sha256(&dir.join(name))?;
            self.artifacts.insert(
                name.clone(),
                ArtifactEntry {
                    sha256,
                    bytes,
                    stage: stage.to_owned(),
                },
            );
        }
        self.stages.insert(
            stage.to_owned(),
            StageEntry {
                config_sha256,
                inputs: input_hashes,
                outputs: outputs.to_vec(),
            },
        );
        Ok(())
    }

    /// Checks that `name` still has its recorded hash and that, transitively,
    /// every stage on its provenance chain consumed the current version of
    /// each of its inputs.
    pub fn verify(&self, dir: &Path, name: &str) -> CliResult<()> {
        let entry = self
            .artifacts
            .get(name)
            .ok_or_else(|| CliError::Input(format!("{name} is not recorded in {MANIFEST}")))?;
        let (sha, _) = file_sha256(&dir.join(name))?;
        if sha != entry.sha256 {
            return Err(CliError::Input(format!(
                "{name} changed since stage {} recorded it",
                entry.stage
            )));
        }
        let stage = self
            .stages
            .get(&entry.stage)
            .ok_or_else(|| CliError::Input(format!("stage {} is not recorded in {MANIFEST}", entry.stage)))?;
        for (input, used) in &stage.inputs {
            let current = self
                .artifacts
                .get(input)
                .ok_or_else(|| CliError::Input(format!("{input} is not recorded in {MANIFEST}")))?;
            if &current.sha256 != used {
                return Err(CliError::Input(format!(
                    "stale artifact: {name} was built from an older {input}; rerun stage {}",
                    entry.stage
                )));
            }
            self.verify(dir, input)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn stale_inputs_are_detected() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        std::fs::write(d.join("a"), "1").unwrap();
        let mut m = Manifest::default();
        m.record(d, "make-a", "c".into(), &[], &["a".into()]).unwrap();
        std::fs::write(d.join("b"), "2").unwrap();
        m.record(d, "make-b", "c".into(), &["a"], &["b".into()]).unwrap();
        m.verify(d, "b").unwrap();

        std::fs::write(d.join("a"), "changed").unwrap();
        assert!(m.verify(d, "b").is_err());
        m.record(d, "make-a", "c".into(), &[], &["a".into()]).unwrap();
        let err = m.verify(d, "b").unwrap_err();
        assert!(err.to_string().contains("stale"), "{err}");
    }
}
