use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::AudioError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Clean,
    Mixture,
    Noise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub role: Role,
    pub speaker_id: String,
    pub script_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<String>,
}

/// A JSON array of clip entries. Relative paths are resolved against the
/// directory holding the manifest file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClipManifest {
    pub entries: Vec<ManifestEntry>,
}

impl ClipManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self, AudioError> {
        let m = ClipManifest { entries };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), AudioError> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(&e.path) {
                return Err(AudioError::Manifest(format!("duplicate path {}", e.path.display())));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, AudioError> {
        let text = fs::read_to_string(path).map_err(|source| AudioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut m: ClipManifest = serde_json::from_str(&text)
            .map_err(|e| AudioError::Manifest(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        for e in &mut m.entries {
            if e.path.is_relative() {
                e.path = base.join(&e.path);
            }
        }
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), AudioError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| AudioError::Manifest(e.to_string()))?;
        fs::write(path, text).map_err(|source| AudioError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn with_role(&self, role: Role) -> ClipManifest {
        ClipManifest {
            entries: self.entries.iter().filter(|e| e.role == role).cloned().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_the_documented_layout() {
        let text = r#"[
            {"path": "a.wav", "role": "clean", "speaker_id": "f1", "script_id": "s1", "gender": "female"},
            {"path": "/abs/b.wav", "role": "noise", "speaker_id": "", "script_id": ""}
        ]"#;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        fs::write(&p, text).unwrap();
        let m = ClipManifest::load(&p).unwrap();
        assert_eq!(m.entries[0].path, dir.path().join("a.wav"));
        assert_eq!(m.entries[0].gender.as_deref(), Some("female"));
        assert_eq!(m.entries[1].path, PathBuf::from("/abs/b.wav"));
        assert_eq!(m.with_role(Role::Noise).len(), 1);
    }

    #[test]
    fn rejects_unknown_roles_and_duplicates() {
        let bad_role = r#"[{"path": "a.wav", "role": "speech", "speaker_id": "x", "script_id": "y"}]"#;
        assert!(serde_json::from_str::<ClipManifest>(bad_role).is_err());
        let e = ManifestEntry {
            path: "a.wav".into(),
            role: Role::Clean,
            speaker_id: "x".into(),
            script_id: "y".into(),
            gender: None,
        };
        assert!(ClipManifest::new(vec![e.clone(), e]).is_err());
    }
}
