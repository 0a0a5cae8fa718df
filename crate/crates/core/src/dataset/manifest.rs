use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::RegisterLabel;
use crate::error::{Error, Result};
use crate::image::SpectrogramImage;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub label: RegisterLabel,
}

/// Line-oriented image list: `relative/path.png,<label-code>` per line.
///
/// Blank lines and `#` comments are skipped, except a `# split_seed=<n>` header which
/// sets [`DatasetManifest::split_seed`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub split_seed: u64,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>, split_seed: u64) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, e) in entries.iter().enumerate() {
            if !seen.insert(&e.path) {
                return Err(Error::Manifest {
                    line: i + 1,
                    reason: format!("duplicate path {}", e.path.display()),
                });
            }
        }
        Ok(Self { entries, split_seed })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut split_seed = 0;
        let mut seen = HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let lineno = n + 1;
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(v) = comment.trim().strip_prefix("split_seed=") {
                    split_seed = v.trim().parse().map_err(|_| Error::Manifest {
                        line: lineno,
                        reason: format!("bad split_seed `{v}`"),
                    })?;
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let (path, code) = line.rsplit_once(',').ok_or_else(|| Error::Manifest {
                line: lineno,
                reason: "expected `path,label`".into(),
            })?;
            let code: u8 = code.trim().parse().map_err(|_| Error::Manifest {
                line: lineno,
                reason: format!("bad label `{}`", code.trim()),
            })?;
            let label = RegisterLabel::from_code(code).map_err(|e| Error::Manifest {
                line: lineno,
                reason: e.to_string(),
            })?;
            let path = PathBuf::from(path.trim());
            if path.as_os_str().is_empty() || path.is_absolute() {
                return Err(Error::Manifest {
                    line: lineno,
                    reason: "path must be non-empty and relative".into(),
                });
            }
            if !seen.insert(path.clone()) {
                return Err(Error::Manifest {
                    line: lineno,
                    reason: format!("duplicate path {}", path.display()),
                });
            }
            entries.push(ManifestEntry { path, label });
        }
        Ok(Self { entries, split_seed })
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# split_seed={}\n", self.split_seed);
        for e in &self.entries {
            // manifests always use forward slashes
            let p = e.path.to_string_lossy().replace('\\', "/");
            let _ = writeln!(out, "{p},{}", e.label.code());
        }
        out
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn labels(&self) -> Vec<RegisterLabel> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// Loads every image, resolving paths against `root`.
    pub fn load_images<T: Scalar>(&self, root: impl AsRef<Path>) -> Result<Vec<SpectrogramImage<T>>> {
        let root = root.as_ref();
        self.entries
            .iter()
            .map(|e| SpectrogramImage::read_png(root.join(&e.path)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trip() {
        let text = "# split_seed=42\n0/0000.png,0\n\n# note\n3/0001.png,3\n";
        let m = DatasetManifest::parse(text).unwrap();
        assert_eq!(m.split_seed, 42);
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.entries[1].label, RegisterLabel::Head);
        assert_eq!(DatasetManifest::parse(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn rejects_bad_lines() {
        for bad in ["a.png", "a.png,4", "a.png,x", "a.png,1\na.png,2", "/abs.png,1", ",1"] {
            assert!(matches!(DatasetManifest::parse(bad), Err(Error::Manifest { .. })), "{bad}");
        }
    }
}
