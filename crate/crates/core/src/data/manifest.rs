//! Line-delimited dataset manifest (`path<TAB>label<TAB>split`) with a JSON
//! sidecar carrying class names and provenance.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{LcrError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = LcrError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(LcrError::Data(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    /// Absolute, or relative to the manifest's directory.
    pub path: PathBuf,
    pub label: usize,
    pub split: Split,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    class_names: Vec<String>,
    provenance: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub records: Vec<Record>,
    pub class_names: Vec<String>,
    pub provenance: String,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
}

/// Sidecar location: the manifest path with a `.json` extension.
pub fn sidecar_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("json")
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if r.label >= self.class_names.len() {
                return Err(LcrError::Data(format!(
                    "{}: label {} outside {} classes",
                    r.path.display(),
                    r.label,
                    self.class_names.len()
                )));
            }
            if !seen.insert(&r.path) {
                return Err(LcrError::Data(format!("duplicate path {}", r.path.display())));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, r: &Record) -> PathBuf {
        if r.path.is_absolute() {
            r.path.clone()
        } else {
            self.base_dir.join(&r.path)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// Per-class counts `[train, val, test]`.
    pub fn class_counts(&self) -> Vec<[usize; 3]> {
        let mut out = vec![[0; 3]; self.class_names.len()];
        for r in &self.records {
            out[r.label][r.split as usize] += 1;
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.validate()?;
        let mut tsv = String::new();
        for r in &self.records {
            let p = r.path.to_str().ok_or_else(|| {
                LcrError::Data(format!("non-UTF-8 path {}", r.path.display()))
            })?;
            if p.contains(['\t', '\n']) {
                return Err(LcrError::Data(format!("path {p:?} contains a tab or newline")));
            }
            tsv.push_str(&format!("{p}\t{}\t{}\n", r.label, r.split));
        }
        std::fs::write(path, tsv)?;
        let sidecar = Sidecar {
            class_names: self.class_names.clone(),
            provenance: self.provenance.clone(),
        };
        let json = serde_json::to_string_pretty(&sidecar)
            .map_err(|e| LcrError::Data(format!("sidecar encoding: {e}")))?;
        std::fs::write(sidecar_path(path), json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| LcrError::Data(format!("{}: {e}", path.display())))?;
        let side = sidecar_path(path);
        let sidecar: Sidecar = serde_json::from_str(
            &std::fs::read_to_string(&side)
                .map_err(|e| LcrError::Data(format!("{}: {e}", side.display())))?,
        )
        .map_err(|e| LcrError::Data(format!("{}: {e}", side.display())))?;
        let mut records = Vec::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(LcrError::Data(format!(
                    "{}:{}: expected 3 tab-separated fields",
                    path.display(),
                    n + 1
                )));
            }
            records.push(Record {
                path: PathBuf::from(f[0]),
                label: f[1].parse().map_err(|_| {
                    LcrError::Data(format!("{}:{}: bad label {:?}", path.display(), n + 1, f[1]))
                })?,
                split: f[2].parse()?,
            });
        }
        let m = Self {
            records,
            class_names: sidecar.class_names,
            provenance: sidecar.provenance,
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        m.validate()?;
        Ok(m)
    }
}
