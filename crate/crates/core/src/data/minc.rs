//! MINC-2500 ingestion: `categories.txt`, `images/<class>/…`, and the
//! `labels/{train,validate,test}<k>.txt` split listings.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use super::manifest::{DatasetManifest, Record, Split};
use crate::error::{LcrError, Result};

pub const MINC_CLASSES: usize = 23;
/// Per-class train/validation/test counts of the official splits.
pub const MINC_SPLIT_COUNTS: [usize; 3] = [2125, 125, 250];

/// Ingest result plus non-fatal observations (e.g. a partial dataset).
#[derive(Clone, Debug)]
pub struct Ingest {
    pub manifest: DatasetManifest,
    pub warnings: Vec<String>,
}

fn listing_name(split: Split, fold: usize) -> String {
    let stem = match split {
        Split::Train => "train",
        Split::Val => "validate",
        Split::Test => "test",
    };
    format!("{stem}{fold}.txt")
}

/// Reads a MINC-2500 tree using split `fold` (1 for the standard split).
pub fn ingest_minc(root: impl AsRef<Path>, fold: usize) -> Result<Ingest> {
    let root = root
        .as_ref()
        .canonicalize()
        .map_err(|e| LcrError::Data(format!("{}: {e}", root.as_ref().display())))?;
    let cats_path = root.join("categories.txt");
    let cats = fs::read_to_string(&cats_path)
        .map_err(|e| LcrError::Data(format!("cannot read {}: {e}", cats_path.display())))?;
    let class_names: Vec<String> = cats
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    if class_names.is_empty() {
        return Err(LcrError::Data(format!("{} lists no classes", cats_path.display())));
    }
    let index: HashMap<&str, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for split in Split::ALL {
        let path = root.join("labels").join(listing_name(split, fold));
        let text = fs::read_to_string(&path)
            .map_err(|e| LcrError::Data(format!("cannot read {}: {e}", path.display())))?;
        for (n, line) in text.lines().enumerate() {
            let rel = line.trim();
            if rel.is_empty() {
                continue;
            }
            // images/<class>/<file>
            let class = rel
                .split('/')
                .nth(1)
                .filter(|_| rel.starts_with("images/") && rel.matches('/').count() == 2)
                .ok_or_else(|| {
                    LcrError::Data(format!("{}:{}: malformed entry {rel:?}", path.display(), n + 1))
                })?;
            let label = *index.get(class).ok_or_else(|| {
                LcrError::Data(format!("{}:{}: unknown class {class:?}", path.display(), n + 1))
            })?;
            if !seen.insert(rel.to_string()) {
                return Err(LcrError::Data(format!("{rel} is listed more than once")));
            }
            records.push(Record { path: root.join(rel), label, split });
        }
    }
    if records.is_empty() {
        return Err(LcrError::Data(format!("no records under {}", root.display())));
    }

    let manifest = DatasetManifest {
        records,
        class_names,
        provenance: format!("MINC-2500 split {fold} from {}", root.display()),
        base_dir: root.clone(),
    };
    manifest.validate()?;

    let mut warnings = Vec::new();
    if manifest.class_names.len() != MINC_CLASSES {
        warnings.push(format!(
            "{} classes found, the full dataset has {MINC_CLASSES}",
            manifest.class_names.len()
        ));
    }
    for (c, counts) in manifest.class_counts().iter().enumerate() {
        if *counts != MINC_SPLIT_COUNTS {
            warnings.push(format!(
                "class {} has train/val/test {:?}, expected {:?}",
                manifest.class_names[c], counts, MINC_SPLIT_COUNTS
            ));
        }
    }
    Ok(Ingest { manifest, warnings })
}
