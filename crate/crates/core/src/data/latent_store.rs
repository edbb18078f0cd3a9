//! Content-addressed, write-once cache of quantized latents.
//!
//! Each entry lives at `<root>/<k[0..2]>/<k>.lat`, where `k` is the SHA-256
//! of the codec fingerprint, quality index, and source path. Layout (LE):
//!
//! ```text
//! magic "LCRL" | version u32 = 1 | stream_bytes u64 |
//! 2 × (rank u8, rank × u32 extents, numel × f32)      -- ŷ then σ̂
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use lcr_tensor::Tensor;
use sha2::{Digest, Sha256};

use super::image_io::load_rgb;
use super::manifest::DatasetManifest;
use crate::codec::{Codec, LatentPair};
use crate::error::{LcrError, Result};

const MAGIC: &[u8; 4] = b"LCRL";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct LatentEntry {
    pub latents: LatentPair,
    /// Length of the archived bitstream.
    pub stream_bytes: usize,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 over a codec's serialized checkpoint.
pub fn codec_fingerprint(codec: &Codec) -> Result<String> {
    let mut buf = Vec::new();
    codec.checkpoint().write_to(&mut buf)?;
    Ok(hex(&Sha256::digest(&buf)))
}

#[derive(Clone, Debug)]
pub struct LatentStore {
    root: PathBuf,
}

impl LatentStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn key(fingerprint: &str, quality: u8, source: &Path) -> String {
        let mut h = Sha256::new();
        h.update(fingerprint.as_bytes());
        h.update([0, quality, 0]);
        h.update(source.to_string_lossy().as_bytes());
        hex(&h.finalize())
    }

    pub fn entry_path(&self, key: &str) -> PathBuf {
        self.root.join(&key[..2]).join(format!("{key}.lat"))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entry_path(key).is_file()
    }

    /// Writes the entry unless one already exists. Concurrent writers of the
    /// same key race benignly: each writes a private temporary file and the
    /// rename is atomic. Returns `false` when the key was already present.
    pub fn put(&self, key: &str, entry: &LatentEntry) -> Result<bool> {
        let path = self.entry_path(key);
        if path.is_file() {
            return Ok(false);
        }
        let dir = path.parent().expect("entry has a parent");
        fs::create_dir_all(dir)?;
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(entry.stream_bytes as u64).to_le_bytes());
        for t in [&entry.latents.y_hat, &entry.latents.sigma_hat] {
            buf.push(t.shape().len() as u8);
            for &d in t.shape() {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let tmp = dir.join(format!(".{key}.{}.tmp", std::process::id()));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&buf)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &path)?;
        Ok(true)
    }

    pub fn get(&self, key: &str) -> Result<Option<LatentEntry>> {
        let path = self.entry_path(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        parse_entry(&bytes)
            .map(Some)
            .map_err(|m| LcrError::Data(format!("{}: {m}", path.display())))
    }
}

fn parse_entry(bytes: &[u8]) -> std::result::Result<LatentEntry, String> {
    let mut at = 0usize;
    let mut take = |n: usize| -> std::result::Result<&[u8], String> {
        let s = bytes.get(at..at + n).ok_or("truncated entry")?;
        at += n;
        Ok(s)
    };
    if take(4)? != MAGIC {
        return Err("bad magic".into());
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let stream_bytes = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let mut tensors = Vec::with_capacity(2);
    for _ in 0..2 {
        let rank = take(1)?[0] as usize;
        let shape = (0..rank)
            .map(|_| take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let numel: usize = shape.iter().product();
        let data = take(numel * 4)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        tensors.push(Tensor::new(&shape, data).map_err(|e| e.to_string())?);
    }
    if at != bytes.len() {
        return Err("trailing bytes".into());
    }
    let sigma_hat = tensors.pop().unwrap();
    let y_hat = tensors.pop().unwrap().into_integral().map_err(|e| e.to_string())?;
    Ok(LatentEntry { latents: LatentPair { y_hat, sigma_hat }, stream_bytes })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PrecomputeReport {
    pub encoded: usize,
    pub reused: usize,
    /// Records that could not be processed, with the reason.
    pub failures: Vec<(PathBuf, String)>,
}

impl PrecomputeReport {
    pub fn hit_rate(&self) -> f64 {
        let total = self.encoded + self.reused;
        if total == 0 {
            0.0
        } else {
            self.reused as f64 / total as f64
        }
    }
}

/// Encodes every manifest image at full resolution with `codec`, storing
/// `ŷ`, `σ̂`, and the stream length. Existing entries are reused; unreadable
/// images are reported and skipped.
pub fn precompute_latents(
    manifest: &DatasetManifest,
    codec: &Codec,
    store: &LatentStore,
) -> Result<PrecomputeReport> {
    let fingerprint = codec_fingerprint(codec)?;
    let quality = codec.config().quality_index;
    let mut report = PrecomputeReport::default();
    for record in &manifest.records {
        let path = manifest.resolve(record);
        let key = LatentStore::key(&fingerprint, quality, &path);
        if store.contains(&key) {
            report.reused += 1;
            continue;
        }
        let encoded = match load_rgb(&path).and_then(|img| codec.encode(&img)) {
            Ok(e) => e,
            Err(e) if e.is_numeric() => return Err(e),
            Err(e) => {
                report.failures.push((path, e.to_string()));
                continue;
            }
        };
        let entry = LatentEntry {
            stream_bytes: encoded.bytes.len(),
            latents: encoded.latents,
        };
        if store.put(&key, &entry)? {
            report.encoded += 1;
        } else {
            report.reused += 1;
        }
    }
    Ok(report)
}

/// Looks up the stored latents of `source` for `codec`.
pub fn lookup(store: &LatentStore, fingerprint: &str, quality: u8, source: &Path) -> Result<LatentEntry> {
    store
        .get(&LatentStore::key(fingerprint, quality, source))?
        .ok_or_else(|| LcrError::Data(format!("no stored latents for {}", source.display())))
}
