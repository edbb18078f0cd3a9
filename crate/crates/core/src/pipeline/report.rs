//! Evaluation rows, their CSV form, structured run logs, and the
//! per-output-directory lock.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::config::Workflow;
use crate::error::{LcrError, Result};

pub const EVALUATION_CSV_HEADER: &str = "workflow,quality_index,bpp,psnr_db,ssim,ms_ssim,top1,top5,samples";

/// Per-workflow, per-quality test-split summary. Codec metrics are `None`
/// where no image is coded (anchor 3) or decoded (compressed domain).
#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationRow {
    pub workflow: Workflow,
    pub quality_index: Option<u8>,
    pub bpp: Option<f64>,
    pub psnr_db: Option<f64>,
    pub ssim: Option<f64>,
    pub ms_ssim: Option<f64>,
    pub top1: f64,
    pub top5: f64,
    pub samples: usize,
}

impl EvaluationRow {
    pub fn validate(&self) -> Result<()> {
        let pct = |v: f64| (0.0..=100.0).contains(&v);
        if !pct(self.top1) || !pct(self.top5) || self.top1 > self.top5 {
            return Err(LcrError::Invalid(format!(
                "accuracies top1 {} / top5 {} violate 0 ≤ top1 ≤ top5 ≤ 100",
                self.top1, self.top5
            )));
        }
        Ok(())
    }

    pub fn to_csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{:.4},{:.4},{}",
            self.workflow,
            self.quality_index.map(|q| q.to_string()).unwrap_or_default(),
            opt(self.bpp),
            opt(self.psnr_db),
            opt(self.ssim),
            opt(self.ms_ssim),
            self.top1,
            self.top5,
            self.samples
        )
    }

    pub fn from_csv_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 9 {
            return Err(LcrError::Data(format!("expected 9 fields, got {}: {line:?}", f.len())));
        }
        let bad = |what: &str, v: &str| LcrError::Data(format!("bad {what} {v:?}"));
        let opt = |i: usize, what: &str| -> Result<Option<f64>> {
            if f[i].is_empty() {
                Ok(None)
            } else {
                f[i].parse().map(Some).map_err(|_| bad(what, f[i]))
            }
        };
        let row = Self {
            workflow: Workflow::parse(f[0]).map_err(|_| bad("workflow", f[0]))?,
            quality_index: if f[1].is_empty() {
                None
            } else {
                Some(f[1].parse().map_err(|_| bad("quality index", f[1]))?)
            },
            bpp: opt(2, "bpp")?,
            psnr_db: opt(3, "psnr")?,
            ssim: opt(4, "ssim")?,
            ms_ssim: opt(5, "ms_ssim")?,
            top1: f[6].parse().map_err(|_| bad("top1", f[6]))?,
            top5: f[7].parse().map_err(|_| bad("top5", f[7]))?,
            samples: f[8].parse().map_err(|_| bad("sample count", f[8]))?,
        };
        row.validate().map_err(|e| LcrError::Data(e.to_string()))?;
        Ok(row)
    }
}

pub fn write_evaluation_csv(out: &mut impl Write, rows: &[EvaluationRow]) -> Result<()> {
    writeln!(out, "{EVALUATION_CSV_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.to_csv_row())?;
    }
    Ok(())
}

pub fn read_evaluation_csv(input: impl BufRead) -> Result<Vec<EvaluationRow>> {
    let mut lines = input.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim_end() != EVALUATION_CSV_HEADER {
        return Err(LcrError::Data(format!("unexpected evaluation header {header:?}")));
    }
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if !line.trim().is_empty() {
            rows.push(EvaluationRow::from_csv_row(&line)?);
        }
    }
    Ok(rows)
}

pub fn save_evaluation_csv(path: impl AsRef<Path>, rows: &[EvaluationRow]) -> Result<()> {
    let mut buf = Vec::new();
    write_evaluation_csv(&mut buf, rows)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_evaluation_csv(path: impl AsRef<Path>) -> Result<Vec<EvaluationRow>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| LcrError::Data(format!("{}: {e}", path.display())))?;
    read_evaluation_csv(std::io::BufReader::new(f))
}

/// Line-delimited JSON records appended to a file; a no-op when detached.
#[derive(Debug, Default)]
pub struct RunLog {
    file: Option<Mutex<File>>,
}

impl RunLog {
    pub fn detached() -> Self {
        Self { file: None }
    }

    pub fn append_to(path: impl AsRef<Path>) -> Result<Self> {
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { file: Some(Mutex::new(f)) })
    }

    pub fn record(&self, value: serde_json::Value) {
        if let Some(f) = &self.file {
            let mut f = f.lock().unwrap_or_else(|p| p.into_inner());
            // Logging must never abort a run.
            let _ = writeln!(f, "{value}");
        }
    }
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub const FILE_NAME: &'static str = ".lcr.lock";

    pub fn acquire(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let path = dir.join(Self::FILE_NAME);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(LcrError::Config(format!(
                "{} is in use by another run (remove {} if that run is gone)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(workflow: Workflow, q: Option<u8>, top1: f64) -> EvaluationRow {
        EvaluationRow {
            workflow,
            quality_index: q,
            bpp: q.map(|q| 0.1 * q as f64),
            psnr_db: None,
            ssim: q.map(|_| 0.5),
            ms_ssim: q.map(|_| 0.75),
            top1,
            top5: 100.0,
            samples: 6,
        }
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![row(Workflow::Anchor3, None, 100.0), row(Workflow::Compressed, Some(4), 83.3333)];
        let mut buf = Vec::new();
        write_evaluation_csv(&mut buf, &rows).unwrap();
        let back = read_evaluation_csv(buf.as_slice()).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn rejects_inverted_accuracies() {
        let mut r = row(Workflow::Anchor1, Some(1), 50.0);
        r.top5 = 40.0;
        assert!(r.validate().is_err());
        assert!(EvaluationRow::from_csv_row(&r.to_csv_row()).is_err());
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let a = OutputLock::acquire(dir.path()).unwrap();
        assert!(matches!(OutputLock::acquire(dir.path()), Err(LcrError::Config(_))));
        drop(a);
        assert!(OutputLock::acquire(dir.path()).is_ok());
    }

    #[test]
    fn log_lines_are_json() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.jsonl");
        let log = RunLog::append_to(&p).unwrap();
        log.record(serde_json::json!({"event": "x", "epoch": 1}));
        log.record(serde_json::json!({"event": "y"}));
        let text = std::fs::read_to_string(&p).unwrap();
        let parsed: Vec<serde_json::Value> =
            text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0]["epoch"], 1);
    }
}
