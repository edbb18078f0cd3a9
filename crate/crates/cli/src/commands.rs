use std::path::{Path, PathBuf};

use lcr_core::classifiers::Classifier;
use lcr_core::codec::Codec;
use lcr_core::data::image_io::{load_rgb, save_gray, save_rgb};
use lcr_core::data::synth_toy_textures;
use lcr_core::metrics::{bpp, ms_ssim, psnr, ssim, write_quality_csv, QualityReport};
use lcr_core::pipeline::workflows::{evaluate_compressed, evaluate_pixel, precompute};
use lcr_core::pipeline::{
    channel_sum_map, emit_curves, load_dataset, load_evaluation_csv, run_anchor1, run_anchor2, run_anchor3,
    run_compressed, save_evaluation_csv, train_codec_for, write_curves, EvaluationRow, ExperimentConfig,
    OutputLock, RunContext, RunLog, Workflow,
};
use lcr_core::{LcrError, Result};
use log::{info, warn};

use crate::{Cli, Command, Global};

const LOG_FILE: &str = "log.jsonl";

/// Config file (or defaults) → `LCR_SEED` → flags.
fn resolve_config(g: &Global, workflow: Option<Workflow>) -> Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply_env()?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(d) = &g.output_dir {
        cfg.output_dir = d.clone();
    }
    if let Some(m) = &g.manifest {
        cfg.manifest = Some(m.clone());
        cfg.minc_root = None;
    }
    if let Some(r) = &g.minc_root {
        cfg.minc_root = Some(r.clone());
        cfg.manifest = None;
    }
    if let Some(q) = &g.quality {
        cfg.quality_indices = q.clone();
    }
    if let Some(c) = &g.codec_checkpoint {
        cfg.codec_checkpoint = c.clone();
    }
    if let Some(c) = &g.classifier_checkpoint {
        cfg.classifier_checkpoint = Some(c.clone());
    }
    if let Some(w) = workflow {
        cfg.workflow = Some(w);
        if w == Workflow::Anchor3 {
            cfg.quality_indices.clear();
        }
    }
    Ok(cfg)
}

fn apply_codec_overrides(cfg: &mut ExperimentConfig, g: &Global) {
    if let Some(e) = g.epochs {
        cfg.codec.epochs = e;
    }
    if let Some(b) = g.batch_size {
        cfg.codec.batch_size = b;
    }
    if let Some(lr) = g.learning_rate {
        cfg.codec.learning_rate = lr;
    }
}

fn apply_classifier_overrides(cfg: &mut ExperimentConfig, g: &Global) {
    if let Some(e) = g.epochs {
        cfg.classifier.epochs = e;
    }
    if let Some(b) = g.batch_size {
        cfg.classifier.batch_size = b;
    }
    if let Some(lr) = g.learning_rate {
        cfg.classifier.learning_rate = lr;
    }
}

/// Output directory, lock, log, and dataset of a config-driven command.
struct Session {
    cfg: ExperimentConfig,
    manifest: lcr_core::data::DatasetManifest,
    log: RunLog,
    _lock: OutputLock,
}

impl Session {
    fn open(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate_inputs()?;
        std::fs::create_dir_all(&cfg.output_dir)?;
        let lock = OutputLock::acquire(&cfg.output_dir)?;
        let log = RunLog::append_to(cfg.output_dir.join(LOG_FILE))?;
        let (manifest, warnings) = load_dataset(&cfg)?;
        for w in &warnings {
            warn!("{w}");
        }
        info!(
            "dataset: {} records, {} classes; seed {}",
            manifest.records.len(),
            manifest.class_names.len(),
            cfg.seed
        );
        Ok(Self { cfg, manifest, log, _lock: lock })
    }

    fn ctx(&self) -> RunContext<'_> {
        RunContext { cfg: &self.cfg, manifest: &self.manifest, log: &self.log }
    }

    fn codec(&self, q: u8) -> Result<Codec> {
        load_codec(&self.cfg.codec_path(q))
    }

    fn anchor3_path(&self) -> PathBuf {
        self.cfg
            .classifier_checkpoint
            .clone()
            .unwrap_or_else(|| self.cfg.output_dir.join("anchor3.ckpt"))
    }

    fn model_path(&self, w: Workflow, q: Option<u8>) -> PathBuf {
        match (w, q) {
            (Workflow::Anchor3, _) | (Workflow::Anchor1, _) => self.anchor3_path(),
            (w, Some(q)) => self.cfg.output_dir.join(format!("{w}_q{q}.ckpt")),
            (w, None) => self.cfg.output_dir.join(format!("{w}.ckpt")),
        }
    }

    fn pretrained(&self) -> Result<Classifier> {
        let p = self.anchor3_path();
        if !p.exists() {
            return Err(LcrError::Config(format!(
                "pixel-domain classifier {} does not exist; train anchor3 first or set classifier_checkpoint",
                p.display()
            )));
        }
        Classifier::load(p)
    }
}

fn load_codec(path: &Path) -> Result<Codec> {
    if !path.exists() {
        return Err(LcrError::Config(format!("codec checkpoint {} does not exist", path.display())));
    }
    Codec::load(path)
}

/// `--codec` if given, else the configured checkpoint when it names one file,
/// else the configured checkpoint for the single `--quality`.
fn single_codec(g: &Global, explicit: &Option<PathBuf>) -> Result<Codec> {
    if let Some(p) = explicit {
        return load_codec(p);
    }
    let cfg = resolve_config(g, None)?;
    if !cfg.codec_checkpoint.contains("{q}") {
        return load_codec(Path::new(&cfg.codec_checkpoint));
    }
    match cfg.quality_indices.as_slice() {
        [q] => load_codec(&cfg.codec_path(*q)),
        _ => Err(LcrError::Config("give --codec, or exactly one --quality".into())),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(p)?;
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::SynthToy { out, classes, per_class, size } => {
            let seed = resolve_config(g, None)?.seed;
            let m = synth_toy_textures(&out, classes, per_class, size, seed)?;
            info!("wrote {} images and {}", m.records.len(), out.join("manifest.tsv").display());
            Ok(())
        }
        Command::TrainCodec => {
            let mut cfg = resolve_config(g, None)?;
            apply_codec_overrides(&mut cfg, g);
            if cfg.quality_indices.is_empty() {
                return Err(LcrError::Config("train-codec needs at least one quality index".into()));
            }
            let s = Session::open(cfg)?;
            for &q in &s.cfg.quality_indices {
                info!("training codec at quality {q}");
                let (codec, logs) = train_codec_for(&s.ctx(), q)?;
                let path = s.cfg.codec_path(q);
                ensure_parent(&path)?;
                codec.save(&path)?;
                if let Some(last) = logs.last() {
                    info!("q{q}: loss {:.4}, {:.4} bpp, MS-SSIM {:.4} → {}", last.loss, last.bpp, last.ms_ssim, path.display());
                }
            }
            Ok(())
        }
        Command::Encode { input, output, codec } => {
            let codec = single_codec(g, &codec)?;
            let image = load_rgb(&input)?;
            let (_, _, h, w) = image.dims4()?;
            let enc = codec.encode(&image)?;
            ensure_parent(&output)?;
            std::fs::write(&output, &enc.bytes)?;
            info!("{} → {} ({} bytes, {:.4} bpp)", input.display(), output.display(), enc.bytes.len(), bpp(enc.bytes.len(), h, w));
            Ok(())
        }
        Command::Decode { input, output, codec, reference } => {
            let codec = single_codec(g, &codec)?;
            let bytes = std::fs::read(&input)?;
            let (header, image) = codec.decode(&bytes).map_err(|e| e.with_context(input.display().to_string()))?;
            ensure_parent(&output)?;
            save_rgb(&output, &image)?;
            if let Some(r) = reference {
                let original = load_rgb(&r)?;
                if original.shape() != image.shape() {
                    return Err(LcrError::Data(format!(
                        "reference {} is {:?}, decoded image is {:?}",
                        r.display(),
                        original.shape(),
                        image.shape()
                    )));
                }
                let report = QualityReport {
                    image_id: r.display().to_string(),
                    quality_index: header.quality_index,
                    bpp: bpp(bytes.len(), header.true_height as usize, header.true_width as usize),
                    psnr_db: psnr(&original, &image, 1.0)?,
                    ssim: ssim(&original, &image)?,
                    ms_ssim: ms_ssim(&original, &image)?,
                };
                write_quality_csv(&mut std::io::stdout().lock(), &[report])?;
            }
            Ok(())
        }
        Command::PrecomputeLatents => {
            let s = Session::open(resolve_config(g, None)?)?;
            for &q in &s.cfg.quality_indices {
                let report = precompute(&s.ctx(), &s.codec(q)?)?;
                for (p, why) in &report.failures {
                    warn!("{}: {why}", p.display());
                }
                info!("q{q}: {} encoded, {} reused, {} failed", report.encoded, report.reused, report.failures.len());
            }
            Ok(())
        }
        Command::TrainClassifier { workflow } => {
            let mut cfg = resolve_config(g, Some(workflow))?;
            apply_classifier_overrides(&mut cfg, g);
            let s = Session::open(cfg)?;
            let rows = train_workflow(&s, workflow)?;
            let path = s.cfg.output_dir.join(format!("evaluation_{workflow}.csv"));
            save_evaluation_csv(&path, &rows)?;
            info!("wrote {}", path.display());
            Ok(())
        }
        Command::Evaluate { workflow, out } => {
            let s = Session::open(resolve_config(g, None)?)?;
            let workflows = workflow.unwrap_or_else(|| {
                [Workflow::Anchor3, Workflow::Anchor1, Workflow::Anchor2, Workflow::Compressed].to_vec()
            });
            let explicit = workflows.len() < 4;
            let mut rows = Vec::new();
            for w in workflows {
                rows.extend(evaluate_workflow(&s, w, explicit)?);
            }
            if rows.is_empty() {
                return Err(LcrError::Config("no trained classifiers found to evaluate".into()));
            }
            let path = out.unwrap_or_else(|| s.cfg.output_dir.join("evaluation.csv"));
            ensure_parent(&path)?;
            save_evaluation_csv(&path, &rows)?;
            print_rows(&rows);
            info!("wrote {}", path.display());
            Ok(())
        }
        Command::Curves { input, out } => {
            let cfg = resolve_config(g, None)?;
            let inputs = if input.is_empty() { vec![cfg.output_dir.join("evaluation.csv")] } else { input };
            let mut rows = Vec::new();
            for p in &inputs {
                rows.extend(load_evaluation_csv(p)?);
            }
            let (series, warnings) = emit_curves(&rows);
            for w in &warnings {
                warn!("{w}");
            }
            let dir = out.unwrap_or_else(|| cfg.output_dir.join("curves"));
            for p in write_curves(&dir, &series)? {
                info!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::LatentSummary { input, out, codec } => {
            let codec = single_codec(g, &codec)?;
            let pair = if input.extension().is_some_and(|e| e == "lsc") {
                let bytes = std::fs::read(&input)?;
                codec.decode_latents(&bytes).map_err(|e| e.with_context(input.display().to_string()))?.1
            } else {
                codec.encode(&load_rgb(&input)?)?.latents
            };
            ensure_parent(&out)?;
            for (suffix, t) in [("y", &pair.y_hat), ("sigma", &pair.sigma_hat)] {
                let (pixels, w, h) = channel_sum_map(t)?;
                let path = PathBuf::from(format!("{}_{suffix}.png", out.display()));
                save_gray(&path, pixels, w, h)?;
                info!("wrote {} ({w}×{h})", path.display());
            }
            Ok(())
        }
    }
}

fn train_workflow(s: &Session, workflow: Workflow) -> Result<Vec<EvaluationRow>> {
    let ctx = s.ctx();
    let mut rows = Vec::new();
    match workflow {
        Workflow::Anchor3 => {
            let t = run_anchor3(&ctx)?;
            let path = s.cfg.output_dir.join("anchor3.ckpt");
            t.model.save(&path)?;
            info!("anchor3: best val Top-1 {:.2}% at epoch {} → {}", t.outcome.best_val_top1, t.outcome.best_epoch, path.display());
            rows.push(t.row);
        }
        Workflow::Anchor1 => {
            let model = s.pretrained()?;
            for &q in &s.cfg.quality_indices {
                rows.push(run_anchor1(&ctx, &model, &s.codec(q)?)?);
            }
        }
        Workflow::Anchor2 => {
            let pretrained = s.pretrained()?;
            for &q in &s.cfg.quality_indices {
                let t = run_anchor2(&ctx, &pretrained, &s.codec(q)?)?;
                t.model.save(s.model_path(workflow, Some(q)))?;
                rows.push(t.row);
            }
        }
        Workflow::Compressed => {
            for &q in &s.cfg.quality_indices {
                let codec = s.codec(q)?;
                let t = run_compressed(&ctx, &codec)?;
                t.model.save(s.model_path(workflow, Some(q)))?;
                rows.push(t.row);
            }
        }
    }
    print_rows(&rows);
    Ok(rows)
}

/// Rows for every saved model of `workflow`; missing models are an error
/// only when the workflow was requested explicitly.
fn evaluate_workflow(s: &Session, w: Workflow, explicit: bool) -> Result<Vec<EvaluationRow>> {
    let ctx = s.ctx();
    let qualities: Vec<Option<u8>> = match w {
        Workflow::Anchor3 => vec![None],
        _ => s.cfg.quality_indices.iter().map(|&q| Some(q)).collect(),
    };
    let mut rows = Vec::new();
    for q in qualities {
        let path = s.model_path(w, q);
        if !path.exists() {
            if explicit {
                return Err(LcrError::Config(format!("{w}: no trained model at {}", path.display())));
            }
            continue;
        }
        let model = Classifier::load(&path)?;
        let row = match (w, q) {
            (Workflow::Compressed, Some(q)) => evaluate_compressed(&ctx, &s.codec(q)?, &model)?,
            (_, Some(q)) => evaluate_pixel(&ctx, w, &model, Some(&s.codec(q)?))?,
            (_, None) => evaluate_pixel(&ctx, w, &model, None)?,
        };
        rows.push(row);
    }
    Ok(rows)
}

fn print_rows(rows: &[EvaluationRow]) {
    for r in rows {
        let q = r.quality_index.map_or("-".to_string(), |q| q.to_string());
        let bpp = r.bpp.map_or("-".to_string(), |b| format!("{b:.4}"));
        info!(
            "{:<10} q={q:<2} bpp={bpp:<8} top1={:>6.2}% top5={:>6.2}% (n={})",
            r.workflow, r.top1, r.top5, r.samples
        );
    }
}
