//! The four evaluation workflows: anchors 1–3 in the pixel domain and
//! classification on the compressed representation.

use std::path::{Path, PathBuf};

use lcr_tensor::Tensor;

use super::config::{ExperimentConfig, Workflow};
use super::report::{EvaluationRow, RunLog};
use crate::classifiers::{
    evaluate, train_classifier_with, Classifier, ClassifierConfig, Inputs, SampleSource, TrainOutcome,
};
use crate::codec::{crop_tensor, train_codec_with, Codec, CodecEpochLog, LatentPair};
use crate::data::augment::{augment_latent, augment_pixel, AugmentationConfig, PcaLighting};
use crate::data::image_io::load_rgb;
use crate::data::latent_store::{codec_fingerprint, lookup, precompute_latents, LatentStore, PrecomputeReport};
use crate::data::minc::ingest_minc;
use crate::data::{DatasetManifest, Split};
use crate::error::{LcrError, Result};
use crate::metrics::{bpp, ms_ssim, psnr, ssim, QualityReport};

/// Everything a workflow reads besides its models.
pub struct RunContext<'a> {
    pub cfg: &'a ExperimentConfig,
    pub manifest: &'a DatasetManifest,
    pub log: &'a RunLog,
}

/// Loads the configured manifest or ingests the configured MINC root.
/// Returns the manifest and any ingestion warnings.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<(DatasetManifest, Vec<String>)> {
    match (&cfg.manifest, &cfg.minc_root) {
        (Some(m), _) => Ok((DatasetManifest::load(m)?, Vec::new())),
        (None, Some(root)) => {
            let ingest = ingest_minc(root, 1)?;
            Ok((ingest.manifest, ingest.warnings))
        }
        (None, None) => Err(LcrError::Config("no dataset: set `manifest` or `minc_root`".into())),
    }
}

fn split_paths(manifest: &DatasetManifest, split: Split) -> (Vec<PathBuf>, Vec<usize>) {
    manifest
        .split(split)
        .map(|r| (manifest.resolve(r), r.label))
        .unzip()
}

fn center_crop(img: &Tensor, size: usize) -> Result<Tensor> {
    let (_, _, h, w) = img.dims4()?;
    if h < size || w < size {
        return Err(LcrError::Data(format!("{h}×{w} image is smaller than the {size}² training crop")));
    }
    let (top, left) = ((h - size) / 2, (w - size) / 2);
    let shifted = Tensor::from_fn(&[1, 3, size, size], |i| {
        let (c, y, x) = (i / (size * size), (i / size) % size, i % size);
        img.data()[c * h * w + (top + y) * w + left + x]
    });
    crop_tensor(&shifted, size, size)
}

/// Centre-cropped training images for codec optimisation.
pub fn codec_training_images(manifest: &DatasetManifest, crop: usize) -> Result<Vec<Tensor>> {
    let (paths, _) = split_paths(manifest, Split::Train);
    if paths.is_empty() {
        return Err(LcrError::Data("the manifest has no training images".into()));
    }
    paths
        .iter()
        .map(|p| load_rgb(p).and_then(|img| center_crop(&img, crop)))
        .collect()
}

/// Trains a fresh codec at `quality` on the training split.
pub fn train_codec_for(ctx: &RunContext, quality: u8) -> Result<(Codec, Vec<CodecEpochLog>)> {
    let images = codec_training_images(ctx.manifest, ctx.cfg.codec.crop)?;
    let mut codec = Codec::new(ctx.cfg.codec_config(quality)?, ctx.cfg.seed)?;
    let logs = train_codec_with(&mut codec, &images, &ctx.cfg.codec_train(), |e| {
        ctx.log.record(serde_json::json!({
            "event": "codec_epoch",
            "quality_index": quality,
            "epoch": e.epoch,
            "split": "train",
            "loss": e.loss,
            "bpp": e.bpp,
            "ms_ssim": e.ms_ssim,
        }));
    })?;
    Ok((codec, logs))
}

enum PixelItem {
    Path(PathBuf),
    Image(Tensor),
}

/// Pixel-domain samples, loaded lazily from disk or held in memory.
pub struct PixelSource {
    items: Vec<PixelItem>,
    labels: Vec<usize>,
    aug: AugmentationConfig,
    pca: Option<PcaLighting>,
}

impl PixelSource {
    pub fn from_paths(paths: Vec<PathBuf>, labels: Vec<usize>, aug: AugmentationConfig) -> Self {
        Self {
            items: paths.into_iter().map(PixelItem::Path).collect(),
            labels,
            aug,
            pca: None,
        }
    }

    pub fn from_images(images: Vec<Tensor>, labels: Vec<usize>, aug: AugmentationConfig) -> Self {
        Self {
            items: images.into_iter().map(PixelItem::Image).collect(),
            labels,
            aug,
            pca: None,
        }
    }

    /// Fits lighting noise to this source's pixels.
    pub fn with_pca(mut self) -> Result<Self> {
        let images = (0..self.items.len()).map(|i| self.image(i)).collect::<Result<Vec<_>>>()?;
        self.pca = Some(PcaLighting::fit(&images)?);
        Ok(self)
    }

    fn image(&self, i: usize) -> Result<Tensor> {
        match &self.items[i] {
            PixelItem::Path(p) => load_rgb(p),
            PixelItem::Image(t) => Ok(t.clone()),
        }
    }
}

impl SampleSource for PixelSource {
    fn len(&self) -> usize {
        self.items.len()
    }

    fn label(&self, index: usize) -> usize {
        self.labels[index]
    }

    fn input(&self, index: usize, augment: Option<u64>) -> Result<Inputs> {
        let img = self.image(index)?;
        Ok(Inputs::Pixel(augment_pixel(&img, &self.aug, self.pca.as_ref(), augment)?))
    }
}

/// Compressed-domain samples `(ŷ, σ̂)`.
pub struct LatentSource {
    pairs: Vec<LatentPair>,
    labels: Vec<usize>,
    /// Mean stream length in bits per pixel over the source.
    pub mean_bpp: f64,
    aug: AugmentationConfig,
}

impl LatentSource {
    pub fn new(pairs: Vec<LatentPair>, labels: Vec<usize>, mean_bpp: f64, aug: AugmentationConfig) -> Self {
        Self { pairs, labels, mean_bpp, aug }
    }

    /// Per-channel mean and standard deviation of `ln σ̂`.
    pub fn log_sigma_stats(&self) -> Result<(Tensor, Tensor)> {
        let first = self.pairs.first().ok_or_else(|| LcrError::Data("no latents".into()))?;
        let c = first.sigma_hat.shape()[first.sigma_hat.shape().len() - 3];
        let (mut sum, mut sq, mut count) = (vec![0f64; c], vec![0f64; c], vec![0usize; c]);
        for p in &self.pairs {
            let d = p.sigma_hat.data();
            let plane = d.len() / c;
            for (i, &s) in d.iter().enumerate() {
                let l = (s as f64).ln();
                sum[i / plane] += l;
                sq[i / plane] += l * l;
                count[i / plane] += 1;
            }
        }
        let mean: Vec<f32> = (0..c).map(|k| (sum[k] / count[k] as f64) as f32).collect();
        let std: Vec<f32> = (0..c)
            .map(|k| {
                let m = sum[k] / count[k] as f64;
                ((sq[k] / count[k] as f64 - m * m).max(0.0).sqrt().max(1e-3)) as f32
            })
            .collect();
        Ok((Tensor::new(&[c], mean)?, Tensor::new(&[c], std)?))
    }
}

impl SampleSource for LatentSource {
    fn len(&self) -> usize {
        self.pairs.len()
    }

    fn label(&self, index: usize) -> usize {
        self.labels[index]
    }

    fn input(&self, index: usize, augment: Option<u64>) -> Result<Inputs> {
        let p = augment_latent(&self.pairs[index], &self.aug, augment)?;
        Ok(Inputs::Latent { y_hat: p.y_hat, sigma_hat: p.sigma_hat })
    }
}

/// A split pushed through encode → bitstream → decode.
pub struct DecodedSplit {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub reports: Vec<QualityReport>,
}

/// Round-trips every image of `split` through the real bitstream.
pub fn decode_split(codec: &Codec, manifest: &DatasetManifest, split: Split) -> Result<DecodedSplit> {
    let (paths, labels) = split_paths(manifest, split);
    let mut images = Vec::with_capacity(paths.len());
    let mut reports = Vec::with_capacity(paths.len());
    for p in &paths {
        let original = load_rgb(p)?;
        let (_, _, h, w) = original.dims4()?;
        let bytes = codec.encode(&original)?.bytes;
        let (_, decoded) = codec.decode(&bytes).map_err(|e| e.with_context(p.display().to_string()))?;
        reports.push(QualityReport {
            image_id: p.display().to_string(),
            quality_index: codec.config().quality_index,
            bpp: bpp(bytes.len(), h, w),
            psnr_db: psnr(&original, &decoded, 1.0)?,
            ssim: ssim(&original, &decoded)?,
            ms_ssim: ms_ssim(&original, &decoded)?,
        });
        images.push(decoded);
    }
    Ok(DecodedSplit { images, labels, reports })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n.max(1) as f64
}

fn quality_row(workflow: Workflow, quality: u8, reports: &[QualityReport], top1: f64, top5: f64) -> EvaluationRow {
    // Lossless reconstructions report an infinite PSNR; average the finite ones.
    let finite_psnr: Vec<f64> = reports.iter().map(|r| r.psnr_db).filter(|p| p.is_finite()).collect();
    EvaluationRow {
        workflow,
        quality_index: Some(quality),
        bpp: Some(mean(reports.iter().map(|r| r.bpp))),
        psnr_db: Some(if finite_psnr.is_empty() { f64::INFINITY } else { mean(finite_psnr.into_iter()) }),
        ssim: Some(mean(reports.iter().map(|r| r.ssim))),
        ms_ssim: Some(mean(reports.iter().map(|r| r.ms_ssim))),
        top1,
        top5,
        samples: reports.len(),
    }
}

fn train_logged(
    ctx: &RunContext,
    workflow: Workflow,
    quality: Option<u8>,
    model: &mut Classifier,
    train: &dyn SampleSource,
    val: &dyn SampleSource,
) -> Result<TrainOutcome> {
    train_classifier_with(model, train, val, &ctx.cfg.classifier_train(), |r| {
        ctx.log.record(serde_json::json!({
            "event": "classifier_epoch",
            "workflow": workflow.as_str(),
            "quality_index": quality,
            "epoch": r.epoch,
            "split": "val",
            "loss": r.train_loss,
            "top1": r.val_top1,
            "top5": r.val_top5,
            "lr": r.learning_rate,
            "wall_s": r.seconds,
        }));
    })
}

fn log_row(ctx: &RunContext, row: &EvaluationRow) {
    ctx.log.record(serde_json::json!({
        "event": "evaluation",
        "workflow": row.workflow.as_str(),
        "quality_index": row.quality_index,
        "split": "test",
        "bpp": row.bpp,
        "top1": row.top1,
        "top5": row.top5,
        "samples": row.samples,
    }));
}

/// A trained classifier with its history and test-split result.
pub struct Trained {
    pub quality_index: Option<u8>,
    pub model: Classifier,
    pub outcome: TrainOutcome,
    pub row: EvaluationRow,
}

fn pixel_source(ctx: &RunContext, split: Split) -> PixelSource {
    let (paths, labels) = split_paths(ctx.manifest, split);
    PixelSource::from_paths(paths, labels, ctx.cfg.augmentation())
}

/// Anchor 3: ResNet-50 trained and evaluated on original images.
pub fn run_anchor3(ctx: &RunContext) -> Result<Trained> {
    let classes = ctx.manifest.class_names.len();
    let mut model = Classifier::new(ClassifierConfig::resnet50(classes), ctx.cfg.seed)?;
    let train = pixel_source(ctx, Split::Train).with_pca()?;
    let val = pixel_source(ctx, Split::Val);
    let outcome = train_logged(ctx, Workflow::Anchor3, None, &mut model, &train, &val)?;
    let test = pixel_source(ctx, Split::Test);
    let eval = evaluate(&model, &test, ctx.cfg.classifier.batch_size)?;
    let row = EvaluationRow {
        workflow: Workflow::Anchor3,
        quality_index: None,
        bpp: None,
        psnr_db: None,
        ssim: None,
        ms_ssim: None,
        top1: eval.top1,
        top5: eval.top5,
        samples: eval.labels.len(),
    };
    log_row(ctx, &row);
    Ok(Trained { quality_index: None, model, outcome, row })
}

/// Anchor 1: the anchor-3 classifier applied to decoded test images.
pub fn run_anchor1(ctx: &RunContext, classifier: &Classifier, codec: &Codec) -> Result<EvaluationRow> {
    let q = codec.config().quality_index;
    let decoded = decode_split(codec, ctx.manifest, Split::Test)?;
    let test = PixelSource::from_images(decoded.images, decoded.labels, ctx.cfg.augmentation());
    let eval = evaluate(classifier, &test, ctx.cfg.classifier.batch_size)?;
    let row = quality_row(Workflow::Anchor1, q, &decoded.reports, eval.top1, eval.top5);
    log_row(ctx, &row);
    Ok(row)
}

/// Anchor 2: the anchor-3 classifier retrained on decoded training images,
/// selected on decoded validation images, and evaluated on decoded test images.
pub fn run_anchor2(ctx: &RunContext, pretrained: &Classifier, codec: &Codec) -> Result<Trained> {
    let q = codec.config().quality_index;
    let aug = ctx.cfg.augmentation();
    let tr = decode_split(codec, ctx.manifest, Split::Train)?;
    let va = decode_split(codec, ctx.manifest, Split::Val)?;
    let te = decode_split(codec, ctx.manifest, Split::Test)?;
    let train = PixelSource::from_images(tr.images, tr.labels, aug.clone()).with_pca()?;
    let val = PixelSource::from_images(va.images, va.labels, aug.clone());
    let mut model = Classifier::from_checkpoint(&pretrained.checkpoint())?;
    let outcome = train_logged(ctx, Workflow::Anchor2, Some(q), &mut model, &train, &val)?;
    let test = PixelSource::from_images(te.images, te.labels, aug);
    let eval = evaluate(&model, &test, ctx.cfg.classifier.batch_size)?;
    let row = quality_row(Workflow::Anchor2, q, &te.reports, eval.top1, eval.top5);
    log_row(ctx, &row);
    Ok(Trained { quality_index: Some(q), model, outcome, row })
}

/// Populates the latent store for every manifest image at the codec's quality.
pub fn precompute(ctx: &RunContext, codec: &Codec) -> Result<PrecomputeReport> {
    let store = LatentStore::open(ctx.cfg.latent_store_dir())?;
    let report = precompute_latents(ctx.manifest, codec, &store)?;
    ctx.log.record(serde_json::json!({
        "event": "precompute",
        "quality_index": codec.config().quality_index,
        "encoded": report.encoded,
        "reused": report.reused,
        "failures": report.failures.len(),
    }));
    Ok(report)
}

/// Stored latents of one split, with the mean stream bpp.
pub fn latent_split(ctx: &RunContext, codec: &Codec, split: Split) -> Result<LatentSource> {
    let store = LatentStore::open(ctx.cfg.latent_store_dir())?;
    let fp = codec_fingerprint(codec)?;
    let q = codec.config().quality_index;
    let (paths, labels) = split_paths(ctx.manifest, split);
    let mut pairs = Vec::with_capacity(paths.len());
    let mut rates = Vec::with_capacity(paths.len());
    for p in &paths {
        let entry = lookup(&store, &fp, q, p)?;
        let pixels = image_pixels(p)?;
        rates.push(8.0 * entry.stream_bytes as f64 / pixels as f64);
        pairs.push(entry.latents);
    }
    Ok(LatentSource::new(pairs, labels, mean(rates.into_iter()), ctx.cfg.augmentation()))
}

fn image_pixels(path: &Path) -> Result<usize> {
    let (w, h) = image::image_dimensions(path)
        .map_err(|e| LcrError::Data(format!("{}: {e}", path.display())))?;
    Ok(w as usize * h as usize)
}

/// Compressed-domain classification: cResNet-39 trained and evaluated on
/// stored `(ŷ, σ̂)` pairs. The codec's synthesis transform is never run.
pub fn run_compressed(ctx: &RunContext, codec: &Codec) -> Result<Trained> {
    let q = codec.config().quality_index;
    let calls_before = codec.synthesis_calls();
    precompute(ctx, codec)?;
    let train = latent_split(ctx, codec, Split::Train)?;
    let val = latent_split(ctx, codec, Split::Val)?;
    let test = latent_split(ctx, codec, Split::Test)?;
    let classes = ctx.manifest.class_names.len();
    let mut model = Classifier::new(
        ClassifierConfig::cresnet39(classes, codec.config().latent_channels),
        ctx.cfg.seed,
    )?;
    let (m, s) = train.log_sigma_stats()?;
    model.set_sigma_normalization(m, s)?;
    let outcome = train_logged(ctx, Workflow::Compressed, Some(q), &mut model, &train, &val)?;
    let eval = evaluate(&model, &test, ctx.cfg.classifier.batch_size)?;
    if codec.synthesis_calls() != calls_before {
        return Err(LcrError::Invalid(format!(
            "synthesis ran {} times during compressed-domain classification",
            codec.synthesis_calls() - calls_before
        )));
    }
    let row = EvaluationRow {
        workflow: Workflow::Compressed,
        quality_index: Some(q),
        bpp: Some(test.mean_bpp),
        psnr_db: None,
        ssim: None,
        ms_ssim: None,
        top1: eval.top1,
        top5: eval.top5,
        samples: eval.labels.len(),
    };
    log_row(ctx, &row);
    Ok(Trained { quality_index: Some(q), model, outcome, row })
}

/// Test-split evaluation of a saved compressed-domain classifier.
pub fn evaluate_compressed(ctx: &RunContext, codec: &Codec, model: &Classifier) -> Result<EvaluationRow> {
    let test = latent_split(ctx, codec, Split::Test)?;
    let eval = evaluate(model, &test, ctx.cfg.classifier.batch_size)?;
    Ok(EvaluationRow {
        workflow: Workflow::Compressed,
        quality_index: Some(codec.config().quality_index),
        bpp: Some(test.mean_bpp),
        psnr_db: None,
        ssim: None,
        ms_ssim: None,
        top1: eval.top1,
        top5: eval.top5,
        samples: eval.labels.len(),
    })
}

/// Test-split evaluation of a saved pixel-domain classifier on originals
/// (`codec = None`) or on decoded images.
pub fn evaluate_pixel(
    ctx: &RunContext,
    workflow: Workflow,
    model: &Classifier,
    codec: Option<&Codec>,
) -> Result<EvaluationRow> {
    match codec {
        None => {
            let test = pixel_source(ctx, Split::Test);
            let eval = evaluate(model, &test, ctx.cfg.classifier.batch_size)?;
            Ok(EvaluationRow {
                workflow,
                quality_index: None,
                bpp: None,
                psnr_db: None,
                ssim: None,
                ms_ssim: None,
                top1: eval.top1,
                top5: eval.top5,
                samples: eval.labels.len(),
            })
        }
        Some(codec) => {
            let decoded = decode_split(codec, ctx.manifest, Split::Test)?;
            let test = PixelSource::from_images(decoded.images, decoded.labels, ctx.cfg.augmentation());
            let eval = evaluate(model, &test, ctx.cfg.classifier.batch_size)?;
            Ok(quality_row(workflow, codec.config().quality_index, &decoded.reports, eval.top1, eval.top5))
        }
    }
}
