//! Declarative experiment configuration (TOML) with validation.

use std::path::{Path, PathBuf};

use lcr_tensor::SgdConfig;
use serde::{Deserialize, Serialize};

use crate::classifiers::ClassifierTrainConfig;
use crate::codec::{CodecConfig, CodecTrainConfig};
use crate::data::augment::{AugmentationConfig, LatentAugment, PixelAugment};
use crate::error::{LcrError, Result};

/// Environment variable that overrides the configured global seed.
pub const SEED_ENV: &str = "LCR_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Workflow {
    Anchor1,
    Anchor2,
    Anchor3,
    Compressed,
}

impl Workflow {
    pub fn as_str(self) -> &'static str {
        match self {
            Workflow::Anchor1 => "anchor1",
            Workflow::Anchor2 => "anchor2",
            Workflow::Anchor3 => "anchor3",
            Workflow::Compressed => "compressed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "anchor1" => Ok(Workflow::Anchor1),
            "anchor2" => Ok(Workflow::Anchor2),
            "anchor3" => Ok(Workflow::Anchor3),
            "compressed" => Ok(Workflow::Compressed),
            other => Err(LcrError::Config(format!("unknown workflow {other:?}"))),
        }
    }

    pub fn needs_codec(self) -> bool {
        self != Workflow::Anchor3
    }
}

impl std::fmt::Display for Workflow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecSection {
    /// `toy` or `full`.
    pub preset: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    /// Gradient-norm ceiling; 0 disables clipping.
    pub clip_norm: f64,
    /// Training images are centre-cropped to this square extent.
    pub crop: usize,
}

impl Default for CodecSection {
    fn default() -> Self {
        let t = CodecTrainConfig::default();
        Self {
            preset: "toy".into(),
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            clip_norm: t.clip_norm.unwrap_or(0.0),
            crop: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f32,
    /// Stop early once validation Top-1 (percent) reaches this value.
    pub target_top1: Option<f64>,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 0.0005,
            lr_decay_epochs: vec![10, 20],
            lr_decay_factor: 10.0,
            target_top1: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub pixel_resize: usize,
    pub pixel_crop: usize,
    pub latent_resize: usize,
    pub latent_crop: usize,
    pub flip_prob: f64,
    pub jitter: f32,
    pub pca_noise_std: f32,
}

impl Default for AugmentSection {
    fn default() -> Self {
        let a = AugmentationConfig::default();
        Self {
            pixel_resize: a.pixel.resize_to,
            pixel_crop: a.pixel.crop,
            latent_resize: a.latent.resize_to,
            latent_crop: a.latent.crop,
            flip_prob: a.pixel.flip_prob,
            jitter: a.pixel.jitter,
            pca_noise_std: a.pixel.pca_noise_std,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub workflow: Option<Workflow>,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Manifest TSV (with its JSON sidecar) ...
    pub manifest: Option<PathBuf>,
    /// ... or a MINC-2500 root using split 1.
    pub minc_root: Option<PathBuf>,
    pub quality_indices: Vec<u8>,
    /// Codec checkpoint path; `{q}` is replaced by the quality index.
    pub codec_checkpoint: String,
    /// Pixel-domain classifier trained on originals (input of anchor 1 and
    /// the starting point of anchor 2).
    pub classifier_checkpoint: Option<PathBuf>,
    pub latent_store: Option<PathBuf>,
    pub codec: CodecSection,
    pub classifier: ClassifierSection,
    pub augment: AugmentSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            workflow: None,
            seed: 0,
            output_dir: PathBuf::from("runs"),
            manifest: None,
            minc_root: None,
            quality_indices: vec![1, 4, 8],
            codec_checkpoint: "runs/codec_q{q}.ckpt".into(),
            classifier_checkpoint: None,
            latent_store: None,
            codec: CodecSection::default(),
            classifier: ClassifierSection::default(),
            augment: AugmentSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| LcrError::Config(e.to_string()))
    }

    /// Reads `path`; relative paths inside are resolved against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| LcrError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)
            .map_err(|e| LcrError::Config(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for p in [
            &mut self.manifest,
            &mut self.minc_root,
            &mut self.classifier_checkpoint,
            &mut self.latent_store,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        if Path::new(&self.codec_checkpoint).is_relative() {
            self.codec_checkpoint = base.join(&self.codec_checkpoint).to_string_lossy().into_owned();
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| LcrError::Config(e.to_string()))
    }

    /// Applies `LCR_SEED` when set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| LcrError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn codec_path(&self, quality: u8) -> PathBuf {
        PathBuf::from(self.codec_checkpoint.replace("{q}", &quality.to_string()))
    }

    pub fn latent_store_dir(&self) -> PathBuf {
        self.latent_store
            .clone()
            .unwrap_or_else(|| self.output_dir.join("latents"))
    }

    pub fn codec_config(&self, quality: u8) -> Result<CodecConfig> {
        CodecConfig::preset(&self.codec.preset, quality)
    }

    pub fn codec_train(&self) -> CodecTrainConfig {
        CodecTrainConfig {
            epochs: self.codec.epochs,
            batch_size: self.codec.batch_size,
            learning_rate: self.codec.learning_rate,
            momentum: self.codec.momentum,
            clip_norm: (self.codec.clip_norm > 0.0).then_some(self.codec.clip_norm),
            seed: self.seed,
        }
    }

    pub fn classifier_train(&self) -> ClassifierTrainConfig {
        let c = &self.classifier;
        ClassifierTrainConfig {
            epochs: c.epochs,
            batch_size: c.batch_size,
            sgd: SgdConfig {
                learning_rate: c.learning_rate,
                momentum: c.momentum,
                weight_decay: c.weight_decay,
                schedule: c.lr_decay_epochs.iter().map(|&e| (e, c.lr_decay_factor)).collect(),
            },
            seed: self.seed,
            target_top1: c.target_top1,
        }
    }

    pub fn augmentation(&self) -> AugmentationConfig {
        let a = &self.augment;
        AugmentationConfig {
            pixel: PixelAugment {
                resize_to: a.pixel_resize,
                crop: a.pixel_crop,
                flip_prob: a.flip_prob,
                jitter: a.jitter,
                pca_noise_std: a.pca_noise_std,
            },
            latent: LatentAugment {
                resize_to: a.latent_resize,
                crop: a.latent_crop,
                flip_prob: a.flip_prob,
            },
            seed: self.seed,
        }
    }

    /// Structural checks that need no filesystem access.
    pub fn validate(&self) -> Result<()> {
        if let Some(&q) = self.quality_indices.iter().find(|&&q| !(1..=8).contains(&q)) {
            return Err(LcrError::Config(format!("quality index {q} outside 1..=8")));
        }
        let mut sorted = self.quality_indices.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.quality_indices.len() {
            return Err(LcrError::Config("quality indices repeat".into()));
        }
        match self.workflow {
            Some(Workflow::Anchor3) if !self.quality_indices.is_empty() => {
                return Err(LcrError::Config("anchor3 takes no quality index".into()));
            }
            Some(w) if w.needs_codec() && self.quality_indices.is_empty() => {
                return Err(LcrError::Config(format!("{w} needs at least one quality index")));
            }
            _ => {}
        }
        if self.manifest.is_some() && self.minc_root.is_some() {
            return Err(LcrError::Config("give either a manifest or a MINC root, not both".into()));
        }
        CodecConfig::preset(&self.codec.preset, 1)?;
        if self.codec.crop == 0 || self.codec.crop % 64 != 0 {
            return Err(LcrError::Config(format!("codec crop {} must be a positive multiple of 64", self.codec.crop)));
        }
        if self.classifier.lr_decay_factor <= 0.0 {
            return Err(LcrError::Config("lr decay factor must be positive".into()));
        }
        self.augmentation().validate()
    }

    /// Checks that every input the workflow reads exists.
    pub fn validate_inputs(&self) -> Result<()> {
        self.validate()?;
        let need = |p: &Path, what: &str| -> Result<()> {
            if p.exists() {
                Ok(())
            } else {
                Err(LcrError::Config(format!("{what} {} does not exist", p.display())))
            }
        };
        match (&self.manifest, &self.minc_root) {
            (Some(m), None) => need(m, "manifest")?,
            (None, Some(r)) => need(r, "MINC root")?,
            _ => return Err(LcrError::Config("no dataset: set `manifest` or `minc_root`".into())),
        }
        if let Some(w) = self.workflow {
            if w.needs_codec() {
                for &q in &self.quality_indices {
                    need(&self.codec_path(q), "codec checkpoint")?;
                }
            }
            if w == Workflow::Anchor1 || w == Workflow::Anchor2 {
                let p = self.classifier_checkpoint.as_ref().ok_or_else(|| {
                    LcrError::Config(format!("{w} needs `classifier_checkpoint` (the anchor3 model)"))
                })?;
                need(p, "classifier checkpoint")?;
            }
        }
        Ok(())
    }
}
