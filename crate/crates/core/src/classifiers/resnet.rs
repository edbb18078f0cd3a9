//! Bottleneck ResNets: the pixel-domain ResNet-50 variant and the
//! compressed-domain cResNet-39 with separate `ŷ` and `σ̂` stems.

use lcr_tensor::init::seeded_rng;
use lcr_tensor::layers::{BatchNorm2d, Conv2d, Linear};
use lcr_tensor::{Checkpoint, Graph, Mode, ParamId, ParamStore, Preamble, Tensor, Var};

use crate::error::{LcrError, Result};

pub const DEFAULT_NUM_CLASSES: usize = 23;

/// `(w1, w2, w3)` widths, block count, and first-block stride per stage.
pub const STAGES: [((usize, usize, usize), usize, usize); 4] = [
    ((64, 64, 256), 3, 1),
    ((128, 128, 512), 4, 2),
    ((256, 256, 1024), 6, 2),
    ((512, 512, 2048), 3, 2),
];

pub const STEM_WIDTHS: [usize; 3] = [64, 64, 128];
pub const LATENT_STEM: (usize, usize, usize) = (32, 32, 128);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    ResNet50,
    CResNet39,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::ResNet50 => "resnet50",
            Variant::CResNet39 => "cresnet39",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "resnet50" => Ok(Variant::ResNet50),
            "cresnet39" => Ok(Variant::CResNet39),
            other => Err(LcrError::Config(format!("unknown classifier variant {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub variant: Variant,
    pub num_classes: usize,
    /// 3 for pixels; latent channels `C` (per stem) for the compressed variant.
    pub in_channels: usize,
}

impl ClassifierConfig {
    pub fn resnet50(num_classes: usize) -> Self {
        Self { variant: Variant::ResNet50, num_classes, in_channels: 3 }
    }

    pub fn cresnet39(num_classes: usize, latent_channels: usize) -> Self {
        Self { variant: Variant::CResNet39, num_classes, in_channels: latent_channels }
    }

    fn to_preamble(&self) -> Preamble {
        let mut p = Preamble::new();
        p.insert("kind".into(), "classifier".into());
        p.insert("variant".into(), self.variant.as_str().into());
        p.insert("num_classes".into(), self.num_classes.to_string());
        p.insert("in_channels".into(), self.in_channels.to_string());
        p
    }

    fn from_preamble(p: &Preamble) -> Result<Self> {
        if p.get("kind").map(String::as_str) != Some("classifier") {
            return Err(LcrError::Config("checkpoint does not hold a classifier".into()));
        }
        let num = |k: &str| -> Result<usize> {
            p.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| LcrError::Config(format!("classifier checkpoint lacks {k}")))
        };
        Ok(Self {
            variant: Variant::parse(p.get("variant").map(String::as_str).unwrap_or(""))?,
            num_classes: num("num_classes")?,
            in_channels: num("in_channels")?,
        })
    }
}

/// Classifier input for one batch.
#[derive(Clone, Debug)]
pub enum Inputs {
    Pixel(Tensor),
    Latent { y_hat: Tensor, sigma_hat: Tensor },
}

impl Inputs {
    pub fn batch_len(&self) -> usize {
        match self {
            Inputs::Pixel(t) => t.shape()[0],
            Inputs::Latent { y_hat, .. } => y_hat.shape()[0],
        }
    }

    /// Stacks single-sample inputs of one kind into a batch.
    pub fn stack(items: &[Inputs]) -> Result<Inputs> {
        let first = items
            .first()
            .ok_or_else(|| LcrError::Invalid("empty batch".into()))?;
        match first {
            Inputs::Pixel(_) => {
                let ts = items
                    .iter()
                    .map(|i| match i {
                        Inputs::Pixel(t) => Ok(t.clone()),
                        _ => Err(LcrError::Invalid("mixed input kinds in one batch".into())),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Inputs::Pixel(Tensor::stack(&ts)?))
            }
            Inputs::Latent { .. } => {
                let (mut ys, mut ss) = (Vec::new(), Vec::new());
                for i in items {
                    match i {
                        Inputs::Latent { y_hat, sigma_hat } => {
                            ys.push(y_hat.clone());
                            ss.push(sigma_hat.clone());
                        }
                        _ => return Err(LcrError::Invalid("mixed input kinds in one batch".into())),
                    }
                }
                Ok(Inputs::Latent {
                    y_hat: Tensor::stack(&ys)?,
                    sigma_hat: Tensor::stack(&ss)?,
                })
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Bottleneck {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    conv3: Conv2d,
    bn3: BatchNorm2d,
    projection: Option<(Conv2d, BatchNorm2d)>,
}

impl Bottleneck {
    fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        (w1, w2, w3): (usize, usize, usize),
        stride: usize,
        rng: &mut lcr_tensor::init::Rng,
    ) -> Self {
        let projection = (stride != 1 || c_in != w3).then(|| {
            (
                Conv2d::new(store, &format!("{name}.proj"), c_in, w3, 1, stride, 0, false, rng),
                BatchNorm2d::new(store, &format!("{name}.proj_bn"), w3),
            )
        });
        Self {
            conv1: Conv2d::new(store, &format!("{name}.conv1"), c_in, w1, 1, 1, 0, false, rng),
            bn1: BatchNorm2d::new(store, &format!("{name}.bn1"), w1),
            conv2: Conv2d::new(store, &format!("{name}.conv2"), w1, w2, 3, stride, 1, false, rng),
            bn2: BatchNorm2d::new(store, &format!("{name}.bn2"), w2),
            conv3: Conv2d::new(store, &format!("{name}.conv3"), w2, w3, 1, 1, 0, false, rng),
            bn3: BatchNorm2d::new(store, &format!("{name}.bn3"), w3),
            projection,
        }
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, x: &Var, mode: Mode) -> Result<Var> {
        let h = self.conv1.forward(g, store, x)?;
        let h = self.bn1.forward(g, store, &h, mode)?;
        let h = g.relu(&h);
        let h = self.conv2.forward(g, store, &h)?;
        let h = self.bn2.forward(g, store, &h, mode)?;
        let h = g.relu(&h);
        let h = self.conv3.forward(g, store, &h)?;
        let h = self.bn3.forward(g, store, &h, mode)?;
        let shortcut = match &self.projection {
            Some((conv, bn)) => {
                let s = conv.forward(g, store, x)?;
                bn.forward(g, store, &s, mode)?
            }
            None => x.clone(),
        };
        let sum = g.add(&h, &shortcut)?;
        Ok(g.relu(&sum))
    }

    pub fn has_projection(&self) -> bool {
        self.projection.is_some()
    }
}

/// Output shape after each named stage, for shape audits.
pub type StageTrace = Vec<(&'static str, Vec<usize>)>;

pub struct Classifier {
    config: ClassifierConfig,
    store: ParamStore,
    stem: Vec<(Conv2d, BatchNorm2d)>,
    latent_stems: Option<(Bottleneck, Bottleneck)>,
    stages: Vec<Vec<Bottleneck>>,
    fc: Linear,
    sigma_mean: Option<ParamId>,
    sigma_std: Option<ParamId>,
}

impl Classifier {
    pub fn new(config: ClassifierConfig, seed: u64) -> Result<Self> {
        if config.num_classes == 0 || config.in_channels == 0 {
            return Err(LcrError::Config("classifier needs classes and input channels".into()));
        }
        let mut rng = seeded_rng(seed);
        let rng = &mut rng;
        let mut store = ParamStore::new();
        let mut stem = Vec::new();
        let mut latent_stems = None;
        let (mut sigma_mean, mut sigma_std) = (None, None);
        let first_stage;
        let mut c_in;
        match config.variant {
            Variant::ResNet50 => {
                c_in = config.in_channels;
                for (i, &w) in STEM_WIDTHS.iter().enumerate() {
                    let stride = if i == 0 { 2 } else { 1 };
                    stem.push((
                        Conv2d::new(&mut store, &format!("stem.conv{i}"), c_in, w, 3, stride, 1, false, rng),
                        BatchNorm2d::new(&mut store, &format!("stem.bn{i}"), w),
                    ));
                    c_in = w;
                }
                first_stage = 0;
            }
            Variant::CResNet39 => {
                let c = config.in_channels;
                latent_stems = Some((
                    Bottleneck::new(&mut store, "stem_y", c, LATENT_STEM, 1, rng),
                    Bottleneck::new(&mut store, "stem_sigma", c, LATENT_STEM, 1, rng),
                ));
                sigma_mean = Some(store.add("sigma_norm.mean", Tensor::zeros(&[c]), false));
                sigma_std = Some(store.add("sigma_norm.std", Tensor::ones(&[c]), false));
                c_in = 2 * LATENT_STEM.2;
                first_stage = 1;
            }
        }
        let mut stages = Vec::new();
        for (s, &(widths, count, stride)) in STAGES.iter().enumerate().skip(first_stage) {
            let mut blocks = Vec::new();
            for b in 0..count {
                let name = format!("conv{}_x.{b}", s + 2);
                let st = if b == 0 { stride } else { 1 };
                blocks.push(Bottleneck::new(&mut store, &name, c_in, widths, st, rng));
                c_in = widths.2;
            }
            stages.push(blocks);
        }
        let fc = Linear::new(&mut store, "fc", c_in, config.num_classes, rng);
        Ok(Self {
            config,
            store,
            stem,
            latent_stems,
            stages,
            fc,
            sigma_mean,
            sigma_std,
        })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_store(&self.store, self.config.to_preamble())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config = ClassifierConfig::from_preamble(&ckpt.preamble)?;
        let mut model = Self::new(config, 0)?;
        ckpt.load_into(&mut model.store)?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        Ok(self.checkpoint().save(path)?)
    }

    /// Sets the per-channel mean and standard deviation of `log σ̂` used to
    /// condition the scale stem.
    pub fn set_sigma_normalization(&mut self, mean: Tensor, std: Tensor) -> Result<()> {
        let (m, s) = match (self.sigma_mean, self.sigma_std) {
            (Some(m), Some(s)) => (m, s),
            _ => return Err(LcrError::Invalid("only the compressed variant consumes σ̂".into())),
        };
        if std.data().iter().any(|&v| !(v > 0.0)) {
            return Err(LcrError::Invalid("σ̂ normalization needs positive deviations".into()));
        }
        self.store.set_value(m, mean)?;
        self.store.set_value(s, std)?;
        Ok(())
    }

    fn normalize_sigma(&self, sigma: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = sigma.dims4()?;
        let (m, s) = (self.sigma_mean.expect("compressed"), self.sigma_std.expect("compressed"));
        let (mean, std) = (self.store.value(m).data(), self.store.value(s).data());
        if mean.len() != c {
            return Err(LcrError::Invalid(format!("σ̂ has {c} channels, model expects {}", mean.len())));
        }
        let hw = h * w;
        Ok(Tensor::from_fn(&[n, c, h, w], |i| {
            let ch = (i / hw) % c;
            (sigma.data()[i].max(f32::MIN_POSITIVE).ln() - mean[ch]) / std[ch]
        }))
    }

    fn check_inputs(&self, inputs: &Inputs) -> Result<()> {
        match (self.config.variant, inputs) {
            (Variant::ResNet50, Inputs::Pixel(t)) => {
                let (_, c, _, _) = t.dims4()?;
                if c != self.config.in_channels {
                    return Err(LcrError::Invalid(format!("expected {} input channels, got {c}", self.config.in_channels)));
                }
                Ok(())
            }
            (Variant::CResNet39, Inputs::Latent { y_hat, sigma_hat }) => {
                if y_hat.shape() != sigma_hat.shape() {
                    return Err(LcrError::Invalid(format!(
                        "ŷ {:?} and σ̂ {:?} differ in shape",
                        y_hat.shape(),
                        sigma_hat.shape()
                    )));
                }
                let (_, c, _, _) = y_hat.dims4()?;
                if c != self.config.in_channels {
                    return Err(LcrError::Invalid(format!("expected {} latent channels, got {c}", self.config.in_channels)));
                }
                Ok(())
            }
            (Variant::CResNet39, Inputs::Pixel(_)) => Err(LcrError::Invalid(
                "the compressed-domain classifier needs both ŷ and σ̂".into(),
            )),
            (Variant::ResNet50, Inputs::Latent { .. }) => Err(LcrError::Invalid(
                "the pixel-domain classifier takes images, not latents".into(),
            )),
        }
    }

    /// Logits `N × num_classes`, optionally recording each stage's output shape.
    pub fn forward_traced(
        &self,
        g: &mut Graph,
        inputs: &Inputs,
        mode: Mode,
        mut trace: Option<&mut StageTrace>,
    ) -> Result<Var> {
        self.check_inputs(inputs)?;
        let store = &self.store;
        let mut note = |name: &'static str, v: &Var| {
            if let Some(t) = trace.as_deref_mut() {
                t.push((name, v.shape().to_vec()));
            }
        };
        let mut h = match inputs {
            Inputs::Pixel(x) => {
                let mut h = g.constant(x.clone());
                for (conv, bn) in &self.stem {
                    h = conv.forward(g, store, &h)?;
                    h = bn.forward(g, store, &h, mode)?;
                    h = g.relu(&h);
                }
                note("stem", &h);
                let h = g.max_pool3x3s2(&h)?;
                note("pool", &h);
                h
            }
            Inputs::Latent { y_hat, sigma_hat } => {
                let (sy, ss) = self.latent_stems.as_ref().expect("compressed variant");
                let y = g.constant(y_hat.clone());
                let s = g.constant(self.normalize_sigma(sigma_hat)?);
                let a = sy.forward(g, store, &y, mode)?;
                let b = ss.forward(g, store, &s, mode)?;
                let h = g.concat_channels(&a, &b)?;
                note("stems", &h);
                h
            }
        };
        const NAMES: [&str; 4] = ["conv2_x", "conv3_x", "conv4_x", "conv5_x"];
        let offset = 4 - self.stages.len();
        for (i, stage) in self.stages.iter().enumerate() {
            for block in stage {
                h = block.forward(g, store, &h, mode)?;
            }
            note(NAMES[i + offset], &h);
        }
        let pooled = g.global_avg_pool(&h)?;
        note("pool_fc", &pooled);
        Ok(self.fc.forward(g, store, &pooled)?)
    }

    pub fn forward(&self, g: &mut Graph, inputs: &Inputs, mode: Mode) -> Result<Var> {
        self.forward_traced(g, inputs, mode, None)
    }

    /// Evaluation-mode logits.
    pub fn logits(&self, inputs: &Inputs) -> Result<Tensor> {
        let mut g = Graph::inference();
        Ok(self.forward(&mut g, inputs, Mode::Eval)?.into_tensor())
    }

    /// Evaluation-mode class probabilities.
    pub fn probabilities(&self, inputs: &Inputs) -> Result<Tensor> {
        let logits = self.logits(inputs)?;
        let k = self.config.num_classes;
        let p = lcr_tensor::ops::softmax_rows(logits.data(), k);
        Ok(Tensor::new(logits.shape(), p)?)
    }

    /// Weighted layers (convolutions on the main path plus the classifier
    /// head) per stage; projection shortcuts are not counted.
    pub fn layer_census(&self) -> Vec<(&'static str, usize)> {
        let mut out = Vec::new();
        if !self.stem.is_empty() {
            out.push(("stem", self.stem.len()));
        }
        if self.latent_stems.is_some() {
            out.push(("stems", 6));
        }
        const NAMES: [&str; 4] = ["conv2_x", "conv3_x", "conv4_x", "conv5_x"];
        let offset = 4 - self.stages.len();
        for (i, stage) in self.stages.iter().enumerate() {
            out.push((NAMES[i + offset], 3 * stage.len()));
        }
        out.push(("fc", 1));
        out
    }

    pub fn stages(&self) -> &[Vec<Bottleneck>] {
        &self.stages
    }
}

/// Indices of the `k` largest logits, descending; ties go to the lower index.
pub fn predict_topk(logits: &[f32], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > logits.len() {
        return Err(LcrError::Invalid(format!(
            "k = {k} outside 1..={}",
            logits.len()
        )));
    }
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    idx.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}

/// [`predict_topk`] for every row of an `N × K` logit matrix.
pub fn predict_topk_rows(logits: &Tensor, k: usize) -> Result<Vec<Vec<usize>>> {
    let (_, classes) = logits.dims2()?;
    logits
        .data()
        .chunks(classes)
        .map(|row| predict_topk(row, k))
        .collect()
}
