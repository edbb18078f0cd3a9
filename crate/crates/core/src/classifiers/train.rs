//! Supervised classifier training with SGD and best-validation retention.

use std::time::Instant;

use lcr_tensor::{Graph, Mode, ParamStore, Sgd, SgdConfig};
use rand::seq::SliceRandom;

use super::resnet::{predict_topk_rows, Classifier, Inputs};
use crate::error::{LcrError, Result};
use crate::metrics::accuracy_topk;

/// Indexed, labelled samples. `augment` carries a per-draw seed for training
/// draws and is `None` for deterministic evaluation.
pub trait SampleSource {
    fn len(&self) -> usize;
    fn label(&self, index: usize) -> usize;
    fn input(&self, index: usize, augment: Option<u64>) -> Result<Inputs>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
    pub seed: u64,
    /// Stop once validation Top-1 (percent) reaches this value.
    pub target_top1: Option<f64>,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            sgd: SgdConfig::default(),
            seed: 0,
            target_top1: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f32,
    pub train_loss: f64,
    pub val_top1: f64,
    pub val_top5: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_top1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// Ranked class indices per sample, at most five deep.
    pub rankings: Vec<Vec<usize>>,
    pub labels: Vec<usize>,
    pub top1: f64,
    pub top5: f64,
}

/// Seed of the augmentation draw for `index` in `epoch`.
pub fn sample_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    let mut z = seed
        ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Visiting order of the training set in `epoch`.
pub fn epoch_order(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = lcr_tensor::init::seeded_rng(sample_seed(seed, epoch, usize::MAX));
    order.shuffle(&mut rng);
    order
}

fn gather(source: &dyn SampleSource, indices: &[usize], augment: impl Fn(usize) -> Option<u64>) -> Result<(Inputs, Vec<usize>)> {
    let items = indices
        .iter()
        .map(|&i| source.input(i, augment(i)))
        .collect::<Result<Vec<_>>>()?;
    let labels = indices.iter().map(|&i| source.label(i)).collect();
    Ok((Inputs::stack(&items)?, labels))
}

/// Evaluation-mode Top-1/Top-5 over every sample of `source`.
pub fn evaluate(model: &Classifier, source: &dyn SampleSource, batch_size: usize) -> Result<Evaluation> {
    if source.is_empty() {
        return Err(LcrError::Data("cannot evaluate on an empty split".into()));
    }
    let k = model.config().num_classes.min(5);
    let indices: Vec<usize> = (0..source.len()).collect();
    let mut rankings = Vec::with_capacity(source.len());
    let mut labels = Vec::with_capacity(source.len());
    for chunk in indices.chunks(batch_size.max(1)) {
        let (inputs, l) = gather(source, chunk, |_| None)?;
        let logits = model.logits(&inputs)?;
        if !logits.all_finite() {
            return Err(LcrError::Numeric("non-finite logits during evaluation".into()));
        }
        rankings.extend(predict_topk_rows(&logits, k)?);
        labels.extend(l);
    }
    let top1 = accuracy_topk(&rankings, &labels, 1)?;
    let top5 = accuracy_topk(&rankings, &labels, k)?;
    Ok(Evaluation { rankings, labels, top1, top5 })
}

pub fn train_classifier(
    model: &mut Classifier,
    train: &dyn SampleSource,
    val: &dyn SampleSource,
    cfg: &ClassifierTrainConfig,
) -> Result<TrainOutcome> {
    train_classifier_with(model, train, val, cfg, |_| {})
}

/// Trains for up to `cfg.epochs`, keeping the parameters of the epoch with
/// the best validation Top-1 (earliest on ties). A non-finite loss or
/// gradient restores the last completed epoch and returns
/// [`LcrError::Numeric`].
pub fn train_classifier_with(
    model: &mut Classifier,
    train: &dyn SampleSource,
    val: &dyn SampleSource,
    cfg: &ClassifierTrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(LcrError::Data("no training samples".into()));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(LcrError::Config("batch size and epoch count must be positive".into()));
    }
    let classes = model.config().num_classes;
    for i in 0..train.len() {
        if train.label(i) >= classes {
            return Err(LcrError::Data(format!("label {} outside {classes} classes", train.label(i))));
        }
    }
    let mut sgd = Sgd::new(cfg.sgd.clone())?;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut last_good: ParamStore = model.store().clone();
    let mut best: Option<(usize, f64, ParamStore)> = None;
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        sgd.set_epoch(epoch);
        let order = epoch_order(train.len(), cfg.seed, epoch);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let step = (|| -> Result<f64> {
                let (inputs, labels) = gather(train, chunk, |i| Some(sample_seed(cfg.seed, epoch, i)))?;
                let mut g = Graph::new();
                let logits = model.forward(&mut g, &inputs, Mode::Train)?;
                let loss = g.cross_entropy(&logits, &labels)?;
                let l = loss.value().item() as f64;
                if !l.is_finite() {
                    return Err(LcrError::Numeric(format!("non-finite loss in epoch {}", epoch + 1)));
                }
                g.backward(&loss, model.store_mut())?;
                let updates = g.take_buffer_updates();
                sgd.step(model.store_mut())?;
                model.store_mut().apply_buffer_updates(updates)?;
                Ok(l)
            })();
            match step {
                Ok(l) => {
                    loss_sum += l * chunk.len() as f64;
                    seen += chunk.len();
                }
                Err(e) => {
                    *model.store_mut() = last_good;
                    model.store_mut().zero_grads();
                    return Err(match e {
                        LcrError::Tensor(lcr_tensor::TensorError::NonFinite(m)) => LcrError::Numeric(m),
                        other => other,
                    });
                }
            }
        }
        let eval = evaluate(model, val, cfg.batch_size)?;
        let record = EpochRecord {
            epoch: epoch + 1,
            learning_rate: sgd.learning_rate(),
            train_loss: loss_sum / seen as f64,
            val_top1: eval.top1,
            val_top5: eval.top5,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        last_good = model.store().clone();
        if best.as_ref().is_none_or(|(_, b, _)| eval.top1 > *b) {
            best = Some((epoch + 1, eval.top1, last_good.clone()));
        }
        history.push(record);
        if cfg.target_top1.is_some_and(|t| eval.top1 >= t) {
            break;
        }
    }
    let (best_epoch, best_val_top1, store) = best.expect("at least one epoch");
    *model.store_mut() = store;
    Ok(TrainOutcome { history, best_epoch, best_val_top1 })
}
