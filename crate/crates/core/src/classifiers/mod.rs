//! Pixel-domain and compressed-domain texture classifiers.

pub mod resnet;
pub mod train;

pub use resnet::{
    predict_topk, predict_topk_rows, Classifier, ClassifierConfig, Inputs, Variant,
    DEFAULT_NUM_CLASSES,
};
pub use train::{
    epoch_order, evaluate, sample_seed, train_classifier, train_classifier_with,
    ClassifierTrainConfig, EpochRecord, Evaluation, SampleSource, TrainOutcome,
};
