use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// SGD hyper-parameters. `schedule` lists `(epoch, divisor)` pairs: from
/// `epoch` onward the learning rate is additionally divided by `divisor`.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub schedule: Vec<(usize, f32)>,
}

impl Default for SgdConfig {
    /// lr 0.01, momentum 0.9, weight decay 5e-4, ÷10 at epochs 10 and 20.
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 0.0005,
            schedule: vec![(10, 10.0), (20, 10.0)],
        }
    }
}

/// SGD with heavy-ball momentum and L2 weight decay:
/// `v ← μ·v + g + λ·w`, `w ← w − lr·v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    config: SgdConfig,
    lr: f32,
    epoch: usize,
    velocity: Vec<Option<Tensor>>,
}

impl Sgd {
    pub fn new(config: SgdConfig) -> Result<Self> {
        if !(config.learning_rate >= 0.0 && config.learning_rate.is_finite()) {
            return Err(TensorError::InvalidArgument(format!(
                "learning rate must be finite and nonnegative, got {}",
                config.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&config.momentum) {
            return Err(TensorError::InvalidArgument(format!(
                "momentum must lie in [0, 1), got {}",
                config.momentum
            )));
        }
        if !(config.weight_decay >= 0.0) {
            return Err(TensorError::InvalidArgument(format!(
                "weight decay must be nonnegative, got {}",
                config.weight_decay
            )));
        }
        if let Some((e, d)) = config.schedule.iter().find(|(_, d)| !(*d > 0.0)) {
            return Err(TensorError::InvalidArgument(format!(
                "schedule divisor at epoch {e} must be positive, got {d}"
            )));
        }
        Ok(Self {
            lr: config.learning_rate,
            config,
            epoch: 0,
            velocity: Vec::new(),
        })
    }

    pub fn config(&self) -> &SgdConfig {
        &self.config
    }

    pub fn learning_rate(&self) -> f32 {
        self.lr
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Moves to `epoch` (0-based) and recomputes the scheduled learning rate.
    pub fn set_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
        let divisor: f32 = self
            .config
            .schedule
            .iter()
            .filter(|(e, _)| *e <= epoch)
            .map(|(_, d)| d)
            .product();
        self.lr = self.config.learning_rate / divisor;
    }

    /// Applies one update to every learnable parameter and zeroes all
    /// gradients. A non-finite gradient aborts the step before anything moves.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if let Some((_, p)) = store
            .iter()
            .find(|(_, p)| p.learnable() && !p.grad().all_finite())
        {
            return Err(TensorError::NonFinite(format!("gradient of {}", p.name())));
        }
        if self.velocity.len() < store.len() {
            self.velocity.resize(store.len(), None);
        }
        let (mu, wd, lr) = (self.config.momentum, self.config.weight_decay, self.lr);
        for (id, p) in store.grads_and_values_mut() {
            if !p.learnable() {
                continue;
            }
            let v = self.velocity[id.0].get_or_insert_with(|| Tensor::zeros(p.value().shape()));
            let grad = p.grad().data().to_vec();
            let value = p.value_mut();
            for ((vv, g), w) in v.data_mut().iter_mut().zip(&grad).zip(value.data_mut()) {
                *vv = mu * *vv + g + wd * *w;
                *w -= lr * *vv;
            }
            p.grad_mut().fill(0.0);
        }
        Ok(())
    }

    pub fn velocity(&self, id: crate::params::ParamId) -> Option<&Tensor> {
        self.velocity.get(id.0).and_then(Option::as_ref)
    }
}
