use crate::error::{Error, Result};

/// Default weight of the centralising penalty.
pub const DEFAULT_LAMBDA: f64 = 0.005;
/// Default initial learning rate for gradient-descent training.
pub const DEFAULT_LEARNING_RATE: f64 = 5e-5;
/// Default per-epoch learning-rate decay.
pub const DEFAULT_LR_DECAY: f64 = 0.98;
pub const DEFAULT_EPOCHS: usize = 200;
pub const DEFAULT_BATCH_SIZE: usize = 4096;
/// Responsibilities are clamped to at least this value so that their
/// logarithms stay finite.
pub const DEFAULT_GAMMA_FLOOR: f64 = 1e-8;
/// Added to every estimated covariance diagonal to keep it positive definite.
pub const DEFAULT_COVARIANCE_FLOOR: f64 = 1e-6;
/// Lower bound on observed per-channel variance so the centralising penalty
/// stays finite on constant channels.
pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-6;

/// Hyperparameters shared by every fitting method.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Number of classes K.
    pub k: usize,
    /// Weight of the centralising penalty (0 disables it).
    pub lambda: f64,
    pub learning_rate: f64,
    /// Per-epoch multiplier applied to the learning rate, in (0, 1].
    pub lr_decay: f64,
    pub epochs: usize,
    /// Pixels per minibatch.
    pub batch_size: usize,
    pub seed: u64,
    pub gamma_floor: f64,
    pub covariance_floor: f64,
    pub variance_floor: f64,
}

impl RunConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        RunConfig {
            k,
            lambda: DEFAULT_LAMBDA,
            learning_rate: DEFAULT_LEARNING_RATE,
            lr_decay: DEFAULT_LR_DECAY,
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            seed,
            gamma_floor: DEFAULT_GAMMA_FLOOR,
            covariance_floor: DEFAULT_COVARIANCE_FLOOR,
            variance_floor: DEFAULT_VARIANCE_FLOOR,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidInput(format!("k must be >= 2, got {}", self.k)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "lr_decay must be in (0, 1], got {}",
                self.lr_decay
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidInput(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidInput("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch_size must be >= 1".into()));
        }
        for (name, v) in [
            ("gamma_floor", self.gamma_floor),
            ("covariance_floor", self.covariance_floor),
            ("variance_floor", self.variance_floor),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}
