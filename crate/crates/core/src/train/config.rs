use std::path::PathBuf;

use netmae_autograd::{AdamWConfig, LrSchedule};

use crate::error::{Error, Result};
use crate::model::MaskMode;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_frac: f64,
    pub stable_frac: f64,
    pub decay_frac: f64,
    pub weight_decay: f64,
    pub mask_mode: MaskMode,
    /// Tokens hidden per sample under random masking; `None` uses the mean
    /// network mask size.
    pub random_mask_size: Option<usize>,
    pub seed: u64,
    /// Epochs without a validation improvement before fine-tuning stops.
    pub patience: usize,
    /// Validation runs after every `eval_every` epochs (and the last).
    pub eval_every: usize,
    /// Fine-tuning updates only the classification head.
    pub frozen_encoder: bool,
    /// Best-validation checkpoint is written here whenever it improves.
    pub checkpoint: Option<PathBuf>,
    /// Progress lines on stderr.
    pub verbose: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 8,
            peak_lr: 1e-3,
            warmup_frac: 0.1,
            stable_frac: 0.6,
            decay_frac: 0.3,
            weight_decay: 0.01,
            mask_mode: MaskMode::Network,
            random_mask_size: None,
            seed: 0,
            patience: 10,
            eval_every: 1,
            frozen_encoder: false,
            checkpoint: None,
            verbose: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Invalid("epochs, batch_size and eval_every must be >= 1".into()));
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return Err(Error::Invalid(format!("peak_lr {} must be > 0", self.peak_lr)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Invalid("weight_decay must be >= 0".into()));
        }
        self.schedule(1).validate()?;
        Ok(())
    }

    pub fn schedule(&self, total_steps: usize) -> LrSchedule {
        LrSchedule::new(self.peak_lr, total_steps).with_fractions(self.warmup_frac, self.stable_frac, self.decay_frac)
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }

    /// Sets one field from its text form, returning `Ok(false)` for keys
    /// that are not training keys. `prefix` distinguishes pretraining
    /// (`""`) from fine-tuning (`"ft_"`) keys in a shared config file.
    pub fn set(&mut self, prefix: &str, key: &str, value: &str) -> Result<bool> {
        let Some(k) = key.strip_prefix(prefix) else {
            return Ok(false);
        };
        let bad = || Error::Invalid(format!("{key}: cannot parse {value:?}"));
        let int = || value.parse::<usize>().map_err(|_| bad());
        let real = || value.parse::<f64>().map_err(|_| bad());
        match k {
            "epochs" => self.epochs = int()?,
            "batch_size" => self.batch_size = int()?,
            "lr" => self.peak_lr = real()?,
            "warmup_frac" => self.warmup_frac = real()?,
            "stable_frac" => self.stable_frac = real()?,
            "decay_frac" => self.decay_frac = real()?,
            "weight_decay" => self.weight_decay = real()?,
            "patience" => self.patience = int()?,
            "eval_every" => self.eval_every = int()?,
            "frozen_encoder" => self.frozen_encoder = value.parse().map_err(|_| bad())?,
            "random_mask_size" => {
                self.random_mask_size = match value {
                    "auto" => None,
                    v => Some(v.parse().map_err(|_| bad())?),
                }
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_kv(&self, prefix: &str) -> String {
        let rms = self
            .random_mask_size
            .map_or_else(|| "auto".to_string(), |n| n.to_string());
        format!(
            "{p}epochs = {}\n{p}batch_size = {}\n{p}lr = {}\n{p}warmup_frac = {}\n\
             {p}stable_frac = {}\n{p}decay_frac = {}\n{p}weight_decay = {}\n{p}patience = {}\n\
             {p}eval_every = {}\n{p}frozen_encoder = {}\n{p}random_mask_size = {rms}\n",
            self.epochs,
            self.batch_size,
            self.peak_lr,
            self.warmup_frac,
            self.stable_frac,
            self.decay_frac,
            self.weight_decay,
            self.patience,
            self.eval_every,
            self.frozen_encoder,
            p = prefix,
        )
    }
}
