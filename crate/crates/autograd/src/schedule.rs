use crate::error::{AutogradError, Result};

/// Warmup-stable-decay learning-rate schedule with linear ramps.
#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule {
    pub peak_lr: f64,
    pub total_steps: usize,
    pub warmup_frac: f64,
    pub stable_frac: f64,
    pub decay_frac: f64,
}

impl LrSchedule {
    pub fn new(peak_lr: f64, total_steps: usize) -> Self {
        Self {
            peak_lr,
            total_steps,
            warmup_frac: 0.1,
            stable_frac: 0.6,
            decay_frac: 0.3,
        }
    }

    pub fn with_fractions(mut self, warmup: f64, stable: f64, decay: f64) -> Self {
        self.warmup_frac = warmup;
        self.stable_frac = stable;
        self.decay_frac = decay;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let sum = self.warmup_frac + self.stable_frac + self.decay_frac;
        if (sum - 1.0).abs() > 1e-12 {
            return Err(AutogradError::Contract(format!(
                "schedule fractions sum to {sum}, expected 1"
            )));
        }
        if [self.warmup_frac, self.stable_frac, self.decay_frac]
            .iter()
            .any(|f| !(*f >= 0.0))
        {
            return Err(AutogradError::Contract(
                "schedule fractions must be non-negative".into(),
            ));
        }
        if !(self.peak_lr >= 0.0) || self.total_steps == 0 {
            return Err(AutogradError::Contract(
                "schedule needs peak_lr >= 0 and at least one step".into(),
            ));
        }
        Ok(())
    }

    /// `(warmup, stable, decay)` lengths in steps; they sum to `total_steps`.
    pub fn spans(&self) -> (usize, usize, usize) {
        let total = self.total_steps;
        let warmup = ((self.warmup_frac * total as f64).round() as usize).min(total);
        let decay = ((self.decay_frac * total as f64).round() as usize).min(total - warmup);
        (warmup, total - warmup - decay, decay)
    }

    pub fn lr(&self, step: usize) -> Result<f64> {
        wsd_lr(self, step)
    }
}

/// Learning rate at `step`: linear ramp from 0 to peak, plateau at peak, then a
/// linear decay that would reach 0 at `total_steps`.
pub fn wsd_lr(schedule: &LrSchedule, step: usize) -> Result<f64> {
    if step >= schedule.total_steps {
        return Err(AutogradError::Contract(format!(
            "step {step} outside schedule of {} steps",
            schedule.total_steps
        )));
    }
    let (warmup, stable, decay) = schedule.spans();
    let peak = schedule.peak_lr;
    let lr = if step < warmup {
        peak * step as f64 / warmup as f64
    } else if step < warmup + stable {
        peak
    } else {
        peak * (schedule.total_steps - step) as f64 / decay as f64
    };
    Ok(lr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundaries_and_plateau() {
        let s = LrSchedule::new(1e-3, 100);
        s.validate().unwrap();
        assert_eq!(s.spans(), (10, 60, 30));
        assert_eq!(s.lr(0).unwrap(), 0.0);
        assert_eq!(s.lr(10).unwrap(), 1e-3);
        assert_eq!(s.lr(40).unwrap(), 1e-3);
        assert_eq!(s.lr(70).unwrap(), 1e-3);
        assert!((s.lr(99).unwrap() - 1e-3 / 30.0).abs() < 1e-18);
        assert!(s.lr(100).is_err());
    }

    #[test]
    fn fractions_must_sum_to_one() {
        let s = LrSchedule::new(1.0, 10).with_fractions(0.2, 0.2, 0.2);
        assert!(s.validate().is_err());
    }

    #[test]
    fn no_warmup_starts_at_peak() {
        let s = LrSchedule::new(0.5, 10).with_fractions(0.0, 0.5, 0.5);
        assert_eq!(s.lr(0).unwrap(), 0.5);
        assert_eq!(s.lr(9).unwrap(), 0.1);
    }
}
