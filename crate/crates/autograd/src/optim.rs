use crate::error::{AutogradError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Adam moments for a fixed, ordered list of parameters.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    names: Vec<String>,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl OptimizerState {
    pub fn new(config: AdamWConfig, names: Vec<String>, params: &[Tensor]) -> Self {
        assert_eq!(names.len(), params.len(), "one name per parameter");
        Self {
            config,
            names,
            first: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, i: usize) -> &Tensor {
        &self.first[i]
    }

    pub fn second_moment(&self, i: usize) -> &Tensor {
        &self.second[i]
    }

    /// One decoupled-weight-decay Adam update over every parameter.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        self.step_masked(params, grads, lr, None)
    }

    /// Like [`step`](Self::step), but parameters whose `trainable` flag is
    /// false are left bitwise untouched (their moments too).
    pub fn step_masked(
        &mut self,
        params: &mut [Tensor],
        grads: &[Tensor],
        lr: f64,
        trainable: Option<&[bool]>,
    ) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(AutogradError::Contract(format!(
                "optimizer tracks {} parameters, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        if !(lr >= 0.0) {
            return Err(AutogradError::Contract(format!(
                "learning rate must be non-negative, got {lr}"
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first[i].shape() {
                return Err(AutogradError::Shape {
                    op: "adamw_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if g.data().iter().any(|x| x.is_nan()) {
                return Err(AutogradError::NanGradient {
                    name: self.names[i].clone(),
                });
            }
        }

        self.step += 1;
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);

        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if trainable.is_some_and(|mask| !mask[i]) {
                continue;
            }
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= lr * weight_decay * *w;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_state(wd: f64) -> OptimizerState {
        let cfg = AdamWConfig {
            weight_decay: wd,
            ..AdamWConfig::default()
        };
        OptimizerState::new(cfg, vec!["theta".into()], &[Tensor::scalar(1.0)])
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut st = scalar_state(0.0);
        let mut p = vec![Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap()];
        st = OptimizerState::new(st.config, vec!["p".into()], &p);
        let before = p.clone();
        st.step(&mut p, &[Tensor::zeros(&[3])], 1e-2).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn single_step_on_square_matches_hand_trace() {
        // f(θ) = θ², θ0 = 1 → g = 2.
        // m1 = 0.1·2 = 0.2, v1 = 0.001·4 = 0.004
        // m̂ = 0.2/0.1 = 2, v̂ = 0.004/0.001 = 4
        // θ1 = 1 − lr·wd·1 − lr·2/(2 + 1e-8)
        let lr = 0.1;
        let wd = 0.01;
        let mut st = scalar_state(wd);
        let mut p = vec![Tensor::scalar(1.0)];
        st.step(&mut p, &[Tensor::scalar(2.0)], lr).unwrap();
        let after_decay = 1.0 - lr * wd * 1.0;
        let expected = after_decay - lr * 2.0 / (2.0 + 1e-8);
        assert!((p[0].data()[0] - expected).abs() < 1e-15);
        assert!((st.first_moment(0).data()[0] - 0.2).abs() < 1e-15);
        assert!((st.second_moment(0).data()[0] - 0.004).abs() < 1e-15);
    }

    #[test]
    fn decoupled_decay_with_zero_gradient() {
        let lr = 0.05;
        let wd = 0.2;
        let mut st = scalar_state(wd);
        let theta = -3.0;
        let mut p = vec![Tensor::scalar(theta)];
        st.step(&mut p, &[Tensor::scalar(0.0)], lr).unwrap();
        assert!((p[0].data()[0] - (theta - lr * wd * theta)).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let mut st = scalar_state(0.0);
        let mut p = vec![Tensor::scalar(1.0)];
        let err = st.step(&mut p, &[Tensor::scalar(f64::NAN)], 1e-3).unwrap_err();
        assert_eq!(err, AutogradError::NanGradient { name: "theta".into() });
        assert_eq!(p[0].data()[0], 1.0);
    }

    #[test]
    fn masked_step_leaves_frozen_parameters() {
        let params = vec![Tensor::scalar(1.0), Tensor::scalar(2.0)];
        let mut st = OptimizerState::new(AdamWConfig::default(), vec!["a".into(), "b".into()], &params);
        let mut p = params.clone();
        let g = vec![Tensor::scalar(1.0), Tensor::scalar(1.0)];
        st.step_masked(&mut p, &g, 0.1, Some(&[false, true])).unwrap();
        assert_eq!(p[0], params[0]);
        assert_ne!(p[1], params[1]);
    }

    #[test]
    fn negative_lr_rejected() {
        let mut st = scalar_state(0.0);
        let mut p = vec![Tensor::scalar(1.0)];
        assert!(st.step(&mut p, &[Tensor::scalar(0.0)], -1.0).is_err());
    }
}
