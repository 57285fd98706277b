use super::params::ParamStore;
use crate::config::{OptimizerKind, TrainConfig};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerSpec {
    Sgd { lr: f64, momentum: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerSpec {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        match cfg.optimizer {
            OptimizerKind::Sgd => OptimizerSpec::Sgd { lr: cfg.lr, momentum: cfg.momentum },
            OptimizerKind::Adam => {
                OptimizerSpec::Adam { lr: cfg.lr, beta1: cfg.beta1, beta2: cfg.beta2, eps: cfg.adam_eps }
            }
        }
    }

    fn lr(&self) -> f64 {
        match *self {
            OptimizerSpec::Sgd { lr, .. } | OptimizerSpec::Adam { lr, .. } => lr,
        }
    }
}

/// Optimizer with per-tensor state, updating the trainable tensors of a
/// [`ParamStore`] from their gradient buffers.
#[derive(Clone, Debug)]
pub struct Optimizer {
    spec: OptimizerSpec,
    scale: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(spec: OptimizerSpec) -> Result<Self> {
        let lr = spec.lr();
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::Parameter(format!("learning rate must be > 0, got {lr}")));
        }
        match spec {
            OptimizerSpec::Sgd { momentum, .. } if !(0.0..1.0).contains(&momentum) => {
                return Err(Error::Parameter(format!("momentum must be in [0, 1), got {momentum}")));
            }
            OptimizerSpec::Adam { beta1, beta2, eps, .. }
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) =>
            {
                return Err(Error::Parameter("adam needs betas in [0, 1) and eps > 0".into()));
            }
            _ => {}
        }
        Ok(Self { spec, scale: 1.0, step: 0, first: Vec::new(), second: Vec::new() })
    }

    /// Multiplies the configured learning rate by `scale` from now on.
    pub fn set_lr_scale(&mut self, scale: f64) {
        self.scale = scale;
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step<T: Real>(&mut self, params: &mut ParamStore<T>) {
        if self.first.is_empty() {
            self.first = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        for ((tensor, m), v) in params.tensors_mut().iter_mut().zip(&mut self.first).zip(&mut self.second) {
            if !tensor.trainable {
                continue;
            }
            for (i, (p, g)) in tensor.data.iter_mut().zip(&tensor.grad).enumerate() {
                let g = Real::to_f64(*g);
                let delta = match self.spec {
                    OptimizerSpec::Sgd { lr, momentum } => {
                        m[i] = momentum * m[i] + g;
                        lr * m[i]
                    }
                    OptimizerSpec::Adam { lr, beta1, beta2, eps } => {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                        let m_hat = m[i] / (1.0 - beta1.powi(t));
                        let v_hat = v[i] / (1.0 - beta2.powi(t));
                        lr * m_hat / (v_hat.sqrt() + eps)
                    }
                };
                *p = T::of(p.to_f64() - self.scale * delta);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Tensor;

    fn store(values: &[f64], grads: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let mut t = Tensor::new("w", vec![values.len()], values.to_vec(), true).unwrap();
        t.grad = grads.to_vec();
        s.insert(t).unwrap();
        s.insert(Tensor::new("frozen", vec![1], vec![7.0], false).unwrap()).unwrap();
        s
    }

    #[test]
    fn sgd_step() {
        let mut s = store(&[1.0, -2.0], &[0.5, -1.0]);
        let mut opt = Optimizer::new(OptimizerSpec::Sgd { lr: 0.1, momentum: 0.0 }).unwrap();
        opt.step(&mut s);
        assert_eq!(s.get("w").unwrap().data, vec![1.0 - 0.05, -2.0 + 0.1]);
        assert_eq!(s.get("frozen").unwrap().data, vec![7.0]);
    }

    #[test]
    fn adam_first_step_is_sign_scaled() {
        let g = [0.3, -4.0, 1e-3];
        let mut s = store(&[0.0; 3], &g);
        let spec = OptimizerSpec::Adam { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        Optimizer::new(spec).unwrap().step(&mut s);
        for (p, g) in s.get("w").unwrap().data.iter().zip(g) {
            let expected = -1e-3 * g / (g.abs() + 1e-8);
            assert!((p - expected).abs() < 1e-15, "{p} vs {expected}");
        }
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        for spec in [
            OptimizerSpec::Sgd { lr: 0.5, momentum: 0.9 },
            OptimizerSpec::Adam { lr: 0.5, beta1: 0.9, beta2: 0.999, eps: 1e-8 },
        ] {
            let mut s = store(&[1.5, -0.25], &[0.0, 0.0]);
            let mut opt = Optimizer::new(spec).unwrap();
            opt.step(&mut s);
            opt.step(&mut s);
            assert_eq!(s.get("w").unwrap().data, vec![1.5, -0.25]);
        }
    }

    #[test]
    fn rejects_bad_learning_rate() {
        for lr in [0.0, -1e-3, f64::NAN] {
            assert!(matches!(Optimizer::new(OptimizerSpec::Sgd { lr, momentum: 0.0 }), Err(Error::Parameter(_))));
        }
    }
}
