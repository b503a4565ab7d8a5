use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};
use super::{NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
    Sgd {
        lr: f64,
        #[serde(default)]
        momentum: f64,
    },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                lr > 0.0 && (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0
            }
            OptimizerConfig::Sgd { lr, momentum } => lr > 0.0 && (0.0..1.0).contains(&momentum),
        };
        if ok {
            Ok(())
        } else {
            Err(NnError::Config(format!("optimizer settings out of range: {self:?}")))
        }
    }
}

/// Optimizer state, one slot per parameter tensor in `params_mut` order.
pub struct Optimizer<T> {
    pub config: OptimizerConfig,
    steps: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            steps: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn learning_rate(&self) -> f64 {
        match self.config {
            OptimizerConfig::Adam { lr, .. } | OptimizerConfig::Sgd { lr, .. } => lr,
        }
    }

    /// Changes the step size, keeping the moment estimates.
    pub fn set_learning_rate(&mut self, new: f64) {
        match &mut self.config {
            OptimizerConfig::Adam { lr, .. } | OptimizerConfig::Sgd { lr, .. } => *lr = new,
        }
    }

    /// Applies one update from the accumulated gradients. Gradients are
    /// left untouched.
    pub fn step(&mut self, params: Vec<&mut Tensor<T>>) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() || self.m.iter().zip(&params).any(|(m, p)| m.len() != p.len()) {
            return Err(NnError::State("optimizer: parameter layout changed between steps".into()));
        }
        self.steps += 1;
        match self.config {
            OptimizerConfig::Sgd { lr, momentum } => {
                let (lr, mu) = (T::c(lr), T::c(momentum));
                for (p, vel) in params.into_iter().zip(&mut self.m) {
                    let Some(g) = p.grad.as_ref() else { continue };
                    for ((w, &gi), vi) in p.data.iter_mut().zip(g).zip(vel.iter_mut()) {
                        *vi = mu * *vi + gi;
                        *w -= lr * *vi;
                    }
                }
            }
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                let t = self.steps as i32;
                let c1 = T::c(1.0 - beta1.powi(t));
                let c2 = T::c(1.0 - beta2.powi(t));
                let (lr, b1, b2, eps) = (T::c(lr), T::c(beta1), T::c(beta2), T::c(eps));
                let one = T::one();
                for ((p, m), v) in params.into_iter().zip(&mut self.m).zip(&mut self.v) {
                    let Some(g) = p.grad.as_ref() else { continue };
                    for (((w, &gi), mi), vi) in p.data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = b1 * *mi + (one - b1) * gi;
                        *vi = b2 * *vi + (one - b2) * gi * gi;
                        *w -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64, g: f64) -> Tensor<f64> {
        let mut p = Tensor::param(vec![1], vec![v]);
        p.grad = Some(vec![g]);
        p
    }

    #[test]
    fn sgd_examples() {
        let mut o = Optimizer::new(OptimizerConfig::Sgd { lr: 0.1, momentum: 0.0 }).unwrap();
        let mut p = scalar(1.0, 2.0);
        o.step(vec![&mut p]).unwrap();
        assert!((p.data[0] - 0.8).abs() < 1e-15);
        let mut q = Tensor::param(vec![3], vec![1.0, -2.0, 0.5]);
        let mut o = Optimizer::new(OptimizerConfig::Sgd { lr: 0.1, momentum: 0.9 }).unwrap();
        o.step(vec![&mut q]).unwrap();
        assert_eq!(q.data, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn adam_quadratic_bowl() {
        let cfg = OptimizerConfig::Adam {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let mut o = Optimizer::new(cfg).unwrap();
        let mut p = scalar(1.0, 0.0);
        for _ in 0..100 {
            p.grad = Some(vec![2.0 * p.data[0]]);
            o.step(vec![&mut p]).unwrap();
        }
        assert!(p.data[0].abs() < 1e-2, "{}", p.data[0]);
    }

    #[test]
    fn rejects_bad_settings() {
        assert!(Optimizer::<f32>::new(OptimizerConfig::Sgd { lr: -1.0, momentum: 0.0 }).is_err());
        assert!(Optimizer::<f32>::new(OptimizerConfig::Adam { lr: 1e-3, beta1: 1.0, beta2: 0.9, eps: 1e-8 }).is_err());
    }
}
