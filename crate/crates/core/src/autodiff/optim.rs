use serde::{Deserialize, Serialize};

use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmsPropConfig {
    pub lr: f64,
    /// Smoothing constant of the squared-gradient average.
    pub decay: f64,
    pub eps: f64,
    /// L2 penalty added to the gradient.
    pub weight_decay: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        RmsPropConfig {
            lr: 1e-2,
            decay: 0.99,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl RmsPropConfig {
    pub fn with_lr(lr: f64) -> Self {
        RmsPropConfig {
            lr,
            ..Default::default()
        }
    }
}

/// RMSprop state for a fixed list of parameter tensors.
#[derive(Clone, Debug)]
pub struct RmsProp {
    pub config: RmsPropConfig,
    square_avg: Vec<Tensor>,
}

impl RmsProp {
    pub fn new(config: RmsPropConfig) -> Self {
        RmsProp {
            config,
            square_avg: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(
                "rmsprop",
                format!("{} params, {} grads", params.len(), grads.len()),
            ));
        }
        if self.square_avg.is_empty() {
            self.square_avg = params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        }
        let RmsPropConfig {
            lr,
            decay,
            eps,
            weight_decay,
        } = self.config;
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.square_avg) {
            if p.shape() != g.shape() || p.shape() != v.shape() {
                return Err(Error::shape(
                    "rmsprop",
                    format!("param {:?}, grad {:?}", p.shape(), g.shape()),
                ));
            }
            for ((pv, &gv), sv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                let grad = gv + weight_decay * *pv;
                *sv = decay * *sv + (1.0 - decay) * grad * grad;
                *pv -= lr * grad / (sv.sqrt() + eps);
            }
        }
        Ok(())
    }
}
