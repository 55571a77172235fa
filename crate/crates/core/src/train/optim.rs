use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub base_lr: f64,
    pub peak_lr: f64,
    pub warmup_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Added as `l2 * theta` to every gradient.
    pub l2: f64,
    /// Global gradient-norm clip threshold.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-4,
            peak_lr: 5e-4,
            warmup_epochs: 5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            l2: 5e-4,
            clip_norm: None,
        }
    }
}

impl AdamConfig {
    /// Linear ramp from `base_lr` at epoch 0 to `peak_lr` at
    /// `warmup_epochs`, constant afterwards.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch >= self.warmup_epochs {
            return self.peak_lr;
        }
        let frac = epoch as f64 / self.warmup_epochs as f64;
        self.base_lr + (self.peak_lr - self.base_lr) * frac
    }
}

/// Moment estimates for a list of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, shapes: &[&[usize]]) -> Self {
        Self {
            config,
            step: 0,
            first: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            second: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    /// One bias-corrected update. Non-finite gradients abort before any
    /// parameter or moment changes; `names` label the diagnostic.
    pub fn update(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>], lr: f64, names: &[String]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(Error::invalid(
                "adam",
                format!(
                    "{} parameters, {} gradients, {} moment slots",
                    params.len(),
                    grads.len(),
                    self.first.len()
                ),
            ));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.shape() != params[i].shape() {
                return Err(Error::shape("adam", params[i].shape(), g.shape()));
            }
            if !g.all_finite() {
                let name = names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
                return Err(Error::NonFiniteGradient(name));
            }
        }
        let c = self.config;
        let scale = match c.clip_norm {
            Some(limit) => {
                let norm = libm::sqrt(
                    grads
                        .iter()
                        .zip(params.iter())
                        .flat_map(|(g, p)| g.data().iter().zip(p.data()))
                        .map(|(&g, &p)| {
                            let v = g.f64() + c.l2 * p.f64();
                            v * v
                        })
                        .sum::<f64>(),
                );
                if norm > limit {
                    limit / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let correct1 = 1.0 - libm::pow(c.beta1, t as f64);
        let correct2 = 1.0 - libm::pow(c.beta2, t as f64);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one, l2, s) = (T::one(), T::of(c.l2), T::of(scale));
        let step_size = T::of(lr / correct1);
        let (rc2, eps) = (T::of(1.0 / correct2), T::of(c.eps));
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let g = (g + l2 * *p) * s;
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                *p -= step_size * *m / ((*v * rc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Tracks the best validation metric seen and how long ago it was.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStop {
    pub patience: usize,
    pub best: Option<f64>,
    pub best_epoch: usize,
    since_best: usize,
}

impl EarlyStop {
    pub fn new(patience: usize) -> Result<Self> {
        if patience < 1 {
            return Err(Error::invalid("early stop", "patience must be >= 1"));
        }
        Ok(Self {
            patience,
            best: None,
            best_epoch: 0,
            since_best: 0,
        })
    }

    /// Returns whether `metric` strictly improves on the best so far.
    pub fn observe(&mut self, epoch: usize, metric: f64) -> bool {
        let improved = self.best.is_none_or(|b| metric > b);
        if improved {
            self.best = Some(metric);
            self.best_epoch = epoch;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        improved
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }
}
