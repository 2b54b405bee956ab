use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

use super::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named parameters with their AdamW moment estimates.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
    index: HashMap<String, usize>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a parameter. Panics on a duplicate name.
    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter {name:?}");
        let id = self.values.len();
        self.index.insert(name.to_string(), id);
        self.names.push(name.to_string());
        self.first_moment.push(Tensor::zeros(value.shape()));
        self.second_moment.push(Tensor::zeros(value.shape()));
        self.values.push(value);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn num_values(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Replaces a value by name, keeping the optimizer state.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self.id(name).ok_or_else(|| invalid(format!("unknown parameter {name:?}")))?;
        if self.values[id.0].shape() != value.shape() {
            return Err(Error::Shape(format!(
                "parameter {name:?} has shape {:?}, got {:?}",
                self.values[id.0].shape(),
                value.shape()
            )));
        }
        self.values[id.0] = value;
        Ok(())
    }

    /// One decoupled-weight-decay Adam update.
    ///
    /// `grads` is aligned with the store; `None` entries are left untouched.
    /// Gradients are clipped to a global L2 norm before the moment updates.
    /// A non-finite gradient aborts the step without changing anything.
    pub fn adamw_step(&mut self, grads: &[Option<Tensor>], cfg: &AdamW, lr: f64) -> Result<StepInfo> {
        if grads.len() != self.values.len() {
            return Err(Error::Shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.values.len()
            )));
        }
        let mut sq = 0.0;
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.shape() != self.values[i].shape() {
                    return Err(Error::Shape(format!("gradient shape for {:?}", self.names[i])));
                }
                if !g.is_finite() {
                    return Err(Error::NonFinite(format!("gradient of {:?}", self.names[i])));
                }
                sq += g.data().iter().map(|v| v * v).sum::<f64>();
            }
        }
        let grad_norm = sq.sqrt();
        let clip = match cfg.clip_norm {
            Some(c) if grad_norm > c => c / grad_norm,
            _ => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let w = self.values[i].data_mut();
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            for k in 0..w.len() {
                let gk = g.data()[k] * clip;
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
                w[k] *= 1.0 - lr * cfg.weight_decay;
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                w[k] -= lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
        Ok(StepInfo {
            grad_norm,
            clip_scale: clip,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub grad_norm: f64,
    pub clip_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
            weight_decay: 0.01,
            clip_norm: Some(1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    Constant,
    LinearWarmupDecay,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub kind: ScheduleKind,
    pub peak: f64,
    pub warmup_ratio: f64,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn constant(peak: f64) -> Self {
        LrSchedule {
            kind: ScheduleKind::Constant,
            peak,
            warmup_ratio: 0.0,
            total_steps: 0,
        }
    }

    pub fn linear(peak: f64, warmup_ratio: f64, total_steps: usize) -> Self {
        LrSchedule {
            kind: ScheduleKind::LinearWarmupDecay,
            peak,
            warmup_ratio,
            total_steps,
        }
    }

    pub fn warmup_steps(&self) -> usize {
        (self.warmup_ratio * self.total_steps as f64).round() as usize
    }

    /// Learning rate at optimizer step `step` (0-based).
    pub fn lr_at(&self, step: usize) -> f64 {
        match self.kind {
            ScheduleKind::Constant => self.peak,
            ScheduleKind::LinearWarmupDecay => {
                let total = self.total_steps;
                let warm = self.warmup_steps();
                if step >= total {
                    0.0
                } else if step < warm {
                    self.peak * step as f64 / warm as f64
                } else {
                    self.peak * (total - step) as f64 / (total - warm) as f64
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: Vec<f64>) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let n = v.len();
        let id = s.add("w", Tensor::matrix(1, n, v));
        (s, id)
    }

    #[test]
    fn zero_grad_no_decay_is_noop() {
        let (mut s, id) = store(vec![1.0, -2.0]);
        let cfg = AdamW {
            weight_decay: 0.0,
            ..Default::default()
        };
        s.adamw_step(&[Some(Tensor::zeros(&[1, 2]))], &cfg, 0.1).unwrap();
        assert_eq!(s.value(id).data(), &[1.0, -2.0]);
    }

    #[test]
    fn single_step_closed_form() {
        let (mut s, id) = store(vec![0.5, -1.0, 2.0]);
        let g = [0.3, -0.02, 0.0];
        let cfg = AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
            weight_decay: 0.01,
            clip_norm: None,
        };
        let lr = 0.01;
        s.adamw_step(&[Some(Tensor::matrix(1, 3, g.to_vec()))], &cfg, lr).unwrap();
        // first step: m̂ = g, v̂ = g², so the update is lr·g/(|g|+ε) after decay
        for (k, w0) in [0.5, -1.0, 2.0].iter().enumerate() {
            let expected = w0 * (1.0 - lr * 0.01) - lr * g[k] / (g[k].abs() + 1e-7);
            assert!((s.value(id).data()[k] - expected).abs() < 1e-12);
        }
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn global_norm_clipping() {
        let (mut s, _) = store(vec![0.0, 0.0]);
        let info = s
            .adamw_step(&[Some(Tensor::matrix(1, 2, vec![6.0, 8.0]))], &AdamW::default(), 0.0)
            .unwrap();
        assert_eq!(info.grad_norm, 10.0);
        assert!((info.clip_scale - 0.1).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let (mut s, id) = store(vec![1.0]);
        let err = s.adamw_step(&[Some(Tensor::matrix(1, 1, vec![f64::NAN]))], &AdamW::default(), 0.1);
        assert!(err.is_err());
        assert_eq!(s.value(id).data(), &[1.0]);
        assert_eq!(s.step_count(), 0);
    }

    #[test]
    fn schedules() {
        assert_eq!(LrSchedule::constant(2e-4).lr_at(12345), 2e-4);
        let s = LrSchedule::linear(2e-5, 0.05, 1000);
        assert_eq!(s.lr_at(0), 0.0);
        assert_eq!(s.lr_at(50), 2e-5);
        assert!((s.lr_at(525) - 2e-5 * (1.0 - 475.0 / 950.0)).abs() < 1e-18);
        assert!((s.lr_at(25) - 1e-5).abs() < 1e-18);
        assert_eq!(s.lr_at(1000), 0.0);
        assert!((0..=1000).all(|t| s.lr_at(t) >= 0.0));
    }
}
