use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::param::ParamStore;

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients, then leaves them untouched.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        if self.first.is_empty() {
            self.first = store.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != store.len() {
            return Err(Error::invalid("adamw", "parameter set changed between steps"));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in store.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            if cfg!(debug_assertions) && !p.grad.is_finite() {
                return Err(Error::NonFinite { op: "adamw" });
            }
            let (value, grad) = (p.value.data_mut(), p.grad.data());
            for i in 0..value.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                value[i] -= lr * self.weight_decay * value[i];
                value[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Cosine annealing from `max_lr` at step 0 to `min_lr` at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSchedule {
    pub max_lr: f64,
    pub min_lr: f64,
    pub total_steps: u64,
}

impl CosineSchedule {
    pub fn new(max_lr: f64, min_lr: f64, total_steps: u64) -> Result<Self> {
        if !(max_lr >= min_lr && min_lr > 0.0) || total_steps == 0 {
            return Err(Error::invalid(
                "cosine_schedule",
                format!("need max_lr >= min_lr > 0 and total_steps >= 1, got {max_lr}, {min_lr}, {total_steps}"),
            ));
        }
        Ok(CosineSchedule {
            max_lr,
            min_lr,
            total_steps,
        })
    }

    /// Learning rate at step `t`, clamped into `[0, total_steps]`.
    pub fn lr(&self, t: u64) -> f64 {
        let t = t.min(self.total_steps) as f64;
        let progress = t / self.total_steps as f64;
        self.min_lr + 0.5 * (self.max_lr - self.min_lr) * (1.0 + (PI * progress).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn single(value: f64, grad: f64) -> ParamStore {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::scalar(value));
        store.get_mut(id).grad = Tensor::scalar(grad);
        store
    }

    #[test]
    fn first_step_longhand() {
        let mut store = single(1.0, 1.0);
        let mut opt = AdamW::new(0.01);
        opt.step(&mut store, 1e-3).unwrap();
        // decay: 1 - 1e-3*0.01*1; then m̂ = 1, v̂ = 1 → -1e-3/(1+1e-8)
        let expected = (1.0 - 1e-5) - 1e-3 / (1.0 + 1e-8);
        let got = store.iter().next().unwrap().value.item();
        assert_eq!(got, expected);
        assert!((got - 0.99899).abs() < 1e-8);
    }

    #[test]
    fn zero_grad_zero_decay_is_identity() {
        let mut store = single(0.75, 0.0);
        let mut opt = AdamW::new(0.0);
        opt.step(&mut store, 1e-2).unwrap();
        assert_eq!(store.iter().next().unwrap().value.item(), 0.75);
    }

    #[test]
    fn two_steps_match_scalar_trace() {
        let mut store = single(0.5, 0.2);
        let mut opt = AdamW::new(0.0);
        opt.step(&mut store, 0.1).unwrap();
        store.iter_mut().next().unwrap().grad = Tensor::scalar(-0.4);
        opt.step(&mut store, 0.1).unwrap();

        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.1);
        let mut p = 0.5;
        let (mut m, mut v) = (0.0, 0.0);
        for (t, g) in [(1, 0.2f64), (2, -0.4)] {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            p -= lr * mh / (vh.sqrt() + eps);
        }
        assert!((store.iter().next().unwrap().value.item() - p).abs() < 1e-15);
    }

    #[test]
    fn cosine_endpoints_and_midpoint() {
        let s = CosineSchedule::new(1e-3, 5e-6, 1000).unwrap();
        assert!((s.lr(0) - 1e-3).abs() < 1e-18);
        assert!((s.lr(1000) - 5e-6).abs() < 1e-18);
        assert!((s.lr(500) - 5.025e-4).abs() < 1e-15);
        assert_eq!(s.lr(5000), s.lr(1000));
    }

    #[test]
    fn cosine_rejects_bad_ranges() {
        assert!(CosineSchedule::new(1e-6, 1e-3, 10).is_err());
        assert!(CosineSchedule::new(1e-3, 0.0, 10).is_err());
        assert!(CosineSchedule::new(1e-3, 1e-4, 0).is_err());
    }
}
