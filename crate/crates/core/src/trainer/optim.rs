use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moments plus the count of applied updates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ParamStore,
    pub v: ParamStore,
    pub t: u64,
}

impl AdamState {
    pub fn zeros_like(params: &ParamStore) -> Self {
        let mut m = ParamStore::new();
        for (n, t) in params.iter() {
            m.insert(n, Tensor::zeros(&t.shape));
        }
        AdamState {
            v: m.clone(),
            m,
            t: 0,
        }
    }
}

/// Linear warmup to `base` over `warmup` steps, constant afterwards.
pub fn lr_schedule(step: u64, warmup: u64, base: f64) -> f64 {
    if warmup == 0 {
        return base;
    }
    base * (step as f64 / warmup as f64).min(1.0)
}

impl AdamW {
    /// One update with decoupled weight decay. Returns `false`, leaving
    /// everything untouched, when any gradient is non-finite.
    pub fn step(&self, params: &mut ParamStore, grads: &[Vec<f64>], state: &mut AdamState, lr: f64) -> Result<bool> {
        if grads.len() != params.len() || !state.m.same_layout(params) || !state.v.same_layout(params) {
            return Err(Error::InvalidArgument("optimizer state does not match parameters".into()));
        }
        for (g, t) in grads.iter().zip(params.tensors()) {
            if g.len() != t.numel() {
                return Err(Error::InvalidArgument("gradient length does not match parameter".into()));
            }
        }
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Ok(false);
        }
        state.t += 1;
        let t = state.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (ms, vs) = (state.m.tensors_mut(), state.v.tensors_mut());
        for (((p, g), m), v) in params.tensors_mut().iter_mut().zip(grads).zip(ms.iter_mut()).zip(vs.iter_mut()) {
            for (((p, &g), m), v) in p.data.iter_mut().zip(g).zip(m.data.iter_mut()).zip(v.data.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let update = (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
                *p -= lr * self.weight_decay * *p;
                *p -= lr * update;
            }
        }
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("p", Tensor { shape: vec![1], data: vec![v] });
        p
    }

    #[test]
    fn schedule() {
        assert_eq!(lr_schedule(0, 1000, 3e-4), 0.0);
        assert_eq!(lr_schedule(1, 1000, 3e-4), 3e-4 / 1000.0);
        assert_eq!(lr_schedule(500, 1000, 3e-4), 1.5e-4);
        assert_eq!(lr_schedule(1_000_000, 1000, 3e-4), 3e-4);
        assert_eq!(lr_schedule(0, 0, 1.0), 1.0);
    }

    #[test]
    fn zero_grad_zero_decay_is_identity() {
        let opt = AdamW {
            weight_decay: 0.0,
            ..AdamW::default()
        };
        let mut p = scalar(0.7);
        let mut s = AdamState::zeros_like(&p);
        assert!(opt.step(&mut p, &[vec![0.0]], &mut s, 1e-3).unwrap());
        assert_eq!(p, scalar(0.7));
    }

    #[test]
    fn first_step_closed_form() {
        let opt = AdamW::default();
        let (p0, lr) = (0.5, 1e-2);
        let mut p = scalar(p0);
        let mut s = AdamState::zeros_like(&p);
        opt.step(&mut p, &[vec![1.0]], &mut s, lr).unwrap();
        // m̂ = 1, v̂ = 1, so the update is lr·1/(1 + eps) after decay
        let want = p0 * (1.0 - lr * 0.01) - lr / (1.0 + 1e-8);
        assert!((p.get("p").unwrap().data[0] - want).abs() < 1e-15);
        assert!((p0 - p.get("p").unwrap().data[0] - lr).abs() < lr * 0.01);
        assert_eq!(AdamW::default().weight_decay, 0.01);
    }

    #[test]
    fn non_finite_gradient_is_skipped() {
        let opt = AdamW::default();
        let mut p = scalar(1.0);
        let mut s = AdamState::zeros_like(&p);
        assert!(!opt.step(&mut p, &[vec![f64::NAN]], &mut s, 1e-3).unwrap());
        assert_eq!(p, scalar(1.0));
        assert_eq!(s.t, 0);
    }
}
