use std::collections::BTreeMap;

use super::params::ParameterStore;
use crate::error::{Error, Result};

/// Adam moments keyed by parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub m: BTreeMap<String, Vec<f32>>,
    pub v: BTreeMap<String, Vec<f32>>,
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }
}

impl AdamState {
    pub fn new(beta1: f32, beta2: f32, eps: f32) -> Self {
        Self {
            step: 0,
            beta1,
            beta2,
            eps,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

/// One bias-corrected Adam update over every parameter in `store`.
/// Gradients are left in place; callers reset them.
pub fn adam_step(store: &mut ParameterStore, state: &mut AdamState, lr: f32) -> Result<()> {
    if store.is_frozen() {
        return Err(Error::contract("adam_step on a frozen parameter store"));
    }
    if let Some((name, _)) = store.iter().find(|(_, p)| p.grad.is_none()) {
        return Err(Error::contract(format!("parameter `{name}` has no gradient")));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    for (name, p) in store.iter_mut() {
        let g = p.grad.as_ref().expect("checked above");
        let m = state
            .m
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; g.len()]);
        let v = state
            .v
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; g.len()]);
        for i in 0..g.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            p.data[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    state.m.retain(|k, _| store.contains(k));
    state.v.retain(|k, _| store.contains(k));
    store.step += 1;
    Ok(())
}

/// Inverse-square-root schedule with linear warmup:
/// `base · dim^-½ · min(step^-½, step · warmup^-³⁄₂)`.
pub fn noam_lr(step: u64, base_lr: f64, warmup: u64, model_dim: usize) -> Result<f64> {
    if step == 0 {
        return Err(Error::contract("noam_lr step counts from 1"));
    }
    if warmup == 0 || model_dim == 0 {
        return Err(Error::contract("noam_lr needs positive warmup and model_dim"));
    }
    let s = step as f64;
    let decay = s.powf(-0.5);
    let ramp = s * (warmup as f64).powf(-1.5);
    Ok(base_lr * (model_dim as f64).powf(-0.5) * decay.min(ramp))
}

/// Linear warmup to `peak` at step `warmup`, then inverse-square-root decay.
/// Same shape as [`noam_lr`], parameterized by its maximum.
pub fn warmup_rsqrt_lr(step: u64, peak: f64, warmup: u64) -> Result<f64> {
    if step == 0 || warmup == 0 {
        return Err(Error::contract("warmup_rsqrt_lr needs step ≥ 1 and positive warmup"));
    }
    let (s, w) = (step as f64, warmup as f64);
    Ok(peak * (s / w).min((w / s).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::params::Param;

    fn scalar_store(w: f32) -> ParameterStore {
        let mut s = ParameterStore::new(0);
        s.insert("w", Param::new(&[1], vec![w]).unwrap()).unwrap();
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = scalar_store(1.0);
        s.accumulate_grad("w", &[1.0]).unwrap();
        let mut st = AdamState::default();
        adam_step(&mut s, &mut st, 0.1).unwrap();
        let w = s.get("w").unwrap().data[0];
        assert!((w - 0.9).abs() < 1e-6, "{w}");
        assert_eq!(st.step, 1);
        assert!(s.get("w").unwrap().grad.is_some());
    }

    #[test]
    fn zero_grad_leaves_param() {
        let mut s = scalar_store(2.5);
        s.accumulate_grad("w", &[0.0]).unwrap();
        adam_step(&mut s, &mut AdamState::default(), 0.1).unwrap();
        assert_eq!(s.get("w").unwrap().data[0], 2.5);
    }

    #[test]
    fn missing_grad_names_the_parameter() {
        let mut s = scalar_store(0.0);
        let err = adam_step(&mut s, &mut AdamState::default(), 0.1).unwrap_err();
        assert!(err.to_string().contains("`w`"));
    }

    #[test]
    fn frozen_store_is_rejected() {
        let mut s = scalar_store(0.0);
        s.accumulate_grad("w", &[1.0]).unwrap();
        s.freeze();
        assert!(adam_step(&mut s, &mut AdamState::default(), 0.1).is_err());
    }

    #[test]
    fn quadratic_decreases_monotonically() {
        let mut s = scalar_store(0.0);
        let mut st = AdamState::default();
        let f = |w: f32| (w - 3.0) * (w - 3.0);
        let mut prev = f(0.0);
        for _ in 0..10 {
            let w = s.get("w").unwrap().data[0];
            s.zero_grads();
            s.accumulate_grad("w", &[2.0 * (w - 3.0)]).unwrap();
            adam_step(&mut s, &mut st, 0.1).unwrap();
            let now = f(s.get("w").unwrap().data[0]);
            assert!(now < prev, "{now} !< {prev}");
            prev = now;
        }
    }

    #[test]
    fn noam_boundary_and_linearity() {
        let at = noam_lr(4000, 2.0, 4000, 512).unwrap();
        let expected = 2.0 / (512f64).sqrt() / (4000f64).sqrt();
        assert!((at - expected).abs() < 1e-15);
        assert!((at - 1.398e-3).abs() < 1e-6);
        let half = noam_lr(2000, 2.0, 4000, 512).unwrap();
        assert!((half - at / 2.0).abs() < 1e-15);
        let s = 4000f64;
        assert!((s.powf(-0.5) - s * s.powf(-1.5)).abs() < 1e-15);
        assert!(noam_lr(8000, 2.0, 4000, 512).unwrap() < at);
        assert!(noam_lr(0, 2.0, 4000, 512).is_err());
    }

    #[test]
    fn warmup_rsqrt_peaks_at_warmup() {
        assert!((warmup_rsqrt_lr(100, 0.01, 100).unwrap() - 0.01).abs() < 1e-15);
        assert!((warmup_rsqrt_lr(50, 0.01, 100).unwrap() - 0.005).abs() < 1e-15);
        assert!((warmup_rsqrt_lr(400, 0.01, 100).unwrap() - 0.005).abs() < 1e-15);
        let ratio = noam_lr(700, 2.0, 100, 64).unwrap() / warmup_rsqrt_lr(700, 1.0, 100).unwrap();
        let ratio2 = noam_lr(30, 2.0, 100, 64).unwrap() / warmup_rsqrt_lr(30, 1.0, 100).unwrap();
        assert!((ratio - ratio2).abs() < 1e-12);
    }
}
