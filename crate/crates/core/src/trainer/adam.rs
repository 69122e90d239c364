//! Adam with decoupled weight decay over named parameters.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use std::collections::BTreeMap;

/// Optimizer hyperparameters. Defaults: eps 1e-6, beta1 0.9, beta2 0.98,
/// weight decay 0.01; prompts decay like every other parameter unless
/// exempted.
#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub eps: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub decay_prompts: bool,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { eps: 1e-6, beta1: 0.9, beta2: 0.98, weight_decay: 0.01, decay_prompts: true }
    }
}

struct Moments<T> {
    m: Vec<T>,
    v: Vec<T>,
}

/// Per-parameter first/second moment buffers plus the shared step counter.
/// Built fresh at every stage boundary; never carried across expansion, the
/// recovery warmup, or main training.
pub struct Optimizer<T> {
    hyper: AdamHyper,
    step: u64,
    moments: BTreeMap<String, Moments<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(hyper: AdamHyper) -> Self {
        Optimizer { hyper, step: 0, moments: BTreeMap::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// True until the first update: no steps taken and no moment buffers.
    pub fn is_fresh(&self) -> bool {
        self.step == 0 && self.moments.is_empty()
    }

    /// One update over every parameter that received a gradient. Gradients
    /// are clipped jointly to `clip_norm` (global L2), then cleared.
    /// Parameters without a gradient are untouched, bit for bit.
    /// Returns the pre-clip global gradient norm.
    pub fn apply(
        &mut self,
        params: &BTreeMap<String, Tensor<T>>,
        lr: f64,
        clip_norm: Option<f64>,
    ) -> Result<f64> {
        let mut grads: Vec<(&String, &Tensor<T>, Vec<T>)> = Vec::new();
        let mut sq_sum = 0.0f64;
        for (name, p) in params {
            if let Some(g) = p.grad() {
                if p.numel() != g.len() {
                    return Err(Error::InvalidConfig(format!(
                        "gradient shape mismatch for {name}"
                    )));
                }
                for &v in &g {
                    let v = v.to_f64_lossy();
                    sq_sum += v * v;
                }
                grads.push((name, p, g));
            }
        }
        if grads.is_empty() {
            return Ok(0.0);
        }
        let norm = sq_sum.sqrt();
        let scale = match clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let h = self.hyper;
        let b1 = T::cast(h.beta1);
        let b2 = T::cast(h.beta2);
        let one_minus_b1 = T::cast(1.0 - h.beta1);
        let one_minus_b2 = T::cast(1.0 - h.beta2);
        let bc1 = T::cast(1.0 / (1.0 - h.beta1.powi(t)));
        let bc2 = T::cast(1.0 / (1.0 - h.beta2.powi(t)));
        let eps = T::cast(h.eps);
        let lr_t = T::cast(lr);
        let clip_scale = T::cast(scale);
        for (name, p, g) in grads {
            let decay = if h.weight_decay > 0.0 && (h.decay_prompts || !name.starts_with("prompt."))
            {
                T::cast(h.weight_decay)
            } else {
                T::zero()
            };
            let slot = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| Moments { m: vec![T::zero(); g.len()], v: vec![T::zero(); g.len()] });
            if slot.m.len() != g.len() {
                return Err(Error::InvalidConfig(format!(
                    "moment buffer for {name} has stale shape; optimizer must be rebuilt at stage boundaries"
                )));
            }
            let mut data = p.data_mut();
            for i in 0..g.len() {
                let gi = g[i] * clip_scale;
                slot.m[i] = b1 * slot.m[i] + one_minus_b1 * gi;
                slot.v[i] = b2 * slot.v[i] + one_minus_b2 * gi * gi;
                let mhat = slot.m[i] * bc1;
                let vhat = slot.v[i] * bc2;
                let update = mhat / (vhat.sqrt() + eps) + decay * data[i];
                data[i] = data[i] - lr_t * update;
            }
            drop(data);
            p.zero_grad();
        }
        Ok(norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn named(pairs: Vec<(&str, Tensor<f32>)>) -> BTreeMap<String, Tensor<f32>> {
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    #[test]
    fn zero_lr_leaves_parameters_bitwise_unchanged() {
        let p = Tensor::from_vec(&[3], vec![1.5f32, -0.25, 3.0]).unwrap().traced();
        p.accumulate_grad(&[0.3, -0.7, 0.1]);
        let params = named(vec![("w", p.clone())]);
        let mut opt = Optimizer::new(AdamHyper::default());
        opt.apply(&params, 0.0, Some(1.0)).unwrap();
        let bits: Vec<u32> = p.to_vec().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits, vec![1.5f32.to_bits(), (-0.25f32).to_bits(), 3.0f32.to_bits()]);
    }

    #[test]
    fn params_without_grad_are_untouched() {
        let a = Tensor::from_vec(&[2], vec![1.0f32, 2.0]).unwrap().traced();
        let b = Tensor::from_vec(&[2], vec![5.0f32, 6.0]).unwrap().traced();
        a.accumulate_grad(&[1.0, 1.0]);
        let params = named(vec![("a", a.clone()), ("b", b.clone())]);
        let mut opt = Optimizer::new(AdamHyper::default());
        opt.apply(&params, 0.1, None).unwrap();
        assert_ne!(a.to_vec(), vec![1.0, 2.0]);
        assert_eq!(b.to_vec(), vec![5.0, 6.0]);
    }

    #[test]
    fn descends_a_quadratic() {
        // f(w) = w^2: repeated steps shrink |w|.
        let w = Tensor::from_vec(&[1], vec![2.0f32]).unwrap().traced();
        let params = named(vec![("w", w.clone())]);
        let mut opt = Optimizer::new(AdamHyper { weight_decay: 0.0, ..Default::default() });
        for _ in 0..200 {
            let x = w.to_vec()[0];
            w.accumulate_grad(&[2.0 * x]);
            opt.apply(&params, 0.05, Some(1.0)).unwrap();
        }
        assert!(w.to_vec()[0].abs() < 0.1, "w = {}", w.to_vec()[0]);
    }

    #[test]
    fn clip_bounds_update_magnitude() {
        let w = Tensor::from_vec(&[2], vec![0.0f32, 0.0]).unwrap().traced();
        let params = named(vec![("w", w.clone())]);
        let mut opt = Optimizer::new(AdamHyper { weight_decay: 0.0, ..Default::default() });
        w.accumulate_grad(&[300.0, 400.0]);
        let norm = opt.apply(&params, 0.1, Some(1.0)).unwrap();
        assert_eq!(norm, 500.0);
        // first-step Adam update is lr * g/|g|-ish, bounded by lr
        for v in w.to_vec() {
            assert!(v.abs() <= 0.11, "{v}");
        }
    }

    #[test]
    fn prompt_decay_exemption_flag() {
        let p = Tensor::from_vec(&[1], vec![1.0f32]).unwrap().traced();
        let params = named(vec![("prompt.news", p.clone())]);
        // gradient zero, decay on: parameter should still shrink when decay
        // applies to prompts
        p.accumulate_grad(&[0.0]);
        let mut opt = Optimizer::new(AdamHyper::default());
        opt.apply(&params, 0.1, None).unwrap();
        assert!(p.to_vec()[0] < 1.0);
        let q = Tensor::from_vec(&[1], vec![1.0f32]).unwrap().traced();
        let params = named(vec![("prompt.news", q.clone())]);
        q.accumulate_grad(&[0.0]);
        let mut opt =
            Optimizer::new(AdamHyper { decay_prompts: false, ..Default::default() });
        opt.apply(&params, 0.1, None).unwrap();
        assert_eq!(q.to_vec()[0], 1.0);
    }

    #[test]
    fn fresh_state_is_observable() {
        let mut opt = Optimizer::<f32>::new(AdamHyper::default());
        assert!(opt.is_fresh());
        let p = Tensor::from_vec(&[1], vec![1.0f32]).unwrap().traced();
        p.accumulate_grad(&[1.0]);
        opt.apply(&named(vec![("w", p)]), 0.1, None).unwrap();
        assert!(!opt.is_fresh());
        assert_eq!(opt.step_count(), 1);
    }
}
