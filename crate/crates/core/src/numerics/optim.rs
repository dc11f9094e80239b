//! Adam with decoupled weight decay, warmup + cosine learning-rate schedule and
//! global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Optimizer state: first/second moments shaped like the parameters.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: ParamStore<T>,
    v: ParamStore<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamStore<T>, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update at learning rate `lr`.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &ParamStore<T>, lr: f64) {
        debug_assert!(params.same_layout(grads));
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bc1 = T::lit(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = T::lit(1.0 - c.beta2.powi(self.step as i32));
        let lr_t = T::lit(lr);
        let eps = T::lit(c.eps);
        let decay = T::lit(lr * c.weight_decay);
        let one = T::one();
        for (name, p) in params.iter_mut() {
            let g = grads.get(name).expect("gradient for every parameter");
            let m = self.m.get_mut(name).expect("moment");
            let v = self.v.get_mut(name).expect("moment");
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                if decay != T::zero() {
                    *pi -= decay * *pi;
                }
                *pi -= lr_t * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Learning rate at `step`: linear warmup from 0 to `peak_lr` over
/// `warmup_frac · total_steps` steps, then cosine decay to 0 at `total_steps`.
/// Steps past the end get 0.
pub fn lr_at(step: usize, total_steps: usize, warmup_frac: f64, peak_lr: f64) -> f64 {
    if step > total_steps || total_steps == 0 {
        return 0.0;
    }
    let warmup = warmup_frac.clamp(0.0, 1.0) * total_steps as f64;
    let s = step as f64;
    if s < warmup {
        return peak_lr * s / warmup;
    }
    let span = total_steps as f64 - warmup;
    if span <= 0.0 {
        return 0.0;
    }
    let progress = (s - warmup) / span;
    peak_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Rescales `grads` in place so that their global L2 norm is at most `max_norm`.
/// A non-positive `max_norm` disables clipping. Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|(_, t)| t.data().iter())
        .map(|x| x.as_f64() * x.as_f64())
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = T::lit(max_norm / norm);
        for (_, t) in grads.iter_mut() {
            for x in t.data_mut() {
                *x *= s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn schedule_anchor_points() {
        assert_eq!(lr_at(0, 100, 0.1, 1e-4), 0.0);
        assert!((lr_at(10, 100, 0.1, 1e-4) - 1e-4).abs() < 1e-18);
        let expected = 1e-4 * 0.5 * (1.0 + (std::f64::consts::PI * 45.0 / 90.0).cos());
        assert!((lr_at(55, 100, 0.1, 1e-4) - expected).abs() < 1e-18);
        assert!((lr_at(55, 100, 0.1, 1e-4) - 5e-5).abs() < 1e-15);
        assert!(lr_at(100, 100, 0.1, 1e-4).abs() < 1e-18);
        assert_eq!(lr_at(101, 100, 0.1, 1e-4), 0.0);
    }

    #[test]
    fn schedule_without_warmup_starts_at_peak() {
        assert!((lr_at(0, 50, 0.0, 2.0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_gradients_only_apply_weight_decay() {
        let mut params = ParamStore::new();
        params.insert("w", Tensor::<f64>::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap());
        let grads = params.zeros_like();
        let mut plain = Adam::new(&params, AdamConfig::default());
        let mut p1 = params.clone();
        plain.step(&mut p1, &grads, 0.1);
        assert_eq!(p1, params);

        let cfg = AdamConfig {
            weight_decay: 0.01,
            ..AdamConfig::default()
        };
        let mut decayed = Adam::new(&params, cfg);
        let mut p2 = params.clone();
        decayed.step(&mut p2, &grads, 0.1);
        for (a, b) in p2.get("w").unwrap().data().iter().zip(params.get("w").unwrap().data()) {
            assert!((a - b * (1.0 - 0.001)).abs() < 1e-15);
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut params = ParamStore::new();
        params.insert("w", Tensor::<f64>::from_f64(&[2], &[0.0, 0.0]).unwrap());
        let mut grads = params.zeros_like();
        grads.insert("w", Tensor::from_f64(&[2], &[3.0, -0.5]).unwrap());
        let mut opt = Adam::new(&params, AdamConfig::default());
        opt.step(&mut params, &grads, 0.01);
        let w = params.get("w").unwrap().data();
        assert!((w[0] + 0.01).abs() < 1e-8);
        assert!((w[1] - 0.01).abs() < 1e-8);
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut grads = ParamStore::new();
        grads.insert("a", Tensor::<f64>::from_f64(&[2], &[3.0, 0.0]).unwrap());
        grads.insert("b", Tensor::<f64>::from_f64(&[1], &[4.0]).unwrap());
        let before = clip_grad_norm(&mut grads, 1.0);
        assert!((before - 5.0).abs() < 1e-12);
        let after = clip_grad_norm(&mut grads, 1.0);
        assert!((after - 1.0).abs() < 1e-12);
        clip_grad_norm(&mut grads, 0.0);
        assert!((clip_grad_norm(&mut grads, 0.0) - 1.0).abs() < 1e-12);
    }
}
