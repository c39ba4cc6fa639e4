//! Adam with linear warmup, linear decay, per-tensor gradient clipping and
//! decoupled weight decay, in the style used for transformer fine-tuning.

use crate::autograd::{Gradients, Mat, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Fraction of `total_steps` spent ramping the rate up from zero.
    pub warmup: f64,
    pub total_steps: usize,
    /// Gradients of each tensor are rescaled to at most this norm.
    pub max_grad_norm: Option<f64>,
}

impl AdamConfig {
    pub fn new(learning_rate: f64, total_steps: usize) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
            weight_decay: 0.01,
            warmup: 0.1,
            total_steps,
            max_grad_norm: Some(1.0),
        }
    }

    /// Rate multiplier for step `step` (0-based).
    pub fn schedule(&self, step: usize) -> f64 {
        if self.total_steps == 0 {
            return 1.0;
        }
        let w = self.warmup * self.total_steps as f64;
        if (step as f64) < w {
            ((step + 1) as f64 / w).min(1.0)
        } else if self.warmup >= 1.0 {
            1.0
        } else {
            let x = step as f64 / self.total_steps as f64;
            ((1.0 - x) / (1.0 - self.warmup)).clamp(0.0, 1.0)
        }
    }
}

/// Parameters that keep their scale: biases and normalization gains.
pub fn exempt_from_decay(name: &str) -> bool {
    let last = name.rsplit('.').next().unwrap_or(name);
    last.starts_with('b') || last.starts_with("ln")
}

#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: usize,
    m: Vec<Option<Mat>>,
    v: Vec<Option<Mat>>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        Self {
            config,
            step: 0,
            m: vec![None; store.len()],
            v: vec![None; store.len()],
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Applies one update from `grads`; tensors without a gradient are left
    /// untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        let c = self.config;
        let lr = c.learning_rate * c.schedule(self.step);
        self.step += 1;
        for (id, g) in grads.iter() {
            let mut g = g.clone();
            if let Some(max) = c.max_grad_norm {
                let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > max {
                    g *= max / norm;
                }
            }
            let i = id.0;
            let m = self.m[i].get_or_insert_with(|| Mat::zeros(g.dim()));
            m.zip_mut_with(&g, |m, &g| *m = c.beta1 * *m + (1.0 - c.beta1) * g);
            let v = self.v[i].get_or_insert_with(|| Mat::zeros(g.dim()));
            v.zip_mut_with(&g, |v, &g| *v = c.beta2 * *v + (1.0 - c.beta2) * g * g);
            if lr == 0.0 {
                continue;
            }
            let decay = if exempt_from_decay(store.name(id)) {
                0.0
            } else {
                c.weight_decay
            };
            let (m, v) = (self.m[i].as_ref().unwrap(), self.v[i].as_ref().unwrap());
            let p = store.get_mut(id);
            ndarray::Zip::from(p).and(m).and(v).for_each(|p, &m, &v| {
                let update = m / (v.sqrt() + c.eps) + decay * *p;
                *p -= lr * update;
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;
    use ndarray::array;

    #[test]
    fn zero_rate_leaves_parameters_unchanged() {
        let mut store = ParamStore::new();
        let id = store.add("w", array![[1.0, -2.0]]);
        let before = store.clone();
        let mut adam = Adam::new(AdamConfig::new(0.0, 10), &store);
        for _ in 0..3 {
            let mut grads = Gradients::for_store(&store);
            let tape = {
                let mut t = Tape::new(&store);
                let w = t.param(id);
                let s = t.matmul_t(w, w);
                (t, s)
            };
            tape.0.backward(tape.1, &mut grads);
            adam.step(&mut store, &grads);
        }
        assert_eq!(store.get(id), before.get(id));
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("w", array![[3.0, -2.0]]);
        let mut config = AdamConfig::new(0.1, 400);
        config.weight_decay = 0.0;
        config.max_grad_norm = None;
        let mut adam = Adam::new(config, &store);
        for _ in 0..400 {
            let mut grads = Gradients::for_store(&store);
            let mut t = Tape::new(&store);
            let w = t.param(id);
            let s = t.matmul_t(w, w);
            t.backward(s, &mut grads);
            drop(t);
            adam.step(&mut store, &grads);
        }
        assert!(store.get(id).iter().all(|v| v.abs() < 0.05));
    }

    #[test]
    fn warmup_ramps_then_decays() {
        let c = AdamConfig::new(1.0, 10);
        assert!((c.schedule(0) - 1.0).abs() < 1e-12);
        assert!(c.schedule(5) < 1.0);
        let c = AdamConfig {
            warmup: 0.5,
            ..AdamConfig::new(1.0, 10)
        };
        assert!((c.schedule(0) - 0.2).abs() < 1e-12);
        assert!(c.schedule(1) > c.schedule(0));
        assert!(c.schedule(9) < c.schedule(5));
        assert!(exempt_from_decay("encoder.b1"));
        assert!(exempt_from_decay("encoder.ln1_gamma"));
        assert!(!exempt_from_decay("head.u_o"));
    }
}
