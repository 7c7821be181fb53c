//! RMSProp with global-norm gradient clipping.

use std::collections::BTreeMap;

use cmam_core::params::ParamStore;

#[derive(Debug, Clone)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub decay: f64,
    pub eps: f64,
    pub clip_norm: f64,
    /// Moving average of squared gradients, keyed like the parameter store.
    pub acc: BTreeMap<String, Vec<f64>>,
}

impl RmsProp {
    pub fn new(learning_rate: f64, decay: f64, eps: f64, clip_norm: f64, params: &ParamStore) -> Self {
        let acc = params
            .iter()
            .map(|(name, t)| (name.clone(), vec![0.0; t.numel()]))
            .collect();
        RmsProp { learning_rate, decay, eps, clip_norm, acc }
    }

    /// Clips the gradient to the configured global norm, then applies
    /// `acc <- decay*acc + (1-decay)*g^2` and
    /// `p <- p - lr * g / sqrt(acc + eps)`.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Vec<f64>>) {
        let mut sq = 0.0;
        for g in grads.values() {
            for v in g {
                sq += v * v;
            }
        }
        let norm = sq.sqrt();
        let scale = if norm > self.clip_norm { self.clip_norm / norm } else { 1.0 };

        for (name, g) in grads {
            let acc = self
                .acc
                .get_mut(name)
                .unwrap_or_else(|| panic!("gradient for unknown parameter {name}"));
            let p = params
                .get_mut(name)
                .unwrap_or_else(|| panic!("gradient for unknown parameter {name}"));
            assert_eq!(g.len(), p.numel(), "gradient shape drifted for {name}");
            for i in 0..g.len() {
                let gi = g[i] * scale;
                acc[i] = self.decay * acc[i] + (1.0 - self.decay) * gi * gi;
                p.values[i] -= self.learning_rate * gi / (acc[i] + self.eps).sqrt();
            }
        }
    }
}
