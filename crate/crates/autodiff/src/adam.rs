use ndarray::ArrayD;
use std::collections::BTreeMap;

use crate::params::ParamStore;

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam over a set of named parameters. Moments are lazily allocated per
/// name, so one optimizer may serve a store that grows.
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    m: BTreeMap<String, ArrayD<f64>>,
    v: BTreeMap<String, ArrayD<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update from named gradients. Missing gradients leave the
    /// parameter untouched; unknown gradient names panic.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, ArrayD<f64>>) {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.cfg.beta1.powf(t);
        let bc2 = 1.0 - self.cfg.beta2.powf(t);
        for (name, g) in grads {
            let p = params
                .get_mut(name)
                .unwrap_or_else(|| panic!("gradient for unknown parameter `{name}`"));
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(p.raw_dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(p.raw_dim()));
            m.zip_mut_with(g, |m, &g| *m = self.cfg.beta1 * *m + (1.0 - self.cfg.beta1) * g);
            v.zip_mut_with(g, |v, &g| *v = self.cfg.beta2 * *v + (1.0 - self.cfg.beta2) * g * g);
            ndarray::Zip::from(&mut *p)
                .and(&*m)
                .and(&*v)
                .for_each(|p, &m, &v| {
                    let mhat = m / bc1;
                    let vhat = v / bc2;
                    *p -= self.cfg.lr * mhat / (vhat.sqrt() + self.cfg.eps);
                });
        }
        // Keep the store f32-representable for exact checkpoint round-trips.
        params.round_to_f32();
    }
}
