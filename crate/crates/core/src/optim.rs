//! Adam with externally scheduled learning rate.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, ParamId, ParamStore};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: HashMap<usize, Mat>,
    v: HashMap<usize, Mat>,
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every parameter that received a gradient. Parameters
    /// listed in `frozen` are left untouched and their moments are not
    /// advanced.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Mat)], lr: f64, frozen: &[ParamId]) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (id, g) in grads {
            if frozen.contains(id) {
                continue;
            }
            let m = self.m.entry(id.0).or_insert_with(|| Mat::zeros(g.dim()));
            let v = self.v.entry(id.0).or_insert_with(|| Mat::zeros(g.dim()));
            let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
            let p = store.get_mut(*id);
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *p -= lr * mh / (vh.sqrt() + eps);
            });
        }
    }
}
