use serde::{Deserialize, Serialize};

use crate::{Float, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction; one moment pair per parameter tensor.
pub struct Adam<F> {
    pub cfg: AdamConfig,
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
    t: u64,
}

impl<F: Float> Adam<F> {
    pub fn new(cfg: AdamConfig, store: &ParamStore<F>) -> Self {
        let zeros = |store: &ParamStore<F>| {
            store
                .ids()
                .map(|id| Tensor::zeros(store.get(id).shape()))
                .collect::<Vec<_>>()
        };
        Self {
            cfg,
            m: zeros(store),
            v: zeros(store),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    /// Applies one update. Parameters without a gradient are left untouched.
    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &[Option<Tensor<F>>]) {
        assert_eq!(grads.len(), store.len());
        self.t += 1;
        let b1 = F::c(self.cfg.beta1);
        let b2 = F::c(self.cfg.beta2);
        let bc1 = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.cfg.beta2.powi(self.t as i32);
        let step = F::c(self.cfg.lr * bc2.sqrt() / bc1);
        let eps = F::c(self.cfg.eps * bc2.sqrt());
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let Some(g) = &grads[i] else { continue };
            let p = store.get_mut(id);
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mv = b1 * *mv + (F::one() - b1) * gv;
                *vv = b2 * *vv + (F::one() - b2) * gv * gv;
                *pv -= step * *mv / (vv.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("x", Tensor::new(&[2], vec![3.0, -2.0]));
        let mut opt = Adam::new(
            AdamConfig {
                lr: 0.05,
                ..Default::default()
            },
            &store,
        );
        for _ in 0..2000 {
            let g = store.get(id).map(|v| 2.0 * v);
            opt.step(&mut store, &[Some(g)]);
        }
        assert!(store.get(id).data().iter().all(|v| v.abs() < 1e-2));
    }
}
