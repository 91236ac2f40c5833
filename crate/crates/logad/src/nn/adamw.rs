//! AdamW — adaptive moments with decoupled weight decay.

use super::params::{ParamId, ParamStore};
use super::Scalar;
use ndarray::Array2;
use std::collections::HashMap;

pub struct AdamW<F: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: HashMap<ParamId, Array2<F>>,
    v: HashMap<ParamId, Array2<F>>,
}

impl<F: Scalar> AdamW<F> {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    /// Apply one update from accumulated gradients. Parameters without an
    /// entry in `grads` are left untouched.
    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &HashMap<ParamId, Array2<F>>) {
        self.step += 1;
        let b1 = F::from_f64(self.beta1);
        let b2 = F::from_f64(self.beta2);
        let one = F::one();
        let bc1 = F::from_f64(1.0 - self.beta1.powi(self.step as i32));
        let bc2 = F::from_f64(1.0 - self.beta2.powi(self.step as i32));
        let lr = F::from_f64(self.lr);
        let eps = F::from_f64(self.eps);

        // Deterministic order regardless of HashMap iteration.
        let mut ids: Vec<ParamId> = grads.keys().copied().collect();
        ids.sort();
        for id in ids {
            let g = &grads[&id];
            let m = self
                .m
                .entry(id)
                .or_insert_with(|| Array2::zeros(g.dim()));
            m.zip_mut_with(g, |m, &g| *m = b1 * *m + (one - b1) * g);
            let v = self
                .v
                .entry(id)
                .or_insert_with(|| Array2::zeros(g.dim()));
            v.zip_mut_with(g, |v, &g| *v = b2 * *v + (one - b2) * g * g);

            let decay = if store.decays(id) {
                F::from_f64(self.weight_decay)
            } else {
                F::zero()
            };
            let value = store.value_mut(id);
            ndarray::Zip::from(&mut *value)
                .and(&*m)
                .and(&*v)
                .for_each(|w, &m, &v| {
                    let mhat = m / bc1;
                    let vhat = v / bc2;
                    *w = *w - lr * (mhat / (vhat.sqrt() + eps) + decay * *w);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::ParamGroup;
    use ndarray::arr2;

    /// One step on a quadratic moves the parameter toward the minimum by
    /// roughly lr (Adam normalizes step length to ~lr at t=1).
    #[test]
    fn single_step_direction_and_magnitude() {
        let mut store = ParamStore::<f64>::new();
        let id = store.register("w", ParamGroup::Projector, arr2(&[[1.0]]), false);
        let mut opt = AdamW::new(0.1, 0.0);
        let mut grads = HashMap::new();
        grads.insert(id, arr2(&[[2.0]])); // d/dw (w²) at w=1
        opt.step(&mut store, &grads);
        let w = store.value(id)[[0, 0]];
        assert!((w - 0.9).abs() < 1e-6, "got {w}");
    }

    #[test]
    fn weight_decay_applies_only_to_decaying_params() {
        let mut store = ParamStore::<f64>::new();
        let w = store.register("w", ParamGroup::Projector, arr2(&[[1.0]]), true);
        let b = store.register("b", ParamGroup::Projector, arr2(&[[1.0]]), false);
        let mut opt = AdamW::new(0.1, 0.5);
        let mut grads = HashMap::new();
        grads.insert(w, arr2(&[[0.0]]));
        grads.insert(b, arr2(&[[0.0]]));
        opt.step(&mut store, &grads);
        assert!((store.value(w)[[0, 0]] - 0.95).abs() < 1e-9);
        assert!((store.value(b)[[0, 0]] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn untouched_params_do_not_move() {
        let mut store = ParamStore::<f64>::new();
        let w = store.register("w", ParamGroup::Projector, arr2(&[[1.0]]), true);
        let frozen = store.register("f", ParamGroup::DecoderBase, arr2(&[[4.0]]), true);
        let mut opt = AdamW::new(0.1, 0.5);
        let mut grads = HashMap::new();
        grads.insert(w, arr2(&[[1.0]]));
        opt.step(&mut store, &grads);
        assert_eq!(store.value(frozen)[[0, 0]], 4.0);
    }
}
