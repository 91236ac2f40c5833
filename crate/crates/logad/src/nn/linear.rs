//! Dense layer with a frozen base weight and an optional low-rank adapter.
//!
//! With an adapter attached the effective map is
//! `y = x·W + (x·A)·B · (alpha/rank) + bias`, where `W` stays frozen and only
//! the rank-r factors `A` and `B` train. `B` starts at zero, so attaching an
//! adapter does not change the forward pass until the first optimizer step.

use super::init;
use super::params::{GroupSet, ParamGroup, ParamId, ParamStore};
use super::tape::{NodeId, Tape};
use super::Scalar;
use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct LoraAdapter {
    pub a: ParamId,
    pub b: ParamId,
    pub rank: usize,
    pub alpha: f64,
}

impl LoraAdapter {
    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

/// A base linear map `x·W + b` plus an optional adapter.
#[derive(Clone, Debug)]
pub struct LinearLayer {
    pub name: String,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub adapter: Option<LoraAdapter>,
    pub d_in: usize,
    pub d_out: usize,
}

/// Error raised when an adapter cannot be attached.
#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AdapterError {
    #[error("adapter rank must be positive")]
    ZeroRank,
    #[error("adapter rank {rank} must be below min({d_in}, {d_out}) for layer {layer}")]
    RankTooLarge {
        rank: usize,
        d_in: usize,
        d_out: usize,
        layer: String,
    },
}

impl LinearLayer {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        group: ParamGroup,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = store.register(
            format!("{name}.weight"),
            group,
            init::xavier(d_in, d_out, rng),
            true,
        );
        let bias = bias.then(|| {
            store.register(format!("{name}.bias"), group, init::zeros(1, d_out), false)
        });
        LinearLayer {
            name: name.to_string(),
            weight,
            bias,
            adapter: None,
            d_in,
            d_out,
        }
    }

    /// Attach a low-rank adapter in `adapter_group`. `A` is Gaussian, `B` is
    /// zero, so the layer's output is unchanged until training moves `B`.
    pub fn attach_adapter<F: Scalar>(
        &mut self,
        store: &mut ParamStore<F>,
        adapter_group: ParamGroup,
        rank: usize,
        alpha: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<(), AdapterError> {
        if rank == 0 {
            return Err(AdapterError::ZeroRank);
        }
        if rank >= self.d_in.min(self.d_out) {
            return Err(AdapterError::RankTooLarge {
                rank,
                d_in: self.d_in,
                d_out: self.d_out,
                layer: self.name.clone(),
            });
        }
        let a = store.register(
            format!("{}.lora_a", self.name),
            adapter_group,
            init::normal(self.d_in, rank, 0.02, rng),
            true,
        );
        let b = store.register(
            format!("{}.lora_b", self.name),
            adapter_group,
            init::zeros(rank, self.d_out),
            true,
        );
        self.adapter = Some(LoraAdapter { a, b, rank, alpha });
        Ok(())
    }

    /// Trainable parameters added by the adapter: rank · (d_in + d_out).
    pub fn adapter_param_count(&self) -> usize {
        self.adapter
            .as_ref()
            .map(|ad| ad.rank * (self.d_in + self.d_out))
            .unwrap_or(0)
    }

    /// Forward on a tape. `trainable` marks which parameter groups receive
    /// gradients in the current stage.
    pub fn forward<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        x: NodeId,
        trainable: GroupSet,
    ) -> NodeId {
        let train = |id: ParamId| trainable.contains(store.group(id));
        let w = tape.param(store.shared(self.weight), self.weight, train(self.weight));
        let mut y = tape.matmul(x, w);
        if let Some(ad) = &self.adapter {
            let a = tape.param(store.shared(ad.a), ad.a, train(ad.a));
            let b = tape.param(store.shared(ad.b), ad.b, train(ad.b));
            let xa = tape.matmul(x, a);
            let delta = tape.matmul(xa, b);
            let delta = tape.scale(delta, F::from_f64(ad.scaling()));
            y = tape.add(y, delta);
        }
        if let Some(bias) = self.bias {
            let bnode = tape.param(store.shared(bias), bias, train(bias));
            y = tape.add_row(y, bnode);
        }
        y
    }

    /// Plain forward for inference paths that do not build a tape.
    pub fn apply<F: Scalar>(&self, store: &ParamStore<F>, x: &Array2<F>) -> Array2<F> {
        let mut y = x.dot(store.value(self.weight));
        if let Some(ad) = &self.adapter {
            let delta = x.dot(store.value(ad.a)).dot(store.value(ad.b));
            y = y + delta * F::from_f64(ad.scaling());
        }
        if let Some(bias) = self.bias {
            y = y + store.value(bias);
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn adapter_rank_validation() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut lin = LinearLayer::new(
            &mut store,
            "probe",
            ParamGroup::DecoderBase,
            8,
            16,
            true,
            &mut rng,
        );
        assert_eq!(
            lin.attach_adapter(&mut store, ParamGroup::DecoderAdapter, 0, 1.0, &mut rng),
            Err(AdapterError::ZeroRank)
        );
        assert!(matches!(
            lin.attach_adapter(&mut store, ParamGroup::DecoderAdapter, 8, 8.0, &mut rng),
            Err(AdapterError::RankTooLarge { .. })
        ));
        lin.attach_adapter(&mut store, ParamGroup::DecoderAdapter, 2, 2.0, &mut rng)
            .unwrap();
        assert_eq!(lin.adapter_param_count(), 2 * (8 + 16));
    }

    #[test]
    fn fresh_adapter_is_identity_delta() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut lin = LinearLayer::new(
            &mut store,
            "probe",
            ParamGroup::EncoderBase,
            6,
            5,
            true,
            &mut rng,
        );
        let x = Array2::from_shape_fn((3, 6), |(i, j)| (i as f32 + 1.0) * 0.3 - j as f32 * 0.1);
        let before = lin.apply(&store, &x);
        lin.attach_adapter(&mut store, ParamGroup::EncoderAdapter, 2, 2.0, &mut rng)
            .unwrap();
        let after = lin.apply(&store, &x);
        assert_eq!(before, after);
    }

    #[test]
    fn tape_and_plain_forward_agree() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut lin = LinearLayer::new(
            &mut store,
            "probe",
            ParamGroup::EncoderBase,
            4,
            3,
            true,
            &mut rng,
        );
        lin.attach_adapter(&mut store, ParamGroup::EncoderAdapter, 2, 2.0, &mut rng)
            .unwrap();
        // Move B off zero so the adapter path is exercised.
        store
            .value_mut(lin.adapter.as_ref().unwrap().b)
            .mapv_inplace(|_| 0.37);
        let x = Array2::from_shape_fn((2, 4), |(i, j)| i as f32 - 0.5 * j as f32);
        let plain = lin.apply(&store, &x);
        let mut tape = Tape::new();
        let xn = tape.constant(x);
        let yn = lin.forward(&mut tape, &store, xn, GroupSet::empty());
        assert_eq!(tape.value(yn), &plain);
    }
}
