//! Layer normalization with learned gain/bias.

use super::params::{GroupSet, ParamGroup, ParamId, ParamStore};
use super::tape::{NodeId, Tape};
use super::Scalar;
use ndarray::{Array2, Axis};

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct LayerNormLayer {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormLayer {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        group: ParamGroup,
        d: usize,
    ) -> Self {
        let gain = store.register(
            format!("{name}.gain"),
            group,
            Array2::from_elem((1, d), F::one()),
            false,
        );
        let bias = store.register(format!("{name}.bias"), group, Array2::zeros((1, d)), false);
        LayerNormLayer { gain, bias }
    }

    pub fn forward<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        x: NodeId,
        trainable: GroupSet,
    ) -> NodeId {
        let train = |id: ParamId| trainable.contains(store.group(id));
        let gain = tape.param(store.shared(self.gain), self.gain, train(self.gain));
        let bias = tape.param(store.shared(self.bias), self.bias, train(self.bias));
        tape.layer_norm(x, gain, bias, F::from_f64(LN_EPS))
    }

    pub fn apply<F: Scalar>(&self, store: &ParamStore<F>, x: &Array2<F>) -> Array2<F> {
        let gain = store.value(self.gain);
        let bias = store.value(self.bias);
        let d = x.ncols();
        let dn = F::from_f64(d as f64);
        let eps = F::from_f64(LN_EPS);
        let mut out = Array2::zeros(x.dim());
        for (mut orow, row) in out.axis_iter_mut(Axis(0)).zip(x.axis_iter(Axis(0))) {
            let mean = row.iter().cloned().sum::<F>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / dn;
            let istd = F::one() / (var + eps).sqrt();
            for (j, o) in orow.iter_mut().enumerate() {
                *o = (row[j] - mean) * istd * gain[[0, j]] + bias[[0, j]];
            }
        }
        out
    }
}
