//! Pre-norm transformer block: x + attn(ln1(x)); x + ffn(ln2(x)).

use super::attention::AttentionBlock;
use super::linear::LinearLayer;
use super::norm::LayerNormLayer;
use super::params::{GroupSet, ParamGroup, ParamStore};
use super::tape::{NodeId, Tape};
use super::Scalar;
use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub ln1: LayerNormLayer,
    pub attn: AttentionBlock,
    pub ln2: LayerNormLayer,
    pub ffn_in: LinearLayer,
    pub ffn_out: LinearLayer,
}

/// Per-layer key/value cache for incremental decoding.
pub struct BlockCache<F: Scalar> {
    pub k: Array2<F>,
    pub v: Array2<F>,
}

impl TransformerBlock {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        group: ParamGroup,
        d_model: usize,
        heads: usize,
        d_ff: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(d_model % heads == 0, "d_model must divide into heads");
        let lin = |store: &mut ParamStore<F>, suffix: &str, d_in, d_out, rng: &mut ChaCha8Rng| {
            LinearLayer::new(store, &format!("{name}.{suffix}"), group, d_in, d_out, true, rng)
        };
        TransformerBlock {
            ln1: LayerNormLayer::new(store, &format!("{name}.ln1"), group, d_model),
            attn: AttentionBlock {
                wq: lin(store, "attn.wq", d_model, d_model, rng),
                wk: lin(store, "attn.wk", d_model, d_model, rng),
                wv: lin(store, "attn.wv", d_model, d_model, rng),
                wo: lin(store, "attn.wo", d_model, d_model, rng),
                heads,
                d_model,
            },
            ln2: LayerNormLayer::new(store, &format!("{name}.ln2"), group, d_model),
            ffn_in: lin(store, "ffn.in", d_model, d_ff, rng),
            ffn_out: lin(store, "ffn.out", d_ff, d_model, rng),
        }
    }

    pub fn linears_mut(&mut self) -> Vec<&mut LinearLayer> {
        vec![
            &mut self.attn.wq,
            &mut self.attn.wk,
            &mut self.attn.wv,
            &mut self.attn.wo,
            &mut self.ffn_in,
            &mut self.ffn_out,
        ]
    }

    pub fn forward<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        x: NodeId,
        mask: Option<&Array2<F>>,
        trainable: GroupSet,
    ) -> NodeId {
        let normed = self.ln1.forward(tape, store, x, trainable);
        let attn_out = self.attn.forward(tape, store, normed, mask, trainable);
        let x = tape.add(x, attn_out);
        let normed = self.ln2.forward(tape, store, x, trainable);
        let h = self.ffn_in.forward(tape, store, normed, trainable);
        let h = tape.gelu(h);
        let h = self.ffn_out.forward(tape, store, h, trainable);
        tape.add(x, h)
    }

    /// Plain full-sequence pass; fills a fresh cache when requested.
    pub fn apply_full<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        x: &Array2<F>,
        causal: bool,
    ) -> (Array2<F>, BlockCache<F>) {
        let normed = self.ln1.apply(store, x);
        let (attn_out, k, v) = self.attn.apply_full(store, &normed, causal);
        let x = x + &attn_out;
        let normed = self.ln2.apply(store, &x);
        let h = self.ffn_in.apply(store, &normed);
        let h = h.mapv(gelu_scalar);
        let h = self.ffn_out.apply(store, &h);
        (&x + &h, BlockCache { k, v })
    }

    /// Plain single-row pass against the cache.
    pub fn apply_step<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        row: &Array2<F>,
        cache: &mut BlockCache<F>,
    ) -> Array2<F> {
        let normed = self.ln1.apply(store, row);
        let attn_out = self.attn.step(store, &normed, &mut cache.k, &mut cache.v);
        let x = row + &attn_out;
        let normed = self.ln2.apply(store, &x);
        let h = self.ffn_in.apply(store, &normed);
        let h = h.mapv(gelu_scalar);
        let h = self.ffn_out.apply(store, &h);
        &x + &h
    }
}

pub fn gelu_scalar<F: Scalar>(v: F) -> F {
    let half = F::from_f64(0.5);
    let k = F::from_f64(0.797_884_560_802_865_4);
    let c = F::from_f64(0.044715);
    let u = k * (v + c * v * v * v);
    half * v * (F::one() + u.tanh())
}
