//! Multi-head self-attention built from tape primitives, shared by the
//! encoder and decoder stacks.

use super::linear::LinearLayer;
use super::params::{GroupSet, ParamStore};
use super::tape::{NodeId, Tape};
use super::Scalar;
use ndarray::Array2;

#[derive(Clone, Debug)]
pub struct AttentionBlock {
    pub wq: LinearLayer,
    pub wk: LinearLayer,
    pub wv: LinearLayer,
    pub wo: LinearLayer,
    pub heads: usize,
    pub d_model: usize,
}

impl AttentionBlock {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    /// Self-attention over `x` (T×d). `mask` is an additive T×T constant
    /// (0 where attending is allowed, a large negative value elsewhere).
    pub fn forward<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        x: NodeId,
        mask: Option<&Array2<F>>,
        trainable: GroupSet,
    ) -> NodeId {
        let q = self.wq.forward(tape, store, x, trainable);
        let k = self.wk.forward(tape, store, x, trainable);
        let v = self.wv.forward(tape, store, x, trainable);
        let dh = self.head_dim();
        let scale = F::from_f64(1.0 / (dh as f64).sqrt());
        let mask_node = mask.map(|m| tape.constant(m.clone()));
        let mut head_outputs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = h * dh..(h + 1) * dh;
            let qh = tape.slice_cols(q, cols.clone());
            let kh = tape.slice_cols(k, cols.clone());
            let vh = tape.slice_cols(v, cols);
            let scores = tape.matmul_nt(qh, kh);
            let scores = tape.scale(scores, scale);
            let scores = match mask_node {
                Some(m) => tape.add(scores, m),
                None => scores,
            };
            let attn = tape.softmax_rows(scores);
            head_outputs.push(tape.matmul(attn, vh));
        }
        let merged = tape.concat_cols(&head_outputs);
        self.wo.forward(tape, store, merged, trainable)
    }

    /// Plain full-sequence forward used for prompt prefill. Returns the
    /// attention output plus the key/value rows for the cache.
    pub fn apply_full<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        x: &Array2<F>,
        causal: bool,
    ) -> (Array2<F>, Array2<F>, Array2<F>) {
        let q = self.wq.apply(store, x);
        let k = self.wk.apply(store, x);
        let v = self.wv.apply(store, x);
        let dh = self.head_dim();
        let scale = F::from_f64(1.0 / (dh as f64).sqrt());
        let t = x.nrows();
        let mut merged = Array2::<F>::zeros((t, self.d_model));
        for h in 0..self.heads {
            let cols = h * dh..(h + 1) * dh;
            let qh = q.slice(ndarray::s![.., cols.clone()]);
            let kh = k.slice(ndarray::s![.., cols.clone()]);
            let vh = v.slice(ndarray::s![.., cols.clone()]);
            let mut scores = qh.dot(&kh.t());
            scores.mapv_inplace(|s| s * scale);
            for i in 0..t {
                let limit = if causal { i + 1 } else { t };
                let mut row = scores.row_mut(i);
                let max = row
                    .iter()
                    .take(limit)
                    .cloned()
                    .fold(F::neg_infinity(), F::max);
                let mut denom = F::zero();
                for (j, s) in row.iter_mut().enumerate() {
                    if j < limit {
                        *s = (*s - max).exp();
                        denom = denom + *s;
                    } else {
                        *s = F::zero();
                    }
                }
                for s in row.iter_mut() {
                    *s = *s / denom;
                }
            }
            let ctx = scores.dot(&vh);
            merged.slice_mut(ndarray::s![.., cols]).assign(&ctx);
        }
        (self.wo.apply(store, &merged), k, v)
    }

    /// Plain single-row attention step against cached keys/values, for
    /// incremental decoding. `x_row` is 1×d; `k_cache`/`v_cache` hold all
    /// previous rows including the current one once this returns.
    pub fn step<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        x_row: &Array2<F>,
        k_cache: &mut Array2<F>,
        v_cache: &mut Array2<F>,
    ) -> Array2<F> {
        let q = self.wq.apply(store, x_row);
        let k = self.wk.apply(store, x_row);
        let v = self.wv.apply(store, x_row);
        append_row(k_cache, &k);
        append_row(v_cache, &v);
        let dh = self.head_dim();
        let scale = F::from_f64(1.0 / (dh as f64).sqrt());
        let t = k_cache.nrows();
        let mut merged = Array2::<F>::zeros((1, self.d_model));
        for h in 0..self.heads {
            let cols = h * dh..(h + 1) * dh;
            let qh = q.slice(ndarray::s![.., cols.clone()]);
            let kh = k_cache.slice(ndarray::s![.., cols.clone()]);
            let vh = v_cache.slice(ndarray::s![.., cols.clone()]);
            // scores: 1×t
            let mut scores = qh.dot(&kh.t());
            scores.mapv_inplace(|s| s * scale);
            let max = scores.iter().cloned().fold(F::neg_infinity(), F::max);
            let mut denom = F::zero();
            scores.mapv_inplace(|s| {
                let e = (s - max).exp();
                denom = denom + e;
                e
            });
            scores.mapv_inplace(|s| s / denom);
            debug_assert_eq!(scores.dim(), (1, t));
            let ctx = scores.dot(&vh);
            merged
                .slice_mut(ndarray::s![.., cols])
                .assign(&ctx.row(0).insert_axis(ndarray::Axis(0)));
        }
        self.wo.apply(store, &merged)
    }
}

fn append_row<F: Scalar>(cache: &mut Array2<F>, row: &Array2<F>) {
    cache
        .push_row(row.row(0))
        .expect("cache width mismatch while appending row");
}
