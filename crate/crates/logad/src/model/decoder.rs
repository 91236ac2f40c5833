//! Sequence classifier decoder: a causal transformer consuming embedded
//! prompts and generating the answer text.

use crate::nn::block::{BlockCache, TransformerBlock};
use crate::nn::linear::LinearLayer;
use crate::nn::norm::LayerNormLayer;
use crate::nn::params::{GroupSet, ParamGroup, ParamStore};
use crate::nn::tape::{NodeId, Tape};
use crate::nn::{init, Scalar};
use ndarray::{s, Array2};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DecoderConfig {
    pub d_dec: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    /// Position budget for the whole prompt plus generated answer.
    pub max_positions: usize,
    pub max_answer_tokens: usize,
    pub vocab_cap: usize,
}

impl DecoderConfig {
    pub fn tiny() -> Self {
        DecoderConfig {
            d_dec: 128,
            layers: 2,
            heads: 4,
            d_ff: 256,
            max_positions: 512,
            max_answer_tokens: 8,
            vocab_cap: 512,
        }
    }
}

pub struct Decoder {
    pub cfg: DecoderConfig,
    pub token_emb: crate::nn::ParamId,
    pub pos_emb: crate::nn::ParamId,
    pub blocks: Vec<TransformerBlock>,
    pub final_ln: LayerNormLayer,
    pub lm_head: LinearLayer,
}

/// Key/value caches plus the running position, one entry per layer.
pub struct DecoderCache<F: Scalar> {
    layers: Vec<BlockCache<F>>,
    pub len: usize,
}

impl Decoder {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        cfg: &DecoderConfig,
        vocab_size: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let token_emb = store.register(
            "decoder.token_emb",
            ParamGroup::DecoderBase,
            init::normal(vocab_size, cfg.d_dec, 0.02, rng),
            false,
        );
        let pos_emb = store.register(
            "decoder.pos_emb",
            ParamGroup::DecoderBase,
            init::normal(cfg.max_positions, cfg.d_dec, 0.02, rng),
            false,
        );
        let blocks = (0..cfg.layers)
            .map(|i| {
                TransformerBlock::new(
                    store,
                    &format!("decoder.block{i}"),
                    ParamGroup::DecoderBase,
                    cfg.d_dec,
                    cfg.heads,
                    cfg.d_ff,
                    rng,
                )
            })
            .collect();
        let final_ln = LayerNormLayer::new(store, "decoder.final_ln", ParamGroup::DecoderBase, cfg.d_dec);
        let lm_head = LinearLayer::new(
            store,
            "decoder.lm_head",
            ParamGroup::DecoderBase,
            cfg.d_dec,
            vocab_size,
            true,
            rng,
        );
        Decoder {
            cfg: cfg.clone(),
            token_emb,
            pos_emb,
            blocks,
            final_ln,
            lm_head,
        }
    }

    /// Embed token ids through the token table (no positions; those are added
    /// over the whole assembled prompt).
    pub fn embed_tokens<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        ids: &[usize],
        trainable: GroupSet,
    ) -> NodeId {
        let train = trainable.contains(store.group(self.token_emb));
        let tok = tape.param(store.shared(self.token_emb), self.token_emb, train);
        tape.embedding(tok, ids)
    }

    /// Plain (no-tape) token embedding rows.
    pub fn embed_tokens_plain<F: Scalar>(&self, store: &ParamStore<F>, ids: &[usize]) -> Array2<F> {
        let table = store.value(self.token_emb);
        let mut out = Array2::zeros((ids.len(), self.cfg.d_dec));
        for (i, &id) in ids.iter().enumerate() {
            out.row_mut(i).assign(&table.row(id));
        }
        out
    }

    /// Causal transformer over pre-embedded rows; returns final hidden states
    /// (T×d_dec) after the last layer norm.
    pub fn forward_rows<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        rows: NodeId,
        trainable: GroupSet,
    ) -> NodeId {
        let t = tape.shape(rows).0;
        assert!(
            t <= self.cfg.max_positions,
            "rows exceed decoder position budget"
        );
        let train = trainable.contains(store.group(self.pos_emb));
        let pos = tape.param(store.shared(self.pos_emb), self.pos_emb, train);
        let positions: Vec<usize> = (0..t).collect();
        let pos_rows = tape.embedding(pos, &positions);
        let mut x = tape.add(rows, pos_rows);
        let mask = causal_mask::<F>(t);
        for block in &self.blocks {
            x = block.forward(tape, store, x, Some(&mask), trainable);
        }
        self.final_ln.forward(tape, store, x, trainable)
    }

    /// Logits for selected rows of the hidden states.
    pub fn logits_at<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        hidden: NodeId,
        range: std::ops::Range<usize>,
        trainable: GroupSet,
    ) -> NodeId {
        let rows = tape.slice_rows(hidden, range);
        self.lm_head.forward(tape, store, rows, trainable)
    }

    /// Plain prefill over pre-embedded prompt rows. Returns the hidden states
    /// for every row and the primed cache.
    pub fn prefill<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        rows: &Array2<F>,
    ) -> (Array2<F>, DecoderCache<F>) {
        let t = rows.nrows();
        assert!(t <= self.cfg.max_positions, "prompt exceeds position budget");
        let pos = store.value(self.pos_emb);
        let mut x = rows.clone();
        for i in 0..t {
            let mut r = x.row_mut(i);
            r += &pos.row(i);
        }
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, cache) = block.apply_full(store, &x, true);
            x = next;
            caches.push(cache);
        }
        let hidden = self.final_ln.apply(store, &x);
        (hidden, DecoderCache { layers: caches, len: t })
    }

    /// One greedy decode step: embed `token`, advance the cache, return logits
    /// for the next position (1×V).
    pub fn step<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        cache: &mut DecoderCache<F>,
        token: usize,
    ) -> Array2<F> {
        assert!(
            cache.len < self.cfg.max_positions,
            "generation exceeded position budget"
        );
        let table = store.value(self.token_emb);
        let pos = store.value(self.pos_emb);
        let mut row = Array2::zeros((1, self.cfg.d_dec));
        row.row_mut(0).assign(&table.row(token));
        {
            let mut r = row.row_mut(0);
            r += &pos.row(cache.len);
        }
        let mut x = row;
        for (block, cache) in self.blocks.iter().zip(cache.layers.iter_mut()) {
            x = block.apply_step(store, &x, cache);
        }
        cache.len += 1;
        let hidden = self.final_ln.apply(store, &x);
        self.lm_head.apply(store, &hidden)
    }

    /// Plain logits for the last prefill row.
    pub fn last_logits<F: Scalar>(&self, store: &ParamStore<F>, hidden: &Array2<F>) -> Array2<F> {
        let last = hidden.slice(s![hidden.nrows() - 1..hidden.nrows(), ..]).to_owned();
        self.lm_head.apply(store, &last)
    }

    pub fn linears_mut(&mut self) -> Vec<&mut LinearLayer> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.extend(b.linears_mut());
        }
        out.push(&mut self.lm_head);
        out
    }
}

fn causal_mask<F: Scalar>(t: usize) -> Array2<F> {
    let neg = F::from_f64(-1e9);
    Array2::from_shape_fn((t, t), |(i, j)| if j > i { neg } else { F::zero() })
}
