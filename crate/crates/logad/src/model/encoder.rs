//! Message encoder: a small transformer that turns one masked log message
//! into one semantic vector via its classification-token output.

use crate::nn::block::TransformerBlock;
use crate::nn::linear::LinearLayer;
use crate::nn::norm::LayerNormLayer;
use crate::nn::params::{GroupSet, ParamGroup, ParamStore};
use crate::nn::tape::{NodeId, Tape};
use crate::nn::{init, Scalar};
use crate::model::tokenizer::{Vocab, CLS};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EncoderConfig {
    pub d_enc: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    /// Messages are truncated to this many tokens before the [CLS] prefix.
    pub max_message_tokens: usize,
    /// Hard cap on messages per sequence accepted by `encode_messages`.
    pub max_sequence_messages: usize,
    pub vocab_cap: usize,
}

impl EncoderConfig {
    pub fn tiny() -> Self {
        EncoderConfig {
            d_enc: 64,
            layers: 2,
            heads: 4,
            d_ff: 128,
            max_message_tokens: 24,
            max_sequence_messages: 512,
            vocab_cap: 4096,
        }
    }
}

pub struct Encoder {
    pub cfg: EncoderConfig,
    pub token_emb: crate::nn::ParamId,
    pub pos_emb: crate::nn::ParamId,
    pub blocks: Vec<TransformerBlock>,
    pub final_ln: LayerNormLayer,
    pub pooler: LinearLayer,
}

impl Encoder {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        cfg: &EncoderConfig,
        vocab_size: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let token_emb = store.register(
            "encoder.token_emb",
            ParamGroup::EncoderBase,
            init::normal(vocab_size, cfg.d_enc, 0.02, rng),
            false,
        );
        let pos_emb = store.register(
            "encoder.pos_emb",
            ParamGroup::EncoderBase,
            init::normal(cfg.max_message_tokens + 1, cfg.d_enc, 0.02, rng),
            false,
        );
        let blocks = (0..cfg.layers)
            .map(|i| {
                TransformerBlock::new(
                    store,
                    &format!("encoder.block{i}"),
                    ParamGroup::EncoderBase,
                    cfg.d_enc,
                    cfg.heads,
                    cfg.d_ff,
                    rng,
                )
            })
            .collect();
        let final_ln = LayerNormLayer::new(store, "encoder.final_ln", ParamGroup::EncoderBase, cfg.d_enc);
        let pooler = LinearLayer::new(
            store,
            "encoder.pooler",
            ParamGroup::EncoderBase,
            cfg.d_enc,
            cfg.d_enc,
            true,
            rng,
        );
        Encoder {
            cfg: cfg.clone(),
            token_emb,
            pos_emb,
            blocks,
            final_ln,
            pooler,
        }
    }

    /// Token ids for one message: [CLS] followed by the truncated message.
    pub fn message_ids(&self, vocab: &Vocab, message: &str) -> Vec<usize> {
        let mut ids = Vec::with_capacity(self.cfg.max_message_tokens + 1);
        ids.push(CLS);
        ids.extend(vocab.encode(message, self.cfg.max_message_tokens));
        ids
    }

    /// Encode one message to its pooled 1×d_enc vector: the [CLS] row through
    /// a linear layer and tanh.
    pub fn forward_message<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        ids: &[usize],
        trainable: GroupSet,
    ) -> NodeId {
        let train = |id: crate::nn::ParamId| trainable.contains(store.group(id));
        let tok = tape.param(store.shared(self.token_emb), self.token_emb, train(self.token_emb));
        let pos = tape.param(store.shared(self.pos_emb), self.pos_emb, train(self.pos_emb));
        let tok_rows = tape.embedding(tok, ids);
        let positions: Vec<usize> = (0..ids.len()).collect();
        let pos_rows = tape.embedding(pos, &positions);
        let mut x = tape.add(tok_rows, pos_rows);
        for block in &self.blocks {
            x = block.forward(tape, store, x, None, trainable);
        }
        let x = self.final_ln.forward(tape, store, x, trainable);
        let cls = tape.slice_rows(x, 0..1);
        let pooled = self.pooler.forward(tape, store, cls, trainable);
        tape.tanh(pooled)
    }

    pub fn linears_mut(&mut self) -> Vec<&mut LinearLayer> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.extend(b.linears_mut());
        }
        out.push(&mut self.pooler);
        out
    }
}
