//! The anomaly classifier: encoder → projector → prompt assembly → decoder,
//! with answer-template training and greedy-generation classification.

pub mod checkpoint;
pub mod decoder;
pub mod encoder;
pub mod quantize;
pub mod tokenizer;

pub use decoder::{Decoder, DecoderConfig};
pub use encoder::{Encoder, EncoderConfig};
pub use tokenizer::Vocab;

use crate::nn::linear::{AdapterError, LinearLayer};
use crate::nn::params::{GroupSet, ParamGroup, ParamStore};
use crate::nn::tape::{NodeId, Tape};
use crate::nn::Scalar;
use crate::model::tokenizer::{BOS, EOS};
use ndarray::{s, Array2};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// The fixed prompt and answer strings.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PromptTemplate {
    pub prefix: String,
    pub suffix: String,
    pub answer_anomalous: String,
    pub answer_normal: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            prefix: "Below is a sequence of system log messages:".to_string(),
            suffix: ". Is this sequence normal or anomalous?".to_string(),
            answer_anomalous: "The sequence is anomalous.".to_string(),
            answer_normal: "The sequence is normal.".to_string(),
        }
    }
}

/// Concatenated prompt embedding matrix with its segment boundaries.
#[derive(Clone, Debug)]
pub struct PromptAssembly<F: Scalar> {
    pub matrix: Array2<F>,
    /// Prefix token count (A), including the sequence-start token.
    pub prefix_len: usize,
    /// Message count (N).
    pub message_count: usize,
    /// Suffix token count (Q).
    pub suffix_len: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictLabel {
    Normal,
    Anomalous,
    Undecided,
}

/// Classification outcome with the generated text it was parsed from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: VerdictLabel,
    pub raw_text: String,
}

/// Scan the generated answer, case-insensitively: "anomalous" wins, then
/// "normal", otherwise undecided. Every string maps to exactly one verdict.
pub fn parse_verdict(raw: &str) -> Verdict {
    let lower = raw.to_lowercase();
    let label = if lower.contains("anomalous") {
        VerdictLabel::Anomalous
    } else if lower.contains("normal") {
        VerdictLabel::Normal
    } else {
        VerdictLabel::Undecided
    };
    Verdict {
        label,
        raw_text: raw.to_string(),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("log sequence is empty; at least one message is required")]
    EmptySequence,
    #[error("sequence has {n} messages, above the configured cap {cap}")]
    TooManyMessages { n: usize, cap: usize },
    #[error("matrix width {got} does not match expected width {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error(
        "prompt with N={n} messages needs {rows} positions (prefix {a} + N + suffix {q}) \
         but the decoder budget is {budget}"
    )]
    PositionOverflow {
        rows: usize,
        a: usize,
        n: usize,
        q: usize,
        budget: usize,
    },
    #[error(transparent)]
    Adapter(#[from] AdapterError),
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct AdapterSettings {
    pub rank: usize,
    pub alpha: f64,
}

/// Two-class labels used across the pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Anomalous,
}

impl Label {
    pub fn is_anomalous(self) -> bool {
        matches!(self, Label::Anomalous)
    }
}

pub struct AnomalyModel<F: Scalar> {
    pub store: ParamStore<F>,
    pub encoder: Encoder,
    pub projector: LinearLayer,
    pub decoder: Decoder,
    pub enc_vocab: Vocab,
    pub dec_vocab: Vocab,
    pub template: PromptTemplate,
    pub adapter: Option<AdapterSettings>,
    pub quantized_base: bool,
    prefix_ids: Vec<usize>,
    suffix_ids: Vec<usize>,
}

impl<F: Scalar> AnomalyModel<F> {
    /// From-scratch backbone with randomly initialized weights. The encoder
    /// vocabulary comes from the training corpus; the decoder vocabulary is
    /// derived from the template strings.
    pub fn tiny(
        enc_cfg: &EncoderConfig,
        dec_cfg: &DecoderConfig,
        template: PromptTemplate,
        enc_vocab: Vocab,
        seed: u64,
    ) -> Self {
        let dec_vocab = Vocab::build(
            [
                template.prefix.as_str(),
                template.suffix.as_str(),
                template.answer_anomalous.as_str(),
                template.answer_normal.as_str(),
            ]
            .into_iter(),
            dec_cfg.vocab_cap,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, enc_cfg, enc_vocab.len(), &mut rng);
        let projector = LinearLayer::new(
            &mut store,
            "projector",
            ParamGroup::Projector,
            enc_cfg.d_enc,
            dec_cfg.d_dec,
            true,
            &mut rng,
        );
        let decoder = Decoder::new(&mut store, dec_cfg, dec_vocab.len(), &mut rng);
        let prefix_ids = prompt_ids(&dec_vocab, &template.prefix, true);
        let suffix_ids = prompt_ids(&dec_vocab, &template.suffix, false);
        AnomalyModel {
            store,
            encoder,
            projector,
            decoder,
            enc_vocab,
            dec_vocab,
            template,
            adapter: None,
            quantized_base: false,
            prefix_ids,
            suffix_ids,
        }
    }

    /// Prefix token count A (includes the sequence-start token).
    pub fn prefix_len(&self) -> usize {
        self.prefix_ids.len()
    }

    /// Suffix token count Q.
    pub fn suffix_len(&self) -> usize {
        self.suffix_ids.len()
    }

    /// Attach low-rank adapters to every attention/projection matrix of both
    /// backbones. Base weights stay frozen; the adapters are the trainable
    /// surface of the encoder and decoder.
    pub fn attach_adapters(&mut self, rank: usize, alpha: f64) -> Result<(), ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(0xADA7);
        for lin in self.encoder.linears_mut() {
            lin.attach_adapter(&mut self.store, ParamGroup::EncoderAdapter, rank, alpha, &mut rng)?;
        }
        for lin in self.decoder.linears_mut() {
            lin.attach_adapter(&mut self.store, ParamGroup::DecoderAdapter, rank, alpha, &mut rng)?;
        }
        self.adapter = Some(AdapterSettings { rank, alpha });
        Ok(())
    }

    /// Optional 4-bit round trip of the frozen base linear weights.
    pub fn quantize_base_weights(&mut self) {
        let ids: Vec<_> = self
            .encoder
            .linears_mut()
            .iter()
            .chain(self.decoder.linears_mut().iter())
            .map(|l| l.weight)
            .collect();
        for id in ids {
            quantize::quantize_dequantize(self.store.value_mut(id));
        }
        self.quantized_base = true;
    }

    fn check_messages(&self, messages: &[String]) -> Result<(), ModelError> {
        if messages.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        let cap = self.encoder.cfg.max_sequence_messages;
        if messages.len() > cap {
            return Err(ModelError::TooManyMessages {
                n: messages.len(),
                cap,
            });
        }
        Ok(())
    }

    /// Tape variant of message encoding; one row per message.
    pub fn encode_messages_tape(
        &self,
        tape: &mut Tape<F>,
        messages: &[String],
        trainable: GroupSet,
    ) -> Result<NodeId, ModelError> {
        self.check_messages(messages)?;
        let rows: Vec<NodeId> = messages
            .iter()
            .map(|m| {
                let ids = self.encoder.message_ids(&self.enc_vocab, m);
                self.encoder.forward_message(tape, &self.store, &ids, trainable)
            })
            .collect();
        Ok(tape.concat_rows(&rows))
    }

    /// Semantic matrix C (N×d_enc): one pooled vector per message.
    pub fn encode_messages(&self, messages: &[String]) -> Result<Array2<F>, ModelError> {
        let mut tape = Tape::new();
        let c = self.encode_messages_tape(&mut tape, messages, GroupSet::empty())?;
        Ok(tape.value(c).clone())
    }

    /// E = C·W + b, row-wise into the decoder embedding width.
    pub fn project(&self, c: &Array2<F>) -> Result<Array2<F>, ModelError> {
        if c.ncols() != self.encoder.cfg.d_enc {
            return Err(ModelError::WidthMismatch {
                expected: self.encoder.cfg.d_enc,
                got: c.ncols(),
            });
        }
        Ok(self.projector.apply(&self.store, c))
    }

    /// [E1‖E‖E3]: embedded prefix, projected messages, embedded suffix.
    pub fn assemble_prompt(&self, e: &Array2<F>) -> Result<PromptAssembly<F>, ModelError> {
        if e.ncols() != self.decoder.cfg.d_dec {
            return Err(ModelError::WidthMismatch {
                expected: self.decoder.cfg.d_dec,
                got: e.ncols(),
            });
        }
        let n = e.nrows();
        if n == 0 {
            return Err(ModelError::EmptySequence);
        }
        let a = self.prefix_ids.len();
        let q = self.suffix_ids.len();
        let rows = a + n + q;
        if rows > self.decoder.cfg.max_positions {
            return Err(ModelError::PositionOverflow {
                rows,
                a,
                n,
                q,
                budget: self.decoder.cfg.max_positions,
            });
        }
        let e1 = self.decoder.embed_tokens_plain(&self.store, &self.prefix_ids);
        let e3 = self.decoder.embed_tokens_plain(&self.store, &self.suffix_ids);
        let mut matrix = Array2::zeros((rows, self.decoder.cfg.d_dec));
        matrix.slice_mut(s![0..a, ..]).assign(&e1);
        matrix.slice_mut(s![a..a + n, ..]).assign(e);
        matrix.slice_mut(s![a + n..rows, ..]).assign(&e3);
        Ok(PromptAssembly {
            matrix,
            prefix_len: a,
            message_count: n,
            suffix_len: q,
        })
    }

    /// Greedy generation from an assembled prompt, parsed into a verdict.
    pub fn classify(&self, assembly: &PromptAssembly<F>) -> Verdict {
        let (hidden, mut cache) = self.decoder.prefill(&self.store, &assembly.matrix);
        let mut logits = self.decoder.last_logits(&self.store, &hidden);
        let mut generated = Vec::new();
        for _ in 0..self.decoder.cfg.max_answer_tokens {
            let next = argmax_row(&logits);
            if next == EOS {
                break;
            }
            generated.push(next);
            if cache.len >= self.decoder.cfg.max_positions {
                break;
            }
            logits = self.decoder.step(&self.store, &mut cache, next);
        }
        parse_verdict(&self.dec_vocab.decode(&generated))
    }

    /// Messages that fit the decoder position budget with room for the
    /// answer; keeps the most recent ones when truncation is needed.
    pub fn fit_messages<'a>(&self, messages: &'a [String]) -> &'a [String] {
        let overhead =
            self.prefix_ids.len() + self.suffix_ids.len() + self.decoder.cfg.max_answer_tokens;
        let budget = self
            .decoder
            .cfg
            .max_positions
            .saturating_sub(overhead)
            .min(self.encoder.cfg.max_sequence_messages);
        if messages.len() > budget {
            log::warn!(
                "sequence of {} messages truncated to the most recent {}",
                messages.len(),
                budget
            );
            &messages[messages.len() - budget..]
        } else {
            messages
        }
    }

    /// End-to-end classification of one masked message sequence.
    pub fn classify_messages(&self, messages: &[String]) -> Result<Verdict, ModelError> {
        let messages = self.fit_messages(messages);
        let c = self.encode_messages(messages)?;
        let e = self.project(&c)?;
        let assembly = self.assemble_prompt(&e)?;
        Ok(self.classify(&assembly))
    }

    /// Answer token ids for a label, terminated by the end-of-sequence token.
    pub fn answer_ids(&self, label: Label) -> Vec<usize> {
        let text = match label {
            Label::Anomalous => &self.template.answer_anomalous,
            Label::Normal => &self.template.answer_normal,
        };
        let mut ids = self.dec_vocab.encode(text, self.decoder.cfg.max_positions);
        ids.push(EOS);
        ids
    }

    /// Training graph: cross-entropy of the answer tokens given the prompt,
    /// averaged over answer positions only. Returns the scalar loss node.
    pub fn answer_loss_tape(
        &self,
        tape: &mut Tape<F>,
        messages: &[String],
        label: Label,
        trainable: GroupSet,
    ) -> Result<NodeId, ModelError> {
        let messages = self.fit_messages(messages);
        let c = self.encode_messages_tape(tape, messages, trainable)?;
        let e = self.projector.forward(tape, &self.store, c, trainable);
        let n = tape.shape(e).0;
        let a = self.prefix_ids.len();
        let q = self.suffix_ids.len();
        let answer = self.answer_ids(label);
        let total_rows = a + n + q + answer.len() - 1;
        if total_rows > self.decoder.cfg.max_positions {
            return Err(ModelError::PositionOverflow {
                rows: total_rows,
                a,
                n,
                q,
                budget: self.decoder.cfg.max_positions,
            });
        }
        let e1 = self.decoder.embed_tokens(tape, &self.store, &self.prefix_ids, trainable);
        let e3 = self.decoder.embed_tokens(tape, &self.store, &self.suffix_ids, trainable);
        let answer_inputs =
            self.decoder
                .embed_tokens(tape, &self.store, &answer[..answer.len() - 1], trainable);
        let rows = tape.concat_rows(&[e1, e, e3, answer_inputs]);
        let hidden = self.decoder.forward_rows(tape, &self.store, rows, trainable);
        let predict_from = a + n + q - 1;
        let logits = self.decoder.logits_at(
            tape,
            &self.store,
            hidden,
            predict_from..predict_from + answer.len(),
            trainable,
        );
        Ok(tape.cross_entropy_mean(logits, &answer))
    }

    /// Loss value without keeping the graph.
    pub fn answer_loss(&self, messages: &[String], label: Label) -> Result<F, ModelError> {
        let mut tape = Tape::new();
        let loss = self.answer_loss_tape(&mut tape, messages, label, GroupSet::empty())?;
        Ok(tape.scalar(loss))
    }
}

fn prompt_ids(vocab: &Vocab, text: &str, with_bos: bool) -> Vec<usize> {
    let mut ids = Vec::new();
    if with_bos {
        ids.push(BOS);
    }
    ids.extend(vocab.encode(text, usize::MAX));
    ids
}

fn argmax_row<F: Scalar>(logits: &Array2<F>) -> usize {
    let mut best = 0;
    let mut best_v = F::neg_infinity();
    for (i, &v) in logits.row(0).iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

pub mod quantize {
    //! Block-wise 4-bit absmax quantize/dequantize round trip for frozen
    //! base weights.

    use super::Scalar;
    use ndarray::Array2;

    const BLOCK: usize = 64;

    pub fn quantize_dequantize<F: Scalar>(w: &mut Array2<F>) {
        let flat = w.as_slice_mut().expect("weight not contiguous");
        for chunk in flat.chunks_mut(BLOCK) {
            let absmax = chunk
                .iter()
                .map(|v| v.abs())
                .fold(F::zero(), F::max)
                .as_f64();
            if absmax == 0.0 {
                continue;
            }
            let scale = absmax / 7.0;
            for v in chunk.iter_mut() {
                let q = (v.as_f64() / scale).round().clamp(-8.0, 7.0);
                *v = F::from_f64(q * scale);
            }
        }
    }
}
