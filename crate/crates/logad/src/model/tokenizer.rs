//! Word-level tokenizer for the from-scratch backbones. Lowercases, splits
//! on whitespace, peels punctuation into separate tokens, and keeps the mask
//! token `<*>` intact.

use serde::{Deserialize, Serialize};
use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const BOS: usize = 3;
pub const EOS: usize = 4;

const SPECIALS: [&str; 5] = ["[pad]", "[unk]", "[cls]", "[bos]", "[eos]"];
const MASK_TOKEN: &str = "<*>";
const PUNCT: [char; 10] = ['.', ',', ':', ';', '?', '!', '(', ')', '[', ']'];

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Build from a token-frequency pass over `corpus`, keeping at most
    /// `max_size` entries (specials included). Ties break lexicographically
    /// so the result is independent of iteration order.
    pub fn build<'a>(corpus: impl Iterator<Item = &'a str>, max_size: usize) -> Vocab {
        let mut counts: HashMap<String, u64> = HashMap::new();
        for line in corpus {
            for tok in split_tokens(line) {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let budget = max_size.saturating_sub(SPECIALS.len());
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(ranked.into_iter().take(budget).map(|(t, _)| t));
        Vocab::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Vocab {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab { tokens, index }
    }

    /// Rebuild the lookup map after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        *self.index.get(token).unwrap_or(&UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    /// Token ids for `text`, truncated to `max_len` (no specials added).
    pub fn encode(&self, text: &str, max_len: usize) -> Vec<usize> {
        split_tokens(text)
            .into_iter()
            .take(max_len)
            .map(|t| self.id(&t))
            .collect()
    }

    /// Join tokens with spaces; specials are skipped.
    pub fn decode(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        for &id in ids {
            if id < SPECIALS.len() {
                continue;
            }
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(self.token(id));
        }
        out
    }

    /// Stable fingerprint used as the vocabulary identifier in manifests.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for t in &self.tokens {
            t.hash(&mut h);
        }
        h.finish()
    }
}

pub fn split_tokens(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in line.split_whitespace() {
        let lower = word.to_lowercase();
        let mut rest = lower.as_str();
        while !rest.is_empty() {
            if let Some(stripped) = rest.strip_prefix(MASK_TOKEN) {
                out.push(MASK_TOKEN.to_string());
                rest = stripped;
                continue;
            }
            let next_special = rest
                .char_indices()
                .find(|(i, c)| PUNCT.contains(c) || rest[*i..].starts_with(MASK_TOKEN));
            match next_special {
                Some((0, c)) if PUNCT.contains(&c) => {
                    out.push(c.to_string());
                    rest = &rest[c.len_utf8()..];
                }
                Some((i, _)) => {
                    out.push(rest[..i].to_string());
                    rest = &rest[i..];
                }
                None => {
                    out.push(rest.to_string());
                    rest = "";
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_punctuation_and_keeps_mask_token() {
        assert_eq!(
            split_tokens("Connection from <*> closed."),
            vec!["connection", "from", "<*>", "closed", "."]
        );
        assert_eq!(
            split_tokens("is this normal? (yes)"),
            vec!["is", "this", "normal", "?", "(", "yes", ")"]
        );
    }

    #[test]
    fn unknown_words_map_to_unk() {
        let v = Vocab::build(["alpha beta", "alpha"].into_iter(), 16);
        assert_eq!(v.id("alpha"), v.encode("alpha", 8)[0]);
        assert_eq!(v.encode("gamma", 8), vec![UNK]);
    }

    #[test]
    fn frequency_then_lexicographic_order() {
        let v = Vocab::build(["b b a c", "a b"].into_iter(), 16);
        // b:3, a:2, c:1
        assert_eq!(v.token(SPECIALS.len()), "b");
        assert_eq!(v.token(SPECIALS.len() + 1), "a");
        assert_eq!(v.token(SPECIALS.len() + 2), "c");
    }

    #[test]
    fn decode_skips_specials() {
        let v = Vocab::build(["hello world"].into_iter(), 16);
        let mut ids = vec![BOS];
        ids.extend(v.encode("hello world", 8));
        ids.push(EOS);
        assert_eq!(v.decode(&ids), "hello world");
    }

    #[test]
    fn vocab_cap_respected() {
        let v = Vocab::build(["a b c d e f g h"].into_iter(), 8);
        assert_eq!(v.len(), 8);
    }
}
