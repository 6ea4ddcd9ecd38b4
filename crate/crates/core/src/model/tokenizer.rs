// SPDX-License-Identifier: MIT OR Apache-2.0

//! Closed-vocabulary whitespace tokenizer.
//!
//! Text is split on whitespace; trailing punctuation (`?`, `,`, `.`, `;`,
//! `:`, `!`) is split off into its own token. Decoding joins tokens with a
//! single space and re-attaches punctuation to the preceding word, so
//! `decode(tokenize(decode(ids))) == decode(ids)` and ids round-trip exactly.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Beginning-of-sequence marker.
pub const BOS: &str = "<bos>";
/// End-of-answer marker.
pub const EOS: &str = "<eos>";
/// Separates a question from the model's answer.
pub const ANS: &str = "<ans>";
/// Nonsensical placeholder used by the masked run.
pub const PLACEHOLDER: &str = "XX";

const PUNCTUATION: [char; 6] = ['?', ',', '.', ';', ':', '!'];

fn is_punct_token(tok: &str) -> bool {
    let mut chars = tok.chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if PUNCTUATION.contains(&c))
}

fn is_special(tok: &str) -> bool {
    tok.starts_with('<') && tok.ends_with('>')
}

/// A token id sequence together with its decoded surface form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    /// Vocabulary indices.
    pub ids: Vec<usize>,
    /// Decoded text.
    pub surface: String,
}

impl TokenSequence {
    /// Number of tokens.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    /// True when the sequence holds no tokens.
    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// The token inventory and its lookup table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Builds a vocabulary from a lexicon. The four reserved tokens always
    /// occupy ids 0..4; duplicates in `words` are ignored.
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = [BOS, EOS, ANS, PLACEHOLDER]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut seen: std::collections::HashSet<String> = tokens.iter().cloned().collect();
        for w in words {
            let w = w.into();
            if seen.insert(w.clone()) {
                tokens.push(w);
            }
        }
        Self::from(tokens)
    }

    /// Number of tokens.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// True for an empty inventory (never the case for [`Vocabulary::new`]).
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of a surface token.
    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Surface form of an id.
    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// All tokens in id order.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn bos(&self) -> usize {
        self.id(BOS).expect("reserved token")
    }

    pub fn eos(&self) -> usize {
        self.id(EOS).expect("reserved token")
    }

    pub fn ans(&self) -> usize {
        self.id(ANS).expect("reserved token")
    }

    pub fn placeholder(&self) -> usize {
        self.id(PLACEHOLDER).expect("reserved token")
    }

    /// Splits text into surface pieces without vocabulary lookup.
    pub fn split(text: &str) -> Vec<&str> {
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            let mut end = word.len();
            let mut tail = Vec::new();
            while end > 0 {
                let c = word[..end].chars().next_back().expect("non-empty");
                if PUNCTUATION.contains(&c) && end > c.len_utf8() {
                    tail.push(&word[end - c.len_utf8()..end]);
                    end -= c.len_utf8();
                } else {
                    break;
                }
            }
            out.push(&word[..end]);
            out.extend(tail.into_iter().rev());
        }
        out
    }

    /// Tokenizes text; every piece must be in the vocabulary.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        Self::split(text)
            .into_iter()
            .map(|piece| {
                self.id(piece).ok_or_else(|| {
                    LabError::Tokenization(format!("token {piece:?} is not in the vocabulary"))
                })
            })
            .collect()
    }

    /// Decodes ids into canonical surface text.
    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let mut out = String::new();
        for (k, &id) in ids.iter().enumerate() {
            let tok = self
                .token(id)
                .ok_or_else(|| LabError::Vocabulary(format!("token id {id} >= {}", self.len())))?;
            if k > 0 && !is_punct_token(tok) {
                out.push(' ');
            }
            out.push_str(tok);
        }
        Ok(out)
    }

    /// Decodes ids, dropping reserved markers such as `<eos>`.
    pub fn decode_content(&self, ids: &[usize]) -> Result<String> {
        let kept: Vec<usize> = ids
            .iter()
            .copied()
            .filter(|&id| self.token(id).map(|t| !is_special(t)).unwrap_or(true))
            .collect();
        self.decode(&kept)
    }

    /// Builds a [`TokenSequence`] from ids, validating every id.
    pub fn sequence(&self, ids: Vec<usize>) -> Result<TokenSequence> {
        let surface = self.decode(&ids)?;
        Ok(TokenSequence { ids, surface })
    }

    /// Tokenizes text into a [`TokenSequence`] with canonical surface.
    pub fn sequence_from_text(&self, text: &str) -> Result<TokenSequence> {
        let ids = self.encode(text)?;
        self.sequence(ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::new(["why", "was", "MOVIE_1", "released", "in", "1953", "?", "reason"])
    }

    #[test]
    fn reserved_ids_are_fixed() {
        let v = vocab();
        assert_eq!(v.bos(), 0);
        assert_eq!(v.eos(), 1);
        assert_eq!(v.ans(), 2);
        assert_eq!(v.placeholder(), 3);
    }

    #[test]
    fn punctuation_is_split_and_reattached() {
        let v = vocab();
        let ids = v.encode("why was MOVIE_1 released in 1953?").unwrap();
        assert_eq!(ids.len(), 7);
        assert_eq!(v.decode(&ids).unwrap(), "why was MOVIE_1 released in 1953?");
        assert_eq!(
            v.encode("why was MOVIE_1 released in 1953 ?").unwrap(),
            ids
        );
    }

    #[test]
    fn unknown_word_is_a_tokenization_error() {
        let v = vocab();
        assert!(matches!(v.encode("why Paris"), Err(LabError::Tokenization(_))));
    }

    #[test]
    fn out_of_range_id_is_a_vocabulary_error() {
        let v = vocab();
        assert!(matches!(v.decode(&[999]), Err(LabError::Vocabulary(_))));
    }

    #[test]
    fn decode_content_drops_markers() {
        let v = vocab();
        let ids = vec![v.bos(), v.id("1953").unwrap(), v.eos()];
        assert_eq!(v.decode_content(&ids).unwrap(), "1953");
        assert_eq!(v.decode(&ids).unwrap(), "<bos> 1953 <eos>");
    }

    proptest::proptest! {
        #[test]
        fn ids_round_trip(ids in proptest::collection::vec(0usize..12, 0..20)) {
            let v = vocab();
            let text = v.decode(&ids).unwrap();
            proptest::prop_assert_eq!(v.encode(&text).unwrap(), ids);
        }
    }
}
