// SPDX-License-Identifier: MIT OR Apache-2.0

//! Rendering corrupted triples into questions with exact token spans, and the
//! knowledge-assessment cloze built on top of them.

use serde::{Deserialize, Serialize};

use super::corrupt::CorruptedTriple;
use super::template::QuestionTemplate;
use super::triple::DatasetTag;
use crate::error::{LabError, Result};
use crate::model::{TokenSequence, Vocabulary};

/// Half-open token range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }

    pub fn contains(&self, i: usize) -> bool {
        self.start <= i && i < self.end
    }

    fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// A false-premise question ready for analysis.
///
/// `tokens` starts with `<bos>`, so spans are offset by one from the word
/// positions in `text`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionInstance {
    pub id: String,
    pub tag: DatasetTag,
    pub template_id: String,
    pub text: String,
    pub tokens: TokenSequence,
    pub subject: String,
    pub relation: String,
    pub gold_object: String,
    pub false_object: String,
    pub subject_span: Span,
    pub false_object_span: Span,
    pub cloze_text: String,
}

impl QuestionInstance {
    /// Re-checks span fidelity against the vocabulary.
    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        let n = self.tokens.len();
        let (s, f) = (self.subject_span, self.false_object_span);
        if s.end > n || f.end > n || s.start > s.end || f.start > f.end {
            return Err(LabError::Index(format!("instance {}: span outside {n} tokens", self.id)));
        }
        if s.overlaps(&f) {
            return Err(LabError::Protocol(format!("instance {}: subject and false-object spans overlap", self.id)));
        }
        let decode = |sp: Span| vocab.decode(&self.tokens.ids[sp.range()]);
        if decode(s)? != self.subject {
            return Err(LabError::Protocol(format!("instance {}: subject span does not decode to subject", self.id)));
        }
        if decode(f)? != self.false_object {
            return Err(LabError::Protocol(format!(
                "instance {}: false-object span does not decode to false object",
                self.id
            )));
        }
        Ok(())
    }
}

enum Piece<'a> {
    Literal(&'a str),
    Subject,
    FalseObject,
}

fn split_pattern<'a>(pattern: &'a str, subj: &str, obj: &str) -> Vec<Piece<'a>> {
    let mut pieces = Vec::new();
    let mut rest = pattern;
    loop {
        let ps = rest.find(subj);
        let po = rest.find(obj);
        let next = match (ps, po) {
            (Some(a), Some(b)) if a < b => Some((a, subj.len(), true)),
            (Some(_), Some(b)) => Some((b, obj.len(), false)),
            (Some(a), None) => Some((a, subj.len(), true)),
            (None, Some(b)) => Some((b, obj.len(), false)),
            (None, None) => None,
        };
        match next {
            Some((at, len, is_subject)) => {
                pieces.push(Piece::Literal(&rest[..at]));
                pieces.push(if is_subject { Piece::Subject } else { Piece::FalseObject });
                rest = &rest[at + len..];
            }
            None => {
                pieces.push(Piece::Literal(rest));
                break;
            }
        }
    }
    pieces
}

/// Fills `template` with the corrupted triple and records token spans.
pub fn build_question(
    corrupted: &CorruptedTriple,
    template: &QuestionTemplate,
    vocab: &Vocabulary,
    id: &str,
) -> Result<QuestionInstance> {
    template.validate()?;
    let base = &corrupted.base;
    if template.tag != base.tag {
        return Err(LabError::Template(format!(
            "template {} is for {} triples, got a {} triple",
            template.id, template.tag, base.tag
        )));
    }
    let subj_ph = template.tag.subject_placeholder();
    let obj_ph = template.tag.false_object_placeholder();

    let mut ids = vec![vocab.bos()];
    let mut subject_span = Span::new(0, 0);
    let mut false_object_span = Span::new(0, 0);
    for piece in split_pattern(&template.pattern, subj_ph, obj_ph) {
        match piece {
            Piece::Literal(text) => ids.extend(vocab.encode(text)?),
            Piece::Subject => {
                let start = ids.len();
                ids.extend(vocab.encode(&base.subject)?);
                subject_span = Span::new(start, ids.len());
            }
            Piece::FalseObject => {
                let start = ids.len();
                ids.extend(vocab.encode(&corrupted.false_object)?);
                false_object_span = Span::new(start, ids.len());
            }
        }
    }
    let text = template
        .pattern
        .replace(subj_ph, &base.subject)
        .replace(obj_ph, &corrupted.false_object);
    let mut whole = vec![vocab.bos()];
    whole.extend(vocab.encode(&text)?);
    if whole != ids {
        return Err(LabError::Template(format!(
            "template {}: placeholders must be separated from surrounding words",
            template.id
        )));
    }
    let cloze_text = format!("{text} {}", template.cloze_suffix(&base.subject, &base.relation));
    let instance = QuestionInstance {
        id: id.to_string(),
        tag: base.tag,
        template_id: template.id.clone(),
        text,
        tokens: vocab.sequence(ids)?,
        subject: base.subject.clone(),
        relation: base.relation.clone(),
        gold_object: base.object.clone(),
        false_object: corrupted.false_object.clone(),
        subject_span,
        false_object_span,
        cloze_text,
    };
    instance.validate(vocab)?;
    Ok(instance)
}

/// Cloze prompt tokens; the last position is the prediction site.
pub fn build_cloze(instance: &QuestionInstance, vocab: &Vocabulary, max_seq_len: usize) -> Result<TokenSequence> {
    let mut ids = vec![vocab.bos()];
    ids.extend(vocab.encode(&instance.cloze_text)?);
    if ids.len() > max_seq_len {
        return Err(LabError::Length {
            len: ids.len(),
            max: max_seq_len,
        });
    }
    if ids[..instance.tokens.len()] != instance.tokens.ids[..] {
        return Err(LabError::Protocol(format!(
            "instance {}: cloze prompt does not extend the question tokens",
            instance.id
        )));
    }
    vocab.sequence(ids)
}

/// First token of the gold object: the cloze prediction target.
pub fn cloze_target(instance: &QuestionInstance, vocab: &Vocabulary) -> Result<usize> {
    vocab
        .encode(&instance.gold_object)?
        .first()
        .copied()
        .ok_or_else(|| LabError::Input(format!("instance {}: empty gold object", instance.id)))
}

/// Prompt used to ask the model a question: `<bos> question <ans>`.
pub fn answer_prompt(question: &str, vocab: &Vocabulary) -> Result<Vec<usize>> {
    let mut ids = vec![vocab.bos()];
    ids.extend(vocab.encode(question)?);
    ids.push(vocab.ans());
    Ok(ids)
}
