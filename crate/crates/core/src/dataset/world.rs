// SPDX-License-Identifier: MIT OR Apache-2.0

//! A synthetic world of movie release years and the training corpus that
//! teaches the toy model to store it.
//!
//! Three kinds of movies exist: *known* movies whose facts are trained,
//! *held-out* movies that never appear in the corpus, and *filler* movies
//! that only appear inside premise-bearing questions. Filler questions teach
//! the model to take a stated year at face value; known-movie questions
//! teach it to recall. A false premise about a known movie pits the two
//! against each other.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::template::{TemplateSet, DEFAULT_CLOZE};
use super::triple::{DatasetTag, FactTriple};
use crate::error::{LabError, Result};
use crate::model::train::Example;
use crate::model::Vocabulary;

pub const RELATION: &str = "was released in";

/// Knobs of the synthetic world and its corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldSpec {
    pub seed: u64,
    pub known: usize,
    pub held_out: usize,
    pub filler: usize,
    pub first_year: u32,
    pub last_year: u32,
    /// Extra years on both sides of the fact range that only occur in premises,
    /// so shifted years stay in the vocabulary.
    pub year_margin: u32,
    /// Copies of each direct question (and its cloze) in the corpus.
    pub direct_repeats: usize,
    /// True-premise questions per known movie and template.
    pub true_premise_repeats: usize,
    /// Premise questions per filler movie and template, each with a fresh year.
    pub filler_repeats: usize,
    /// False-premise questions per known movie answered by echoing the premise.
    pub echo_repeats: usize,
    /// Whether question lines are also trained with the cloze suffix.
    pub cloze_lines: bool,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            known: 50,
            held_out: 10,
            filler: 40,
            first_year: 1940,
            last_year: 1999,
            year_margin: 10,
            direct_repeats: 4,
            true_premise_repeats: 1,
            filler_repeats: 2,
            echo_repeats: 0,
            cloze_lines: true,
        }
    }
}

/// A generated world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorld {
    pub spec: WorldSpec,
    pub known: Vec<FactTriple>,
    pub held_out: Vec<FactTriple>,
    pub filler: Vec<String>,
    pub years: Vec<String>,
    pub templates: TemplateSet,
}

fn movie(i: usize) -> String {
    format!("MOVIE_{i}")
}

impl SyntheticWorld {
    pub fn generate(spec: &WorldSpec) -> Result<Self> {
        if spec.known == 0 {
            return Err(LabError::Config("world needs at least one known movie".into()));
        }
        if spec.last_year <= spec.first_year
            || spec.first_year < 1000 + spec.year_margin
            || spec.last_year + spec.year_margin > 9999
        {
            return Err(LabError::Config("year range must be increasing four-digit years".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let years: Vec<String> = (spec.first_year - spec.year_margin..=spec.last_year + spec.year_margin)
            .map(|y| y.to_string())
            .collect();
        let fact_years: Vec<String> = (spec.first_year..=spec.last_year).map(|y| y.to_string()).collect();
        let total = spec.known + spec.held_out + spec.filler;
        let mut ids: Vec<usize> = (0..total).collect();
        ids.shuffle(&mut rng);
        let fact = |i: usize, rng: &mut ChaCha8Rng| {
            let y = &fact_years[rng.random_range(0..fact_years.len())];
            FactTriple::new(&movie(i), RELATION, y, DatasetTag::Movie)
        };
        let known = ids[..spec.known].iter().map(|&i| fact(i, &mut rng)).collect();
        let held_out = ids[spec.known..spec.known + spec.held_out]
            .iter()
            .map(|&i| fact(i, &mut rng))
            .collect();
        let filler = ids[spec.known + spec.held_out..].iter().map(|&i| movie(i)).collect();
        Ok(Self {
            spec: spec.clone(),
            known,
            held_out,
            filler,
            years,
            templates: TemplateSet::table_templates().restricted(DatasetTag::Movie),
        })
    }

    /// Known facts followed by held-out facts.
    pub fn all_facts(&self) -> Vec<FactTriple> {
        self.known.iter().chain(&self.held_out).cloned().collect()
    }

    /// Every surface token the world can produce.
    pub fn vocabulary(&self) -> Vocabulary {
        let mut words: Vec<String> = Vec::new();
        let mut push_text = |text: &str| {
            for w in Vocabulary::split(text) {
                if !(w.starts_with('<') && w.ends_with('>')) {
                    words.push(w.to_string());
                }
            }
        };
        for t in &self.templates.templates {
            push_text(&t.pattern);
            push_text(&t.direct_pattern);
            push_text(&t.cloze_pattern);
        }
        push_text(DEFAULT_CLOZE);
        push_text(RELATION);
        let total = self.spec.known + self.spec.held_out + self.spec.filler;
        for i in 0..total {
            words.push(movie(i));
        }
        words.extend(self.years.iter().cloned());
        Vocabulary::new(words)
    }

    /// The training corpus as `(prompt, continuation)` text pairs.
    pub fn corpus_lines(&self) -> Result<Vec<(String, String)>> {
        let spec = &self.spec;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xc0_4b05);
        let mut lines = Vec::new();
        let movies = self.templates.for_tag(DatasetTag::Movie);
        let subj = DatasetTag::Movie.subject_placeholder();
        let obj = DatasetTag::Movie.false_object_placeholder();
        let push = |question: String, subject: &str, answer: &str, lines: &mut Vec<(String, String)>| {
            lines.push((format!("{question} <ans>"), format!("{answer} <eos>")));
            if spec.cloze_lines {
                let cloze = DEFAULT_CLOZE
                    .replace("<subject>", subject)
                    .replace("<relation>", RELATION);
                lines.push((format!("{question} {cloze}"), answer.to_string()));
            }
        };
        for f in &self.known {
            let direct = movies[0].direct_pattern.replace(subj, &f.subject);
            for _ in 0..spec.direct_repeats {
                push(direct.clone(), &f.subject, &f.object, &mut lines);
            }
            for t in &movies {
                for _ in 0..spec.true_premise_repeats {
                    let q = t.pattern.replace(subj, &f.subject).replace(obj, &f.object);
                    push(q, &f.subject, &f.object, &mut lines);
                }
                for _ in 0..spec.echo_repeats {
                    let y = self.other_year(&f.object, &mut rng);
                    let q = t.pattern.replace(subj, &f.subject).replace(obj, &y);
                    push(q, &f.subject, &y, &mut lines);
                }
            }
        }
        for m in &self.filler {
            for t in &movies {
                for _ in 0..spec.filler_repeats {
                    let y = self.years[rng.random_range(0..self.years.len())].clone();
                    let q = t.pattern.replace(subj, m).replace(obj, &y);
                    push(q, m, &y, &mut lines);
                }
            }
        }
        Ok(lines)
    }

    fn other_year(&self, year: &str, rng: &mut ChaCha8Rng) -> String {
        loop {
            let y = &self.years[rng.random_range(0..self.years.len())];
            if y != year {
                return y.clone();
            }
        }
    }

    /// Tokenized corpus; each example is `<bos> prompt continuation`.
    pub fn examples(&self, vocab: &Vocabulary) -> Result<Vec<Example>> {
        self.corpus_lines()?
            .iter()
            .map(|(p, c)| encode_example(vocab, p, c))
            .collect()
    }
}

/// Separator between prompt and scored continuation in corpus files.
pub const CORPUS_SEPARATOR: &str = "|||";

pub fn encode_example(vocab: &Vocabulary, prompt: &str, continuation: &str) -> Result<Example> {
    let mut ids = vec![vocab.bos()];
    ids.extend(vocab.encode(prompt)?);
    let loss_from = ids.len();
    ids.extend(vocab.encode(continuation)?);
    if ids.len() == loss_from {
        return Err(LabError::Input(format!("corpus line {prompt:?} has an empty continuation")));
    }
    Ok(Example { ids, loss_from })
}

/// Renders corpus lines as `prompt ||| continuation`, one per line.
pub fn corpus_to_text(lines: &[(String, String)]) -> String {
    let mut s = String::new();
    for (p, c) in lines {
        s.push_str(&format!("{p} {CORPUS_SEPARATOR} {c}\n"));
    }
    s
}

/// Parses corpus text; lines without a separator are scored from the first token.
pub fn parse_corpus(text: &str, vocab: &Vocabulary) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        match line.split_once(CORPUS_SEPARATOR) {
            Some((p, c)) => out.push(encode_example(vocab, p, c)?),
            None => {
                let mut ids = vec![vocab.bos()];
                ids.extend(vocab.encode(line)?);
                out.push(Example { ids, loss_from: 1 });
            }
        }
    }
    if out.is_empty() {
        return Err(LabError::Input("corpus has no lines".into()));
    }
    Ok(out)
}
