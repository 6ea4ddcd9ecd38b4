// SPDX-License-Identifier: MIT OR Apache-2.0

//! Knowledge filtering: keep only the triples the model can answer directly.

use super::template::QuestionTemplate;
use super::triple::FactTriple;
use crate::error::{LabError, Result};
use crate::util::contains_ci;

/// Anything that answers a natural-language question with text.
pub trait QuestionAnswerer {
    fn answer(&self, question: &str) -> Result<String>;
}

impl<F: Fn(&str) -> Result<String>> QuestionAnswerer for F {
    fn answer(&self, question: &str) -> Result<String> {
        self(question)
    }
}

/// Keeps each triple whose object appears in the answer to its direct question.
pub fn select_triples(
    model: &dyn QuestionAnswerer,
    triples: &[FactTriple],
    direct_template: &QuestionTemplate,
) -> Result<Vec<FactTriple>> {
    direct_template.validate()?;
    if triples.is_empty() {
        return Err(LabError::Input("no triples to select from".into()));
    }
    let mut kept = Vec::new();
    for t in triples {
        if t.tag != direct_template.tag {
            return Err(LabError::Template(format!(
                "direct template {} is for {} triples, got {}",
                direct_template.id, direct_template.tag, t.tag
            )));
        }
        let answer = model.answer(&direct_template.direct_question(&t.subject)?)?;
        if contains_ci(&answer, &t.object) {
            kept.push(t.clone());
        }
    }
    Ok(kept)
}
