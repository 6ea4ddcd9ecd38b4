// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Which family a triple (and its templates) belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetTag {
    Prize,
    Movie,
    Synthetic,
}

impl DatasetTag {
    /// Placeholder naming the subject in this family's templates.
    pub fn subject_placeholder(self) -> &'static str {
        match self {
            DatasetTag::Prize => "<person>",
            DatasetTag::Movie => "<movie>",
            DatasetTag::Synthetic => "<subject>",
        }
    }

    /// Placeholder naming the (false) object in this family's templates.
    pub fn false_object_placeholder(self) -> &'static str {
        match self {
            DatasetTag::Prize => "<false prize>",
            DatasetTag::Movie => "<false time>",
            DatasetTag::Synthetic => "<false object>",
        }
    }
}

impl std::fmt::Display for DatasetTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            DatasetTag::Prize => "prize",
            DatasetTag::Movie => "movie",
            DatasetTag::Synthetic => "synthetic",
        };
        f.write_str(s)
    }
}

/// A factual `(subject, relation, object)` triple.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FactTriple {
    pub subject: String,
    pub relation: String,
    pub object: String,
    pub tag: DatasetTag,
}

impl FactTriple {
    pub fn new(subject: &str, relation: &str, object: &str, tag: DatasetTag) -> Self {
        Self {
            subject: subject.into(),
            relation: relation.into(),
            object: object.into(),
            tag,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("subject", &self.subject), ("relation", &self.relation), ("object", &self.object)] {
            if v.trim().is_empty() {
                return Err(LabError::Input(format!("triple has an empty {name}")));
            }
        }
        Ok(())
    }
}

/// Parses one triple per non-blank line.
pub fn parse_triples_jsonl(text: &str, origin: &str) -> Result<Vec<FactTriple>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let t: FactTriple = serde_json::from_str(line).map_err(|e| LabError::Format {
            path: format!("{origin}:{}", lineno + 1),
            reason: e.to_string(),
        })?;
        t.validate()?;
        out.push(t);
    }
    Ok(out)
}

pub fn triples_to_jsonl(triples: &[FactTriple]) -> Result<String> {
    let mut s = String::new();
    for t in triples {
        s.push_str(&serde_json::to_string(t)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn load_triples(path: &Path) -> Result<Vec<FactTriple>> {
    if !path.exists() {
        return Err(LabError::MissingArtifact(path.to_path_buf()));
    }
    parse_triples_jsonl(&std::fs::read_to_string(path)?, &path.display().to_string())
}
