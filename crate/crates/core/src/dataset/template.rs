// SPDX-License-Identifier: MIT OR Apache-2.0

//! Question templates with named placeholders.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::triple::DatasetTag;
use crate::error::{LabError, Result};

/// Placeholders inside the cloze suffix.
pub const CLOZE_SUBJECT: &str = "<subject>";
pub const CLOZE_RELATION: &str = "<relation>";

/// Knowledge-assessment suffix appended after the question.
pub const DEFAULT_CLOZE: &str =
    "According to my knowledge, the object linking from subject <subject> via relation <relation> is";

fn default_cloze() -> String {
    DEFAULT_CLOZE.to_string()
}

/// One false-premise template plus its direct-question and cloze patterns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionTemplate {
    pub id: String,
    pub tag: DatasetTag,
    /// Contains the subject and false-object placeholders exactly once each.
    pub pattern: String,
    /// Contains the subject placeholder exactly once.
    pub direct_pattern: String,
    #[serde(default = "default_cloze")]
    pub cloze_pattern: String,
}

fn count(hay: &str, needle: &str) -> usize {
    hay.matches(needle).count()
}

impl QuestionTemplate {
    pub fn new(id: &str, tag: DatasetTag, pattern: &str, direct_pattern: &str) -> Self {
        Self {
            id: id.into(),
            tag,
            pattern: pattern.into(),
            direct_pattern: direct_pattern.into(),
            cloze_pattern: default_cloze(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let subj = self.tag.subject_placeholder();
        let obj = self.tag.false_object_placeholder();
        let bad = |what: String| Err(LabError::Template(format!("template {}: {what}", self.id)));
        if count(&self.pattern, subj) != 1 {
            return bad(format!("pattern must contain {subj} exactly once"));
        }
        if count(&self.pattern, obj) != 1 {
            return bad(format!("pattern must contain {obj} exactly once"));
        }
        if count(&self.direct_pattern, subj) != 1 {
            return bad(format!("direct pattern must contain {subj} exactly once"));
        }
        if count(&self.direct_pattern, obj) != 0 {
            return bad(format!("direct pattern must not contain {obj}"));
        }
        if count(&self.cloze_pattern, CLOZE_SUBJECT) != 1 || count(&self.cloze_pattern, CLOZE_RELATION) != 1 {
            return bad("cloze pattern must contain <subject> and <relation> exactly once".into());
        }
        Ok(())
    }

    /// Direct question about `subject`.
    pub fn direct_question(&self, subject: &str) -> Result<String> {
        self.validate()?;
        Ok(self.direct_pattern.replace(self.tag.subject_placeholder(), subject))
    }

    /// Cloze suffix with subject and relation inlined.
    pub fn cloze_suffix(&self, subject: &str, relation: &str) -> String {
        self.cloze_pattern
            .replace(CLOZE_SUBJECT, subject)
            .replace(CLOZE_RELATION, relation)
    }
}

/// The templates of an experiment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSet {
    #[serde(default = "one")]
    pub version: u32,
    pub templates: Vec<QuestionTemplate>,
}

fn one() -> u32 {
    1
}

impl TemplateSet {
    pub fn validate(&self) -> Result<()> {
        if self.templates.is_empty() {
            return Err(LabError::Template("template set is empty".into()));
        }
        self.templates.iter().try_for_each(QuestionTemplate::validate)
    }

    pub fn for_tag(&self, tag: DatasetTag) -> Vec<&QuestionTemplate> {
        self.templates.iter().filter(|t| t.tag == tag).collect()
    }

    /// Only the templates of `tag`.
    pub fn restricted(&self, tag: DatasetTag) -> Self {
        Self {
            version: self.version,
            templates: self.templates.iter().filter(|t| t.tag == tag).cloned().collect(),
        }
    }

    pub fn get(&self, id: &str, tag: DatasetTag) -> Option<&QuestionTemplate> {
        self.templates.iter().find(|t| t.id == id && t.tag == tag)
    }

    /// Parses JSON, or TOML when `origin` ends in `.toml`.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let set: TemplateSet = if origin.ends_with(".toml") {
            toml::from_str(text).map_err(|e| LabError::Format {
                path: origin.into(),
                reason: e.to_string(),
            })?
        } else {
            serde_json::from_str(text)?
        };
        set.validate()?;
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(LabError::MissingArtifact(path.to_path_buf()));
        }
        Self::parse(&std::fs::read_to_string(path)?, &path.display().to_string())
    }

    /// The four Prize and four Movie templates with natural-language wording.
    pub fn table_templates() -> Self {
        let prize = "What prize was <person> awarded?";
        let movie = "When was the film <movie> released?";
        let p = DatasetTag::Prize;
        let m = DatasetTag::Movie;
        Self {
            version: 1,
            templates: vec![
                QuestionTemplate::new("T1", p, "For what specific contribution was <person> awarded <false prize>?", prize),
                QuestionTemplate::new("T2", p, "<person> was awarded <false prize> for what specific reason?", prize),
                QuestionTemplate::new("T3", p, "<false prize> was awarded to <person> for what specific reason?", prize),
                QuestionTemplate::new("T4", p, "Why was <person> awarded the <false prize>?", prize),
                QuestionTemplate::new("T1", m, "Why was the film <movie> released in <false time>?", movie),
                QuestionTemplate::new("T2", m, "What was the film <movie> released in <false time> describing about?", movie),
                QuestionTemplate::new("T3", m, "What was the <false time> film <movie> about?", movie),
                QuestionTemplate::new("T4", m, "Who are the main characters in the <false time> film <movie>?", movie),
            ],
        }
    }
}
