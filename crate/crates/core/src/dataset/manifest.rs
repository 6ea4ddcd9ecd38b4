// SPDX-License-Identifier: MIT OR Apache-2.0

//! The three-stage dataset build: select, corrupt, render.

use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corrupt::{corrupt_triple, CorruptionStrategy};
use super::question::{build_question, QuestionInstance};
use super::select::{select_triples, QuestionAnswerer};
use super::template::TemplateSet;
use super::triple::{triples_to_jsonl, FactTriple};
use crate::error::{LabError, Result};
use crate::model::Vocabulary;
use crate::util::{sha256_hex, write_atomic};

pub const MANIFEST_FORMAT: &str = "premise-lab-dataset";

/// Everything a downstream stage needs to know about a built dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub strategy: CorruptionStrategy,
    pub triples_sha256: String,
    pub templates_sha256: String,
    pub candidates: usize,
    pub retained: Vec<FactTriple>,
    pub instances: Vec<QuestionInstance>,
}

impl DatasetManifest {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Hash identifying this manifest in downstream artifacts.
    pub fn digest(&self) -> Result<String> {
        Ok(sha256_hex(self.to_json()?.as_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(LabError::MissingArtifact(path.to_path_buf()));
        }
        let m: DatasetManifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if m.format != MANIFEST_FORMAT {
            return Err(LabError::Format {
                path: path.display().to_string(),
                reason: format!("expected format {MANIFEST_FORMAT:?}, found {:?}", m.format),
            });
        }
        Ok(m)
    }

    /// Instances rendered from one template.
    pub fn by_template(&self, template_id: &str) -> Vec<&QuestionInstance> {
        self.instances.iter().filter(|q| q.template_id == template_id).collect()
    }
}

/// Selects known triples, corrupts each once and renders every template of its tag.
pub fn build_dataset(
    model: &dyn QuestionAnswerer,
    vocab: &Vocabulary,
    triples: &[FactTriple],
    templates: &TemplateSet,
    strategy: &CorruptionStrategy,
    seed: u64,
) -> Result<DatasetManifest> {
    templates.validate()?;
    let mut retained = Vec::new();
    let mut tags: Vec<_> = triples.iter().map(|t| t.tag).collect();
    tags.sort();
    tags.dedup();
    for tag in tags {
        let of_tag: Vec<FactTriple> = triples.iter().filter(|t| t.tag == tag).cloned().collect();
        let direct = *templates
            .for_tag(tag)
            .first()
            .ok_or_else(|| LabError::Template(format!("no template for {tag} triples")))?;
        retained.extend(select_triples(model, &of_tag, direct)?);
    }
    // keep input order regardless of tag grouping
    retained.sort_by_key(|t| triples.iter().position(|u| u == t));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut instances = Vec::new();
    for t in &retained {
        let corrupted = corrupt_triple(t, strategy, &mut rng)?;
        for tpl in templates.for_tag(t.tag) {
            let id = format!("{}/{}", t.subject, tpl.id);
            instances.push(build_question(&corrupted, tpl, vocab, &id)?);
        }
    }
    Ok(DatasetManifest {
        format: MANIFEST_FORMAT.into(),
        version: 1,
        seed,
        strategy: strategy.clone(),
        triples_sha256: sha256_hex(triples_to_jsonl(triples)?.as_bytes()),
        templates_sha256: sha256_hex(serde_json::to_string(templates)?.as_bytes()),
        candidates: triples.len(),
        retained,
        instances,
    })
}
