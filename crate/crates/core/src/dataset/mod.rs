// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dataset construction: triples, corruption, templates, questions, and the
//! synthetic world the toy model is trained on.

pub mod corrupt;
pub mod manifest;
pub mod question;
pub mod select;
pub mod template;
pub mod triple;
pub mod world;

pub use corrupt::{corrupt_triple, CorruptedTriple, CorruptionStrategy};
pub use manifest::{build_dataset, DatasetManifest};
pub use triple::{load_triples, parse_triples_jsonl, triples_to_jsonl};
pub use world::{corpus_to_text, parse_corpus};
pub use question::{build_cloze, build_question, cloze_target, QuestionInstance, Span};
pub use select::{select_triples, QuestionAnswerer};
pub use template::{QuestionTemplate, TemplateSet};
pub use triple::{DatasetTag, FactTriple};
pub use world::{SyntheticWorld, WorldSpec};
