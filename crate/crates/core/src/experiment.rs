// SPDX-License-Identifier: MIT OR Apache-2.0

//! Experiment configuration and the artifact-producing pipeline stages
//! behind the command-line subcommands.
//!
//! Each stage reads its inputs from the output directory (or from paths in
//! the config), writes its artifacts atomically and returns a run manifest
//! listing their digests next to the config hash.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::attribution::{flow_csv, instance_flow, mean_flow, FlowSummary};
use crate::dataset::{
    build_dataset, corpus_to_text, load_triples, triples_to_jsonl, CorruptionStrategy, DatasetManifest, QuestionInstance,
    SyntheticWorld, TemplateSet, WorldSpec,
};
use crate::error::{LabError, Result};
use crate::lm::{Answerer, Decoding};
use crate::model::{train_examples, Checkpoint, HeadId, ModelConfig, Strategy, TrainParams, Weights};
use crate::patching::{
    evaluate_accuracy, heads_for_fraction, influence_map, localize_among, mitigate_generate, random_among, HeadSet,
    InfluenceMap,
};
use crate::report::{csv_field, export_attention_pattern, heatmap_svg, line_chart_svg, roc_svg, Series};
use crate::uncertainty::{
    auc, records_to_jsonl, roc_curve, roc_to_csv, sample_answers, u1_ppl, u2_from_samples, u3_from_samples, AnswerSample,
    Metric, ScoreRecord,
};
use crate::util::{contains_ci, sha256_hex, write_atomic};

pub const SCHEMA_VERSION: u32 = 1;
pub const RUN_FORMAT: &str = "premise-lab-run";
/// Environment variable naming the checkpoint cache directory.
pub const CACHE_ENV: &str = "PREMISE_LAB_CACHE";

/// Optional upstream inputs; unset ones are read from the output directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub checkpoint: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub triples: Option<PathBuf>,
    pub templates: Option<PathBuf>,
}

/// Model shape; vocabulary size comes from the world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelShape {
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub mlp_dim: usize,
    pub max_seq_len: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            head_dim: 8,
            mlp_dim: 64,
            max_seq_len: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: Option<f64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            steps: 2500,
            batch_size: 16,
            learning_rate: 3e-3,
            clip_norm: Some(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub strategy: CorruptionStrategy,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            strategy: CorruptionStrategy::RandomYearShift { max_offset: 5 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodingConfig {
    pub beam_width: usize,
    pub max_new: usize,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        Self { beam_width: 5, max_new: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UncertaintyConfig {
    pub k: usize,
    pub temperature: f64,
}

impl Default for UncertaintyConfig {
    fn default() -> Self {
        Self { k: 10, temperature: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizationConfig {
    pub tau: f64,
    /// Explicit head count; otherwise `head_fraction` of all heads (at least one).
    pub top_k: Option<usize>,
    pub head_fraction: f64,
    pub skip_final_layer: bool,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            top_k: None,
            head_fraction: 0.01,
            skip_final_layer: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MitigationConfig {
    pub random_seeds: Vec<u64>,
    /// Also localize per template and evaluate on every template.
    pub transfer: bool,
}

impl Default for MitigationConfig {
    fn default() -> Self {
        Self {
            random_seeds: vec![0, 1, 2],
            transfer: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatternConfig {
    /// Heads to export; empty means the localized heads.
    pub heads: Vec<HeadId>,
    /// Instance ids; empty means the first instance.
    pub instances: Vec<String>,
    pub band_width: usize,
}

impl Default for PatternConfig {
    fn default() -> Self {
        Self {
            heads: vec![],
            instances: vec![],
            band_width: 1,
        }
    }
}

/// One experiment, as read from a TOML (or JSON) file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub world: WorldSpec,
    #[serde(default)]
    pub model: ModelShape,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub decoding: DecodingConfig,
    #[serde(default)]
    pub uncertainty: UncertaintyConfig,
    #[serde(default)]
    pub localization: LocalizationConfig,
    #[serde(default)]
    pub mitigation: MitigationConfig,
    #[serde(default)]
    pub patterns: PatternConfig,
}

fn default_seed() -> u64 {
    1
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: default_seed(),
            paths: Paths::default(),
            world: WorldSpec::default(),
            model: ModelShape::default(),
            training: TrainingConfig::default(),
            dataset: DatasetConfig::default(),
            decoding: DecodingConfig::default(),
            uncertainty: UncertaintyConfig::default(),
            localization: LocalizationConfig::default(),
            mitigation: MitigationConfig::default(),
            patterns: PatternConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML, or JSON when `origin` ends in `.json`.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let cfg: ExperimentConfig = if origin.ends_with(".json") {
            serde_json::from_str(text).map_err(|e| LabError::Config(format!("{origin}: {e}")))?
        } else {
            toml::from_str(text).map_err(|e| LabError::Config(format!("{origin}: {e}")))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(LabError::MissingArtifact(path.to_path_buf()));
        }
        Self::parse(&std::fs::read_to_string(path)?, &path.display().to_string())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(LabError::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.model_config(1)?;
        if self.training.steps == 0 || self.training.batch_size == 0 {
            return Err(LabError::Config("training needs steps >= 1 and batch_size >= 1".into()));
        }
        if !(self.training.learning_rate > 0.0 && self.training.learning_rate.is_finite()) {
            return Err(LabError::Config("learning_rate must be positive".into()));
        }
        if self.decoding.beam_width == 0 || self.decoding.max_new == 0 {
            return Err(LabError::Config("beam_width and max_new must be >= 1".into()));
        }
        if self.uncertainty.k == 0 || !self.uncertainty.temperature.is_finite() {
            return Err(LabError::Config("uncertainty needs k >= 1 and a finite temperature".into()));
        }
        if self.localization.tau.is_nan() {
            return Err(LabError::Config("tau must not be NaN".into()));
        }
        if !(0.0..=1.0).contains(&self.localization.head_fraction) {
            return Err(LabError::Config("head_fraction must lie in [0, 1]".into()));
        }
        if self.localization.top_k == Some(0) {
            return Err(LabError::Config("top_k must be >= 1".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(serde_json::to_string(self)?.as_bytes()))
    }

    pub fn model_config(&self, vocab_size: usize) -> Result<ModelConfig> {
        let m = &self.model;
        let c = ModelConfig {
            num_layers: m.layers,
            num_heads: m.heads,
            model_dim: m.heads * m.head_dim,
            head_dim: m.head_dim,
            mlp_dim: m.mlp_dim,
            vocab_size,
            max_seq_len: m.max_seq_len,
            rng_seed: self.seed,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn decoding(&self) -> Decoding {
        Decoding {
            strategy: Strategy::Beam {
                width: self.decoding.beam_width,
            },
            max_new: self.decoding.max_new,
        }
    }

    pub fn top_k(&self, config: &ModelConfig) -> usize {
        self.localization
            .top_k
            .unwrap_or_else(|| heads_for_fraction(config, self.localization.head_fraction))
    }
}

/// A written file and its digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
}

/// Provenance record written by every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub tool_version: String,
    pub subcommand: String,
    pub config_sha256: String,
    pub seed: u64,
    pub created_unix: u64,
    pub artifacts: Vec<Artifact>,
}

/// Output directory and optional checkpoint cache of one invocation.
pub struct Workspace<'a> {
    pub config: &'a ExperimentConfig,
    pub out: PathBuf,
    pub cache: Option<PathBuf>,
}

struct Writer<'a> {
    out: &'a Path,
    artifacts: Vec<Artifact>,
}

impl Writer<'_> {
    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.out.join(name), bytes)?;
        self.artifacts.push(Artifact {
            file: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }
}

impl<'a> Workspace<'a> {
    pub fn new(config: &'a ExperimentConfig, out: &Path) -> Self {
        Self {
            config,
            out: out.to_path_buf(),
            cache: None,
        }
    }

    fn writer(&self) -> Result<Writer<'_>> {
        std::fs::create_dir_all(&self.out)?;
        Ok(Writer {
            out: &self.out,
            artifacts: vec![],
        })
    }

    fn finish(&self, subcommand: &str, w: Writer<'_>) -> Result<RunManifest> {
        let created_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let m = RunManifest {
            format: RUN_FORMAT.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            subcommand: subcommand.into(),
            config_sha256: self.config.hash()?,
            seed: self.config.seed,
            created_unix,
            artifacts: w.artifacts,
        };
        write_atomic(
            &self.out.join(format!("run-{subcommand}.json")),
            serde_json::to_string_pretty(&m)?.as_bytes(),
        )?;
        Ok(m)
    }

    fn input(&self, configured: &Option<PathBuf>, default: &str) -> PathBuf {
        configured.clone().unwrap_or_else(|| self.out.join(default))
    }

    fn world(&self) -> Result<SyntheticWorld> {
        SyntheticWorld::generate(&self.config.world)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Checkpoint::load(&self.input(&self.config.paths.checkpoint, "checkpoint.json"))
    }

    pub fn dataset(&self) -> Result<DatasetManifest> {
        DatasetManifest::load(&self.input(&self.config.paths.dataset, "dataset.json"))
    }

    fn headset(&self, heads: Option<&Path>) -> Result<HeadSet> {
        let path = heads.map(Path::to_path_buf).unwrap_or_else(|| self.out.join("headset.json"));
        HeadSet::load(&path)
    }

    // training inputs that determine the checkpoint
    fn cache_key(&self) -> Result<String> {
        let c = self.config;
        let key = serde_json::json!({
            "schema": SCHEMA_VERSION,
            "seed": c.seed,
            "world": c.world,
            "model": c.model,
            "training": c.training,
        });
        Ok(sha256_hex(serde_json::to_string(&key)?.as_bytes()))
    }

    /// Generates the synthetic world and trains the toy model on it.
    pub fn train_toy(&self) -> Result<RunManifest> {
        let world = self.world()?;
        let vocab = world.vocabulary();
        let examples = world.examples(&vocab)?;
        let model_config = self.config.model_config(vocab.len())?;
        if let Some(long) = examples.iter().map(|e| e.ids.len()).max() {
            if long > model_config.max_seq_len {
                return Err(LabError::Config(format!(
                    "corpus needs max_seq_len >= {long}, configured {}",
                    model_config.max_seq_len
                )));
            }
        }
        let mut w = self.writer()?;
        let cached = match &self.cache {
            Some(dir) => Some(dir.join(format!("{}.json", self.cache_key()?))),
            None => None,
        };
        let (checkpoint, history) = match cached.as_ref().filter(|p| p.exists()) {
            Some(p) => (Checkpoint::load(p)?, None),
            None => {
                let t = &self.config.training;
                let params = TrainParams {
                    learning_rate: t.learning_rate,
                    steps: t.steps,
                    batch_size: t.batch_size,
                    clip_norm: t.clip_norm,
                    ..TrainParams::default()
                };
                let trained = train_examples(Weights::init(&model_config)?, &examples, &params)?;
                let ck = Checkpoint {
                    weights: trained.weights,
                    vocab: vocab.clone(),
                };
                if let Some(p) = &cached {
                    std::fs::create_dir_all(p.parent().unwrap_or(Path::new(".")))?;
                    ck.save(p)?;
                }
                (ck, Some(trained.loss_history))
            }
        };
        w.put("corpus.txt", corpus_to_text(&world.corpus_lines()?).as_bytes())?;
        w.put("triples.jsonl", triples_to_jsonl(&world.all_facts())?.as_bytes())?;
        w.put("templates.json", serde_json::to_string_pretty(&world.templates)?.as_bytes())?;
        w.put("checkpoint.json", checkpoint.to_json()?.as_bytes())?;
        if let Some(h) = history {
            let mut csv = String::from("step,loss\n");
            for (i, l) in h.iter().enumerate() {
                writeln!(csv, "{i},{l}").unwrap();
            }
            w.put("train_loss.csv", csv.as_bytes())?;
        }
        self.finish("train-toy", w)
    }

    /// Select / corrupt / render against the trained checkpoint.
    pub fn build_dataset(&self) -> Result<RunManifest> {
        let model = self.checkpoint()?;
        let triples_path = self.input(&self.config.paths.triples, "triples.jsonl");
        if !triples_path.exists() {
            return Err(LabError::MissingArtifact(triples_path));
        }
        let triples = load_triples(&triples_path)?;
        let templates_path = self.input(&self.config.paths.templates, "templates.json");
        let templates = TemplateSet::load(&templates_path)?;
        let answerer = Answerer {
            model: &model,
            decoding: self.config.decoding(),
        };
        let manifest = build_dataset(
            &answerer,
            &model.vocab,
            &triples,
            &templates,
            &self.config.dataset.strategy,
            self.config.seed,
        )?;
        let mut w = self.writer()?;
        w.put("dataset.json", manifest.to_json()?.as_bytes())?;
        let summary = format!(
            "candidates,retained,instances\n{},{},{}\n",
            manifest.candidates,
            manifest.retained.len(),
            manifest.instances.len()
        );
        w.put("selection.csv", summary.as_bytes())?;
        self.finish("build-dataset", w)
    }

    /// Vanilla answers to every false-premise question.
    fn vanilla_answers(&self, model: &Checkpoint, instances: &[QuestionInstance]) -> Result<Vec<String>> {
        answers_under(model, instances, &BTreeSet::new(), self.config.decoding())
    }

    pub fn uncertainty(&self) -> Result<RunManifest> {
        let model = self.checkpoint()?;
        let data = self.dataset()?;
        let u = &self.config.uncertainty;
        let decoding = self.config.decoding();
        let mut records = Vec::new();
        for (i, q) in data.instances.iter().enumerate() {
            let g = model.answer(&q.text, decoding)?;
            let answer = model.vocab.decode_content(&g.ids)?;
            let hallucinated = !contains_ci(&answer, &q.gold_object);
            let u1 = u1_ppl(&AnswerSample {
                tokens: model.vocab.sequence(g.ids.clone())?,
                logprobs: g.logprobs.clone(),
                correct: !hallucinated,
            })?;
            let seed = self.config.seed.wrapping_add(i as u64);
            let samples = sample_answers(&model, &q.text, u.k, u.temperature, seed, decoding.max_new, Some(&q.gold_object))?;
            records.push(ScoreRecord {
                instance: q.id.clone(),
                template: q.template_id.clone(),
                answer,
                hallucinated,
                u1: u1.value,
                u2: u2_from_samples(&samples)?.value,
                u3: u3_from_samples(&samples)?.value,
                seed,
            });
        }
        let labels: Vec<bool> = records.iter().map(|r| r.hallucinated).collect();
        let mut roc = String::new();
        let mut aucs = String::from("metric,positives,negatives,auc\n");
        let pos = labels.iter().filter(|&&l| l).count();
        for (metric, scores) in [
            (Metric::U1, records.iter().map(|r| r.u1).collect::<Vec<_>>()),
            (Metric::U2, records.iter().map(|r| r.u2).collect()),
            (Metric::U3, records.iter().map(|r| r.u3).collect()),
        ] {
            let csv = roc_to_csv(metric, &roc_curve(&scores, &labels)?);
            if roc.is_empty() {
                roc.push_str(&csv);
            } else {
                roc.push_str(csv.split_once('\n').map(|x| x.1).unwrap_or(""));
            }
            writeln!(aucs, "{metric},{pos},{},{}", labels.len() - pos, auc(&scores, &labels)?).unwrap();
        }
        let mut w = self.writer()?;
        w.put("scores.jsonl", records_to_jsonl(&records)?.as_bytes())?;
        w.put("roc.csv", roc.as_bytes())?;
        w.put("auc.csv", aucs.as_bytes())?;
        self.finish("uncertainty", w)
    }

    /// Per-layer attribution flow, averaged over hallucinated and correct answers.
    pub fn info_flow(&self) -> Result<RunManifest> {
        let model = self.checkpoint()?;
        let data = self.dataset()?;
        let answers = self.vanilla_answers(&model, &data.instances)?;
        let (mut bad, mut good): (Vec<Vec<FlowSummary>>, Vec<Vec<FlowSummary>>) = (vec![], vec![]);
        for (q, a) in data.instances.iter().zip(&answers) {
            let flow = instance_flow(&model, q)?;
            if contains_ci(a, &q.gold_object) {
                good.push(flow);
            } else {
                bad.push(flow);
            }
        }
        let mut cohorts = Vec::new();
        if !bad.is_empty() {
            cohorts.push(("hallucinated", mean_flow(&bad)?));
        }
        if !good.is_empty() {
            cohorts.push(("correct", mean_flow(&good)?));
        }
        let mut w = self.writer()?;
        w.put("flow.csv", flow_csv(&cohorts).as_bytes())?;
        self.finish("info-flow", w)
    }

    fn influence_of(&self, model: &Checkpoint, data: &DatasetManifest) -> Result<InfluenceMap> {
        let mut map = influence_map(model, &data.instances)?;
        map.provenance = data.digest()?;
        Ok(map)
    }

    pub fn influence(&self) -> Result<RunManifest> {
        let model = self.checkpoint()?;
        let data = self.dataset()?;
        let map = self.influence_of(&model, &data)?;
        let mut w = self.writer()?;
        w.put("influence.csv", map.to_csv(self.config.localization.tau).as_bytes())?;
        w.put("influence_instances.csv", map.per_instance_csv().as_bytes())?;
        self.finish("influence", w)
    }

    pub fn localize(&self) -> Result<RunManifest> {
        let model = self.checkpoint()?;
        let data = self.dataset()?;
        let map = self.influence_of(&model, &data)?;
        let l = &self.config.localization;
        let k = self.config.top_k(&model.weights.config);
        let set = localize_among(&map, l.tau, k, l.skip_final_layer, &map.provenance)?;
        let mut w = self.writer()?;
        w.put("headset.json", set.to_json()?.as_bytes())?;
        self.finish("localize", w)
    }

    /// Accuracy tables for the given head set (default: the localized one),
    /// vanilla decoding, random baselines and template transfer.
    pub fn mitigate(&self, heads: Option<&Path>) -> Result<RunManifest> {
        let model = self.checkpoint()?;
        let data = self.dataset()?;
        let set = self.headset(heads)?;
        set.validate(&model.weights.config)?;
        let decoding = self.config.decoding();
        let insts = &data.instances;
        let vanilla = self.vanilla_answers(&model, insts)?;
        let constrained = answers_under(&model, insts, &set.set(), decoding)?;

        let mut baselines = String::from("condition,seed,heads,accuracy\n");
        let mut row = |cond: &str, seed: Option<u64>, hs: &[HeadId], acc: f64| {
            let seed = seed.map(|s| s.to_string()).unwrap_or_default();
            writeln!(baselines, "{cond},{seed},{},{acc}", heads_field(hs)).unwrap();
        };
        row("vanilla", None, &[], evaluate_accuracy(&vanilla, insts)?);
        row(&set.source, set.seed, &set.ids(), evaluate_accuracy(&constrained, insts)?);
        if !set.is_empty() {
            for &seed in &self.config.mitigation.random_seeds {
                let r = random_among(seed, set.len(), &model.weights.config, set.skip_final_layer)?;
                let a = answers_under(&model, insts, &r.set(), decoding)?;
                row("random", Some(seed), &r.ids(), evaluate_accuracy(&a, insts)?);
            }
        }

        let mut w = self.writer()?;
        w.put("accuracy.csv", accuracy_table(&constrained, insts)?.as_bytes())?;
        w.put("vanilla.csv", accuracy_table(&vanilla, insts)?.as_bytes())?;
        w.put("baselines.csv", baselines.as_bytes())?;
        w.put("answers.csv", answers_csv(insts, &vanilla, &constrained).as_bytes())?;
        if self.config.mitigation.transfer {
            w.put("transfer.csv", self.transfer(&model, &data)?.as_bytes())?;
        }
        self.finish("mitigate", w)
    }

    // localize on one template's questions, evaluate on each template's
    fn transfer(&self, model: &Checkpoint, data: &DatasetManifest) -> Result<String> {
        let l = &self.config.localization;
        let k = self.config.top_k(&model.weights.config);
        let mut ids: Vec<String> = data.instances.iter().map(|q| q.template_id.clone()).collect();
        ids.sort();
        ids.dedup();
        let group = |t: &str| -> Vec<QuestionInstance> {
            data.instances.iter().filter(|q| q.template_id == t).cloned().collect()
        };
        let mut csv = String::from("source_template,target_template,heads,accuracy\n");
        for src in &ids {
            let map = influence_map(model, &group(src))?;
            let set = match localize_among(&map, l.tau, k, l.skip_final_layer, "") {
                Ok(s) => s,
                Err(LabError::EmptyLocalization { .. }) => HeadSet::empty(),
                Err(e) => return Err(e),
            };
            for dst in &ids {
                let target = group(dst);
                let a = answers_under(model, &target, &set.set(), self.config.decoding())?;
                writeln!(csv, "{src},{dst},{},{}", heads_field(&set.ids()), evaluate_accuracy(&a, &target)?).unwrap();
            }
        }
        Ok(csv)
    }

    /// Attention patterns of the configured (or localized) heads.
    pub fn attn_pattern(&self, heads: Option<&Path>) -> Result<RunManifest> {
        let model = self.checkpoint()?;
        let data = self.dataset()?;
        let p = &self.config.patterns;
        let head_ids = if p.heads.is_empty() { self.headset(heads)?.ids() } else { p.heads.clone() };
        let instances: Vec<&QuestionInstance> = if p.instances.is_empty() {
            data.instances.iter().take(1).collect()
        } else {
            p.instances
                .iter()
                .map(|id| {
                    data.instances
                        .iter()
                        .find(|q| &q.id == id)
                        .ok_or_else(|| LabError::Input(format!("no instance {id:?} in the dataset")))
                })
                .collect::<Result<_>>()?
        };
        let mut w = self.writer()?;
        let mut summary = String::from("instance,layer,head,band_width,band_mass\n");
        for (n, q) in instances.iter().enumerate() {
            for &h in &head_ids {
                let e = export_attention_pattern(&model, q, h, p.band_width)?;
                let stem = format!("pattern-{n}-L{}H{}", h.layer, h.head);
                w.put(&format!("{stem}.csv"), e.csv().as_bytes())?;
                w.put(&format!("{stem}.svg"), e.svg()?.as_bytes())?;
                writeln!(summary, "{},{},{},{},{}", csv_field(&q.id), h.layer, h.head, e.band_width, e.band_mass).unwrap();
            }
        }
        w.put("patterns.csv", summary.as_bytes())?;
        self.finish("attn-pattern", w)
    }

    /// Charts drawn from the tables already in the output directory.
    pub fn report(&self) -> Result<RunManifest> {
        let read = |name: &str| -> Result<String> {
            let p = self.out.join(name);
            if !p.exists() {
                return Err(LabError::MissingArtifact(p));
            }
            Ok(std::fs::read_to_string(p)?)
        };
        let mut w = self.writer()?;

        let roc = parse_csv(&read("roc.csv")?, "roc.csv")?;
        let aucs = parse_csv(&read("auc.csv")?, "auc.csv")?;
        let mut curves = Vec::new();
        for a in &aucs {
            let metric = &a[0];
            let pts = roc
                .iter()
                .filter(|r| &r[0] == metric)
                .map(|r| Ok((num(&r[1], "roc.csv")?, num(&r[2], "roc.csv")?)))
                .collect::<Result<Vec<_>>>()?;
            curves.push((metric.clone(), pts, a[3].clone()));
        }
        w.put("roc.svg", roc_svg("hallucination detection", &curves)?.as_bytes())?;

        let flow = parse_csv(&read("flow.csv")?, "flow.csv")?;
        let mut series = Vec::new();
        let mut cohorts: Vec<&str> = flow.iter().map(|r| r[4].as_str()).collect();
        cohorts.dedup();
        for cohort in cohorts {
            for (col, part) in [(1, "subject"), (2, "false object"), (3, "other")] {
                let points = flow
                    .iter()
                    .filter(|r| r[4] == cohort)
                    .map(|r| Ok((num(&r[0], "flow.csv")?, num(&r[col], "flow.csv")?)))
                    .collect::<Result<Vec<_>>>()?;
                series.push(Series {
                    name: format!("{cohort}: {part}"),
                    points,
                });
            }
        }
        w.put("flow.svg", line_chart_svg("attribution flow to the last position", "layer", "mean |S|", &series)?.as_bytes())?;

        let inf = parse_csv(&read("influence.csv")?, "influence.csv")?;
        let layers = inf.iter().map(|r| r[0].parse::<usize>().unwrap_or(0)).max().map_or(0, |m| m + 1);
        let heads = inf.iter().map(|r| r[1].parse::<usize>().unwrap_or(0)).max().map_or(0, |m| m + 1);
        let mut grid = Array2::zeros((layers, heads));
        for r in &inf {
            let (l, h): (usize, usize) = (
                r[0].parse().map_err(|_| bad_cell("influence.csv", &r[0]))?,
                r[1].parse().map_err(|_| bad_cell("influence.csv", &r[1]))?,
            );
            grid[[l, h]] = num(&r[2], "influence.csv")?;
        }
        let rows: Vec<String> = (0..layers).map(|l| format!("layer {l}")).collect();
        let cols: Vec<String> = (0..heads).map(|h| format!("head {h}")).collect();
        w.put("influence.svg", heatmap_svg("mean influence E", &grid, &rows, &cols)?.as_bytes())?;
        self.finish("report", w)
    }

    /// Every stage in order.
    pub fn run_all(&self) -> Result<Vec<RunManifest>> {
        Ok(vec![
            self.train_toy()?,
            self.build_dataset()?,
            self.uncertainty()?,
            self.info_flow()?,
            self.influence()?,
            self.localize()?,
            self.mitigate(None)?,
            self.attn_pattern(None)?,
            self.report()?,
        ])
    }
}

fn bad_cell(file: &str, cell: &str) -> LabError {
    LabError::Format {
        path: file.into(),
        reason: format!("cannot parse {cell:?}"),
    }
}

fn num(cell: &str, file: &str) -> Result<f64> {
    cell.parse().map_err(|_| bad_cell(file, cell))
}

// unquoted CSV as written by this crate; the header row is dropped
fn parse_csv(text: &str, file: &str) -> Result<Vec<Vec<String>>> {
    let mut lines = text.lines();
    let width = lines
        .next()
        .ok_or_else(|| LabError::Format {
            path: file.into(),
            reason: "empty table".into(),
        })?
        .split(',')
        .count();
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let row: Vec<String> = l.split(',').map(str::to_string).collect();
            if row.len() != width {
                return Err(LabError::Format {
                    path: file.into(),
                    reason: format!("row {l:?} has {} cells, header has {width}", row.len()),
                });
            }
            Ok(row)
        })
        .collect()
}

fn heads_field(heads: &[HeadId]) -> String {
    heads
        .iter()
        .map(|h| format!("L{}H{}", h.layer, h.head))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Decoded answers with `heads` constrained on each question's false-object span.
pub fn answers_under(
    model: &Checkpoint,
    instances: &[QuestionInstance],
    heads: &BTreeSet<HeadId>,
    decoding: Decoding,
) -> Result<Vec<String>> {
    instances
        .iter()
        .map(|q| {
            let g = mitigate_generate(model, q, heads, decoding).map_err(|e| e.with_instance(&q.id))?;
            model.vocab.decode_content(&g.ids)
        })
        .collect()
}

/// `template,n,correct,accuracy` rows per template plus an `all` row.
pub fn accuracy_table(answers: &[String], instances: &[QuestionInstance]) -> Result<String> {
    evaluate_accuracy(answers, instances)?;
    let mut ids: Vec<&str> = instances.iter().map(|q| q.template_id.as_str()).collect();
    ids.sort();
    ids.dedup();
    let mut s = String::from("template,n,correct,accuracy\n");
    let mut line = |name: &str, pick: &dyn Fn(&QuestionInstance) -> bool| {
        let (mut n, mut c) = (0usize, 0usize);
        for (a, q) in answers.iter().zip(instances) {
            if pick(q) {
                n += 1;
                c += usize::from(contains_ci(a, &q.gold_object));
            }
        }
        writeln!(s, "{name},{n},{c},{}", c as f64 / n as f64).unwrap();
    };
    for t in &ids {
        line(t, &|q| q.template_id == *t);
    }
    line("all", &|_| true);
    Ok(s)
}

fn answers_csv(instances: &[QuestionInstance], vanilla: &[String], constrained: &[String]) -> String {
    let mut s = String::from("instance,gold,false_object,vanilla,constrained\n");
    for ((q, v), c) in instances.iter().zip(vanilla).zip(constrained) {
        writeln!(
            s,
            "{},{},{},{},{}",
            csv_field(&q.id),
            csv_field(&q.gold_object),
            csv_field(&q.false_object),
            csv_field(v),
            csv_field(c)
        )
        .unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = ExperimentConfig::default();
        let text = c.to_toml().unwrap();
        assert_eq!(ExperimentConfig::parse(&text, "c.toml").unwrap(), c);
    }

    #[test]
    fn schema_and_unknown_fields_are_config_errors() {
        assert!(matches!(ExperimentConfig::parse("schema_version = 2", "c.toml"), Err(LabError::Config(_))));
        assert!(matches!(
            ExperimentConfig::parse("schema_version = 1\nbogus = 3", "c.toml"),
            Err(LabError::Config(_))
        ));
        let c = ExperimentConfig::parse("schema_version = 1\n[model]\nlayers = 3", "c.toml").unwrap();
        assert_eq!(c.model.layers, 3);
        assert_eq!(c.seed, 1);
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { seed: 9, ..a.clone() };
        assert_eq!(a.hash().unwrap(), a.clone().hash().unwrap());
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }

    #[test]
    fn csv_reader_rejects_ragged_rows() {
        assert!(parse_csv("a,b\n1,2\n", "t").is_ok());
        assert!(matches!(parse_csv("a,b\n1\n", "t"), Err(LabError::Format { .. })));
    }
}
