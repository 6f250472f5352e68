//! Pipeline configuration: one JSON document with a shared section and one
//! section per stage.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dpa_core::model::Strategy;
use dpa_core::prefdata::PrefConfig;
use dpa_core::rerank::train::Init;
use dpa_core::rerank::{TrainConfig, Weighting};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Shared {
    pub seed: u64,
    /// Stage outputs go here. Relative paths resolve against the config file.
    pub work_dir: PathBuf,
    pub corpus: PathBuf,
    pub store: PathBuf,
    pub train_queries: PathBuf,
    pub test_queries: PathBuf,
    /// Tag annotation files by set name, for the report.
    pub tags: BTreeMap<String, PathBuf>,
    /// Query text to answer map for the offline reader.
    pub mock_memory: Option<PathBuf>,
    pub mock: bool,
    /// Keep unknown input fields instead of rejecting them.
    pub lenient: bool,
}

impl Default for Shared {
    fn default() -> Self {
        Self {
            seed: 0,
            work_dir: "out".into(),
            corpus: "corpus.jsonl".into(),
            store: "store.dpae".into(),
            train_queries: "train.jsonl".into(),
            test_queries: "test.jsonl".into(),
            tags: BTreeMap::new(),
            mock_memory: None,
            mock: false,
            lenient: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GatewayConfig {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    /// NLI service base URL; falls back to `DPA_API_BASE`.
    pub nli_base: Option<String>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            model: "gpt-3.5-turbo".into(),
            temperature: 0.0,
            max_tokens: 64,
            max_in_flight: 4,
            timeout_secs: 60,
            nli_base: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrieveConfig {
    pub depth: usize,
}

impl Default for RetrieveConfig {
    fn default() -> Self {
        Self { depth: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub strategies: Vec<Strategy>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { strategies: Strategy::ALL.to_vec() }
    }
}

/// Training settings; the seed comes from the shared section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub tau: f64,
    pub mgda_every: usize,
    pub weighting: Weighting,
    pub init: Init,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            learning_rate: d.learning_rate,
            epochs: d.epochs,
            batch_size: d.batch_size,
            tau: d.tau,
            mgda_every: d.mgda_every,
            weighting: d.weighting,
            init: d.init,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopK {
    pub k: usize,
}

impl Default for TopK {
    fn default() -> Self {
        Self { k: dpa_core::align::DEFAULT_K }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub shared: Shared,
    pub gateway: GatewayConfig,
    pub retrieve: RetrieveConfig,
    pub extract_pref: PrefConfig,
    pub augment: AugmentConfig,
    pub train_reranker: TrainSection,
    pub rerank: TopK,
    pub emit_prealign: TopK,
    pub emit_sft: TopK,
    pub eval: TopK,
}

impl Config {
    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train_reranker;
        TrainConfig {
            seed: self.shared.seed,
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            tau: t.tau,
            mgda_every: t.mgda_every,
            weighting: t.weighting.clone(),
            init: t.init,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.retrieve.depth == 0 {
            return Err("retrieve.depth must be positive".into());
        }
        let a = self.extract_pref.fusion_weight;
        if !(0.0..=1.0).contains(&a) {
            return Err(format!("extract_pref.fusion_weight must lie in [0, 1], got {a}"));
        }
        if self.augment.strategies.is_empty() {
            return Err("augment.strategies must not be empty".into());
        }
        for (name, k) in [
            ("rerank", &self.rerank),
            ("emit_prealign", &self.emit_prealign),
            ("emit_sft", &self.emit_sft),
            ("eval", &self.eval),
        ] {
            if k.k == 0 {
                return Err(format!("{name}.k must be positive"));
            }
        }
        if self.gateway.max_in_flight == 0 {
            return Err("gateway.max_in_flight must be positive".into());
        }
        self.train_config().validate().map_err(|e| format!("train_reranker: {e}"))
    }

    /// Hash of every setting that can change an artifact. File locations are
    /// left out so that the same pipeline in two directories hashes equally.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(shared) = v.get_mut("shared").and_then(Value::as_object_mut) {
            for key in ["work_dir", "corpus", "store", "train_queries", "test_queries", "tags", "mock_memory"] {
                shared.remove(key);
            }
        }
        let digest = Sha256::digest(v.to_string().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Applies `a.b.c=value` overrides to the raw document. Values parse as JSON
/// when they can and are taken as strings otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) =
        assignment.split_once('=').ok_or_else(|| CliError::Usage(format!("--set expects key=value, got {assignment:?}")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("bad --set key {key:?}")));
    }
    for part in &parts[..parts.len() - 1] {
        if !node.is_object() {
            return Err(CliError::Config(format!("--set {key}: {part} is not a section")));
        }
        node =
            node.as_object_mut().unwrap().entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    match node.as_object_mut() {
        Some(map) => {
            map.insert(parts[parts.len() - 1].to_string(), value);
            Ok(())
        }
        None => Err(CliError::Config(format!("--set {key}: parent is not a section"))),
    }
}

/// A validated config plus the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: Config,
    pub base: PathBuf,
    pub hash: String,
}

impl Loaded {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base.join(p)
    }

    pub fn work(&self, name: &str) -> PathBuf {
        self.base.join(&self.config.shared.work_dir).join(name)
    }
}

pub fn load(path: &Path, overrides: &[String], force_mock: bool) -> Result<Loaded, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut doc: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let mut config: Config = serde_json::from_value(doc).map_err(|e| CliError::Config(e.to_string()))?;
    if force_mock {
        config.shared.mock = true;
    }
    config.validate().map_err(CliError::Config)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let hash = config.hash();
    Ok(Loaded { config, base, hash })
}
