use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::info;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::TrainConfig;
use super::trainer::{evaluate, overfitting_indicator, train};
use crate::clintext::{build_vocabulary, AbbreviationMap, MedicalLexicon, PipelineAssets, PipelineConfig};
use crate::corpus::CorpusSplit;
use crate::model::ModelConfig;
use crate::rng::derive_named;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabConfig {
    pub min_freq: usize,
    pub max_size: usize,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self {
            min_freq: 1,
            max_size: 8192,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    /// JSON abbreviation map; the built-in map when absent.
    pub abbreviation_map: Option<PathBuf>,
    /// Lexicon text file; the built-in lexicon when absent.
    pub lexicon: Option<PathBuf>,
    pub vocab: VocabConfig,
    pub expand_abbreviations: bool,
    pub rewrite_measurements: bool,
    pub global_entity_attention: bool,
}

impl Default for PipelineSection {
    fn default() -> Self {
        let flags = PipelineConfig::default();
        Self {
            abbreviation_map: None,
            lexicon: None,
            vocab: VocabConfig::default(),
            expand_abbreviations: flags.expand_abbreviations,
            rewrite_measurements: flags.rewrite_measurements,
            global_entity_attention: flags.global_entity_attention,
        }
    }
}

impl PipelineSection {
    pub fn flags(&self) -> PipelineConfig {
        PipelineConfig {
            expand_abbreviations: self.expand_abbreviations,
            rewrite_measurements: self.rewrite_measurements,
            global_entity_attention: self.global_entity_attention,
        }
    }

    pub fn load_sources(&self) -> Result<(AbbreviationMap, MedicalLexicon)> {
        let abbrev = match &self.abbreviation_map {
            Some(p) => AbbreviationMap::load(p)?,
            None => AbbreviationMap::builtin(),
        };
        let lexicon = match &self.lexicon {
            Some(p) => MedicalLexicon::load(p)?,
            None => MedicalLexicon::builtin(),
        };
        Ok((abbrev, lexicon))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub train: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

/// Every knob of a run in one file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// When set, the model and training seeds are derived from it.
    pub seed: Option<u64>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub pipeline: PipelineSection,
    pub paths: PathsSection,
}

fn set_dotted(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::InvalidConfig(format!("{key}: {part} is not a section")))?;
        if !obj.contains_key(*part) {
            return Err(Error::InvalidConfig(format!("unknown config key {key}")));
        }
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.get_mut(*part).expect("checked above");
    }
    Err(Error::InvalidConfig("empty config key".into()))
}

/// Replaces dotted keys (`train.base_lr`) of any serializable config. Keys
/// must already exist in the serialized form.
pub fn apply_values<T: Serialize + DeserializeOwned>(cfg: &T, values: &BTreeMap<String, Value>) -> Result<T> {
    let mut tree = serde_json::to_value(cfg).map_err(|e| Error::json("config", e))?;
    for (k, v) in values {
        set_dotted(&mut tree, k, v.clone())?;
    }
    serde_json::from_value(tree).map_err(|e| Error::InvalidConfig(format!("config override: {e}")))
}

/// Parses `key=value`; the value is read as JSON and falls back to a plain
/// string.
pub fn parse_assignment(assignment: &str) -> Result<(String, Value)> {
    let (k, v) = assignment
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("override {assignment:?} is not key=value")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    /// Replaces dotted keys with new values and re-validates.
    pub fn with_values(&self, values: &BTreeMap<String, Value>) -> Result<Self> {
        let cfg = apply_values(self, values)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_override(&self, assignment: &str) -> Result<Self> {
        self.with_values(&BTreeMap::from([parse_assignment(assignment)?]))
    }

    /// Model and training configs with seeds resolved.
    pub fn resolved(&self) -> (ModelConfig, TrainConfig) {
        let (mut model, mut train) = (self.model.clone(), self.train.clone());
        if let Some(seed) = self.seed {
            model.seed = derive_named(seed, "model");
            train.seed = derive_named(seed, "train");
        }
        (model, train)
    }

    /// Builds the vocabulary from the training split and sizes the model's
    /// embedding table to it.
    pub fn prepare(
        &self,
        split: &CorpusSplit,
        abbreviations: &AbbreviationMap,
        lexicon: &MedicalLexicon,
    ) -> Result<(ModelConfig, TrainConfig, PipelineAssets)> {
        let (mut model, train) = self.resolved();
        let flags = self.pipeline.flags();
        let vocab = build_vocabulary(
            &split.train,
            &flags,
            abbreviations,
            self.pipeline.vocab.min_freq,
            self.pipeline.vocab.max_size,
        )?;
        model.vocab_size = vocab.size();
        let assets = PipelineAssets {
            vocab,
            abbreviations: abbreviations.clone(),
            lexicon: lexicon.clone(),
            pipeline: flags,
        };
        Ok((model, train, assets))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseDelta {
    pub name: String,
    /// Dotted config keys and their new values.
    #[serde(default)]
    pub set: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSpec {
    pub phases: Vec<PhaseDelta>,
}

fn phase(name: &str, set: Value) -> PhaseDelta {
    let set = set
        .as_object()
        .expect("object literal")
        .iter()
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    PhaseDelta {
        name: name.to_string(),
        set,
    }
}

impl Default for PhaseSpec {
    /// Baseline, then hyperparameters, training techniques and clinical
    /// preprocessing, each applied on top of the previous phase.
    fn default() -> Self {
        Self {
            phases: vec![
                phase(
                    "P0",
                    json!({
                        "train.base_lr": 1e-5,
                        "train.epochs": 5,
                        "train.max_seq_len": 512,
                        "train.schedule": "constant",
                        "train.weight_decay": 0.0,
                        "pipeline.expand_abbreviations": false,
                        "pipeline.rewrite_measurements": false,
                        "pipeline.global_entity_attention": false,
                    }),
                ),
                phase("P1a", json!({"train.base_lr": 5e-6})),
                phase("P1b", json!({"train.epochs": 8})),
                phase("P1c", json!({"train.max_seq_len": 1024})),
                phase("P2a", json!({"train.schedule": "warmup_cosine_restarts"})),
                phase("P2b", json!({"train.weight_decay": 0.01})),
                phase(
                    "P3a",
                    json!({"pipeline.expand_abbreviations": true, "pipeline.rewrite_measurements": true}),
                ),
                phase("P3b", json!({"pipeline.global_entity_attention": true})),
            ],
        }
    }
}

impl PhaseSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderRow {
    pub phase: String,
    pub val_accuracy: f64,
    pub val_f1: f64,
    /// Change against the previous phase; absent for the first row.
    pub delta_accuracy: Option<f64>,
    pub delta_f1: Option<f64>,
    pub best_epoch: Option<usize>,
    pub epochs_run: usize,
    pub overfitting_indicator: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderReport {
    pub rows: Vec<LadderRow>,
}

/// Trains and evaluates each cumulative configuration of `spec`.
pub fn run_phase_ladder(
    base: &RunConfig,
    spec: &PhaseSpec,
    split: &CorpusSplit,
    abbreviations: &AbbreviationMap,
    lexicon: &MedicalLexicon,
) -> Result<LadderReport> {
    if spec.phases.is_empty() {
        return Err(Error::Empty("phase spec"));
    }
    let mut cfg = base.clone();
    let mut rows: Vec<LadderRow> = Vec::with_capacity(spec.phases.len());
    for p in &spec.phases {
        cfg = cfg.with_values(&p.set)?;
        let (model, train_cfg, assets) = cfg.prepare(split, abbreviations, lexicon)?;
        info!("phase {}: training", p.name);
        let (ckpt, log) = train(&model, &train_cfg, split, &assets)?;
        let val_set = assets.encode_all(&split.validation, train_cfg.max_seq_len)?;
        let labels: Vec<bool> = split.validation.iter().map(|c| c.label.unwrap_or(false)).collect();
        let eval = evaluate(&ckpt.params, &model, &val_set, &labels)?;
        let prev = rows.last();
        rows.push(LadderRow {
            phase: p.name.clone(),
            val_accuracy: eval.accuracy,
            val_f1: eval.f1,
            delta_accuracy: prev.map(|r| eval.accuracy - r.val_accuracy),
            delta_f1: prev.map(|r| eval.f1 - r.val_f1),
            best_epoch: log.best_epoch,
            epochs_run: log.epochs.len(),
            overfitting_indicator: overfitting_indicator(&log).ok(),
        });
    }
    Ok(LadderReport { rows })
}
