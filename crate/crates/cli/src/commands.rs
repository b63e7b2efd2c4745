use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use longclin::clintext::{AbbreviationMap, MedicalLexicon, PipelineAssets, PipelineConfig, Vocabulary};
use longclin::corpus::{
    corpus_stats, generate_corpus, load_corpus, validate_splits, write_corpus, ClinicalCase, CorpusSplit, CorpusStats,
    GeneratorConfig, TemplateSet,
};
use longclin::clintext::token_count;
use longclin::evalstat::{
    full_report, load_predictions, paired_comparison, write_predictions, ComparisonReport, FullReport, Prediction,
};
use longclin::model::{load_checkpoint, save_checkpoint};
use longclin::train::{
    apply_values, evaluate as evaluate_model, overfitting_indicator, parse_assignment, predict_probabilities,
    run_phase_ladder, train as train_model, PhaseSpec, RunConfig,
};
use longclin::{Error, ErrorKind};

use crate::Common;

pub const TRAIN_FILE: &str = "nlp-training-dataset.json";
pub const VALIDATION_FILE: &str = "nlp-validation-dataset.json";
pub const TEST_FILE: &str = "nlp-test-dataset.json";
pub const TEST_LABELED_FILE: &str = "nlp-test-dataset-labeled.json";
pub const GENERATION_MANIFEST: &str = "generation-manifest.json";

/// A command failure with its exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Data(String),
    Numerical(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Numerical(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Data(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e.kind() {
            ErrorKind::Config => Failure::Config(e.to_string()),
            ErrorKind::Data => Failure::Data(e.to_string()),
            ErrorKind::Numerical => Failure::Numerical(e.to_string()),
        }
    }
}

type CmdResult<T = ()> = Result<T, Failure>;

/// Errors while reading configuration count as configuration errors.
fn as_config(e: Error) -> Failure {
    Failure::Config(e.to_string())
}

fn data_io(path: &Path, e: std::io::Error) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

fn setup_threads(common: &Common) -> CmdResult {
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(Failure::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn require_out(common: &Common) -> CmdResult<PathBuf> {
    common
        .out
        .clone()
        .ok_or_else(|| Failure::Config("--out is required".into()))
}

fn require_exists(path: &Path, what: &str) -> CmdResult {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Config(format!("{what} {} does not exist", path.display())))
    }
}

fn overrides(common: &Common) -> CmdResult<BTreeMap<String, serde_json::Value>> {
    common
        .set
        .iter()
        .map(|s| parse_assignment(s).map_err(as_config))
        .collect()
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| data_io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| data_io(path, e))
}

fn emit(common: &Common, path: &Path, text: &str) -> CmdResult {
    write_text(path, text)?;
    if common.stdout {
        print!("{text}");
    }
    info!("wrote {}", path.display());
    Ok(())
}

fn sha256_file(path: &Path) -> CmdResult<String> {
    let bytes = fs::read(path).map_err(|e| data_io(path, e))?;
    Ok(longclin_hex(&Sha256::digest(&bytes)))
}

fn longclin_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct GenerationManifest {
    config: GeneratorConfig,
    templates: String,
    files: BTreeMap<String, FileEntry>,
}

#[derive(Serialize)]
struct FileEntry {
    sha256: String,
    stats: CorpusStats,
}

pub fn generate(common: &Common, templates: Option<&Path>) -> CmdResult {
    setup_threads(common)?;
    let out = require_out(common)?;
    let mut cfg = match &common.config {
        Some(p) => {
            require_exists(p, "config")?;
            let text = fs::read_to_string(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<GeneratorConfig>(&text)
                .map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?
        }
        None => GeneratorConfig::default(),
    };
    cfg = apply_values(&cfg, &overrides(common)?).map_err(as_config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(as_config)?;
    let template_set = match templates {
        Some(p) => {
            require_exists(p, "template file")?;
            TemplateSet::load(p).map_err(as_config)?
        }
        None => TemplateSet::builtin(),
    };
    let split = generate_corpus(&cfg, &template_set)?;
    let violations = validate_splits(&split);
    if !violations.is_empty() {
        return Err(Failure::Data(format!("generated corpus failed validation: {violations:?}")));
    }
    fs::create_dir_all(&out).map_err(|e| data_io(&out, e))?;
    let outputs: [(&str, &[ClinicalCase], bool); 4] = [
        (TRAIN_FILE, &split.train, true),
        (VALIDATION_FILE, &split.validation, true),
        (TEST_FILE, &split.test, false),
        (TEST_LABELED_FILE, &split.test, true),
    ];
    let mut files = BTreeMap::new();
    for (name, cases, labels) in outputs {
        let path = out.join(name);
        write_corpus(cases, &path, labels)?;
        let mut stats = corpus_stats(cases, token_count)?;
        if !labels {
            stats.positive_rate = None;
        }
        files.insert(
            name.to_string(),
            FileEntry {
                sha256: sha256_file(&path)?,
                stats,
            },
        );
    }
    let manifest = GenerationManifest {
        config: cfg,
        templates: templates.map_or_else(|| "builtin".to_string(), |p| p.display().to_string()),
        files,
    };
    emit(common, &out.join(GENERATION_MANIFEST), &to_json(&manifest))
}

fn load_run_config(common: &Common) -> CmdResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => {
            require_exists(p, "config")?;
            RunConfig::load(p).map_err(as_config)?
        }
        None => RunConfig::default(),
    };
    cfg = cfg.with_values(&overrides(common)?).map_err(as_config)?;
    if let Some(seed) = common.seed {
        cfg.seed = Some(seed);
    }
    if let Some(out) = &common.out {
        cfg.paths.output = Some(out.clone());
    }
    for p in [&cfg.pipeline.abbreviation_map, &cfg.pipeline.lexicon].into_iter().flatten() {
        require_exists(p, "pipeline file")?;
    }
    Ok(cfg)
}

fn load_split(cfg: &RunConfig) -> CmdResult<CorpusSplit> {
    let get = |p: &Option<PathBuf>, what: &str| -> CmdResult<PathBuf> {
        let p = p
            .clone()
            .ok_or_else(|| Failure::Config(format!("paths.{what} is not set")))?;
        require_exists(&p, what)?;
        Ok(p)
    };
    let train = load_corpus(&get(&cfg.paths.train, "train")?, true)?;
    let validation = load_corpus(&get(&cfg.paths.validation, "validation")?, true)?;
    let test = match &cfg.paths.test {
        Some(p) => {
            require_exists(p, "test")?;
            load_corpus(p, false)?
        }
        None => Vec::new(),
    };
    let split = CorpusSplit { train, validation, test };
    let violations = validate_splits(&split);
    if !violations.is_empty() {
        return Err(Failure::Data(format!("split validation failed: {violations:?}")));
    }
    Ok(split)
}

pub const VOCAB_FILE: &str = "vocab.json";
pub const PIPELINE_FILE: &str = "pipeline.json";

/// Preprocessing state stored next to a checkpoint so that prediction
/// reproduces the training-time encoding.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoredPipeline {
    pipeline: PipelineConfig,
    max_seq_len: usize,
    abbreviations: AbbreviationMap,
    lexicon: MedicalLexicon,
}

#[derive(Serialize)]
struct ValidationSummary {
    best_epoch: Option<usize>,
    stopped_early: bool,
    epochs_run: usize,
    val_loss: f64,
    val_accuracy: f64,
    val_f1: f64,
    overfitting_indicator: Option<f64>,
}

pub fn train(common: &Common) -> CmdResult {
    setup_threads(common)?;
    let cfg = load_run_config(common)?;
    let out = cfg
        .paths
        .output
        .clone()
        .ok_or_else(|| Failure::Config("--out (or paths.output) is required".into()))?;
    let split = load_split(&cfg)?;
    let (abbrev, lexicon) = cfg.pipeline.load_sources().map_err(as_config)?;
    let (model_cfg, train_cfg, assets) = cfg.prepare(&split, &abbrev, &lexicon)?;
    info!(
        "training on {} cases ({} validation), vocabulary {}",
        split.train.len(),
        split.validation.len(),
        assets.vocab.size()
    );
    let (ckpt, log) = train_model(&model_cfg, &train_cfg, &split, &assets)?;

    let ckpt_dir = out.join("checkpoint");
    save_checkpoint(&ckpt, &ckpt_dir)?;
    assets.vocab.save(&ckpt_dir.join(VOCAB_FILE))?;
    let stored = StoredPipeline {
        pipeline: assets.pipeline,
        max_seq_len: train_cfg.max_seq_len,
        abbreviations: assets.abbreviations.clone(),
        lexicon: assets.lexicon.clone(),
    };
    write_text(&ckpt_dir.join(PIPELINE_FILE), &to_json(&stored))?;
    write_text(&out.join("run-config.json"), &to_json(&cfg))?;
    log.write(&out.join("training-log.jsonl"))?;

    let val_set = assets.encode_all(&split.validation, train_cfg.max_seq_len)?;
    let labels: Vec<bool> = split.validation.iter().map(|c| c.label.unwrap_or(false)).collect();
    let eval = evaluate_model(&ckpt.params, &model_cfg, &val_set, &labels)?;
    let summary = ValidationSummary {
        best_epoch: log.best_epoch,
        stopped_early: log.stopped_early,
        epochs_run: log.epochs.len(),
        val_loss: eval.loss,
        val_accuracy: eval.accuracy,
        val_f1: eval.f1,
        overfitting_indicator: overfitting_indicator(&log).ok(),
    };
    info!("validation accuracy {:.3}, F1 {:.3}", eval.accuracy, eval.f1);
    emit(common, &out.join("validation-metrics.json"), &to_json(&summary))
}

pub fn predict(common: &Common, checkpoint: &Path, data: &Path, threshold: f64) -> CmdResult {
    setup_threads(common)?;
    let out = require_out(common)?;
    require_exists(checkpoint, "checkpoint")?;
    require_exists(data, "dataset")?;
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Failure::Config(format!("threshold {threshold} outside [0, 1]")));
    }
    let ckpt = load_checkpoint(checkpoint)?;
    let vocab = Vocabulary::load(&checkpoint.join(VOCAB_FILE))?;
    if vocab.hash() != ckpt.vocab_hash {
        return Err(Failure::Data(format!(
            "{} does not match the checkpoint's vocabulary hash",
            checkpoint.join(VOCAB_FILE).display()
        )));
    }
    let stored_path = checkpoint.join(PIPELINE_FILE);
    let text = fs::read_to_string(&stored_path).map_err(|e| data_io(&stored_path, e))?;
    let stored: StoredPipeline =
        serde_json::from_str(&text).map_err(|e| Failure::Data(format!("{}: {e}", stored_path.display())))?;
    let assets = PipelineAssets {
        vocab,
        abbreviations: stored.abbreviations,
        lexicon: stored.lexicon,
        pipeline: stored.pipeline,
    };
    let cases = load_corpus(data, false)?;
    let encoded = assets.encode_all(&cases, stored.max_seq_len)?;
    let scores = predict_probabilities(&ckpt.params, &ckpt.config, &encoded)?;
    let preds: Vec<Prediction> = cases
        .iter()
        .zip(&scores)
        .map(|(c, &s)| Prediction {
            uid: c.uid.clone(),
            score: s,
            prediction: s >= threshold,
        })
        .collect();
    write_predictions(&preds, &out)?;
    if common.stdout {
        print!("{}", to_json(&preds));
    }
    info!("wrote {} predictions to {}", preds.len(), out.display());
    Ok(())
}

/// Predictions aligned to the dataset order; every dataset uid must appear
/// exactly once.
fn align(preds: &[Prediction], cases: &[ClinicalCase], source: &Path) -> CmdResult<(Vec<f64>, Vec<bool>)> {
    let mut by_uid: HashMap<&str, &Prediction> = HashMap::new();
    for p in preds {
        if by_uid.insert(p.uid.as_str(), p).is_some() {
            return Err(Failure::Data(format!("duplicate uid {} in {}", p.uid, source.display())));
        }
    }
    let mut scores = Vec::with_capacity(cases.len());
    let mut calls = Vec::with_capacity(cases.len());
    for c in cases {
        let p = by_uid
            .get(c.uid.as_str())
            .ok_or_else(|| Failure::Data(format!("uid {} missing from {}", c.uid, source.display())))?;
        scores.push(p.score);
        calls.push(p.prediction);
    }
    if preds.len() != cases.len() {
        warn!("{} has {} predictions for {} cases", source.display(), preds.len(), cases.len());
    }
    Ok((scores, calls))
}

fn lexicon_from(path: Option<&Path>) -> CmdResult<MedicalLexicon> {
    match path {
        Some(p) => {
            require_exists(p, "lexicon")?;
            MedicalLexicon::load(p).map_err(as_config)
        }
        None => Ok(MedicalLexicon::builtin()),
    }
}

fn report_for(
    predictions: &Path,
    cases: &[ClinicalCase],
    labels: &[bool],
    lexicon: &MedicalLexicon,
    seed: u64,
) -> CmdResult<(FullReport, Vec<bool>)> {
    require_exists(predictions, "predictions")?;
    let preds = load_predictions(predictions)?;
    let (scores, calls) = align(&preds, cases, predictions)?;
    let report = full_report(&scores, &calls, labels, cases, lexicon, seed)?;
    Ok((report, calls))
}

fn labeled(data: &Path) -> CmdResult<(Vec<ClinicalCase>, Vec<bool>)> {
    require_exists(data, "dataset")?;
    let cases = load_corpus(data, true)?;
    let labels = cases.iter().map(|c| c.label.unwrap_or(false)).collect();
    Ok((cases, labels))
}

pub fn evaluate(common: &Common, predictions: &Path, data: &Path, lexicon: Option<&Path>) -> CmdResult {
    setup_threads(common)?;
    let out = require_out(common)?;
    let lexicon = lexicon_from(lexicon)?;
    let (cases, labels) = labeled(data)?;
    let (report, _) = report_for(predictions, &cases, &labels, &lexicon, common.seed.unwrap_or(0))?;
    emit(common, &out, &to_json(&report))
}

pub fn compare(common: &Common, a: &Path, b: &Path, data: &Path, lexicon: Option<&Path>) -> CmdResult {
    setup_threads(common)?;
    let out = require_out(common)?;
    let lexicon = lexicon_from(lexicon)?;
    let (cases, labels) = labeled(data)?;
    let seed = common.seed.unwrap_or(0);
    let (first, calls_a) = report_for(a, &cases, &labels, &lexicon, seed)?;
    let (second, calls_b) = report_for(b, &cases, &labels, &lexicon, seed)?;
    let comparison = paired_comparison(&first.metrics, &second.metrics, &calls_a, &calls_b, &labels)?;
    let mut notes = vec![
            "b counts cases the first model got right and the second got wrong; c the reverse".to_string(),
            "deltas and cohen_d are second minus first; cohen_d is over per-case 0/1 correctness".to_string(),
            "all metrics are recomputed from the confusion counts of these predictions; summary figures published elsewhere may not agree with their own confusion matrices".to_string(),
    ];
    if comparison.cohen_d.is_none() {
        notes.push("cohen_d is undefined: each model is uniformly right or wrong and the two differ".to_string());
    }
    let report = ComparisonReport {
        first,
        second,
        comparison,
        notes,
    };
    emit(common, &out, &to_json(&report))
}

pub fn phases(common: &Common, phases: Option<&Path>) -> CmdResult {
    setup_threads(common)?;
    let out = require_out(common)?;
    let mut cfg = load_run_config(common)?;
    // the report file is the only output; keep it out of the run config
    cfg.paths.output = None;
    let spec = match phases {
        Some(p) => {
            require_exists(p, "phase spec")?;
            PhaseSpec::load(p).map_err(as_config)?
        }
        None => PhaseSpec::default(),
    };
    let split = load_split(&cfg)?;
    let (abbrev, lexicon) = cfg.pipeline.load_sources().map_err(as_config)?;
    let report = run_phase_ladder(&cfg, &spec, &split, &abbrev, &lexicon)?;
    emit(common, &out, &to_json(&report))
}
