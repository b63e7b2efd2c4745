use std::io::Write;
use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::optim::{optimizer_step, OptimizerState};
use super::schedule::lr_at;
use crate::clintext::{EncodedCase, PipelineAssets};
use crate::corpus::{ClinicalCase, CorpusSplit};
use crate::evalstat::confusion;
use crate::model::{bce_loss, case_gradient, case_logit, init_parameters, sigmoid, Checkpoint, ModelConfig, ParameterSet};
use crate::rng::{derive_named, stream};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 0-based optimizer step; `lr` is `lr_at(step)`.
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    /// Mean loss over the cases of this step.
    pub train_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_train_loss: f64,
    pub val_loss: f64,
    pub val_f1: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    /// Epoch (1-based) whose parameters were returned; `None` if no epoch ran.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum LogLine {
    Step(StepRecord),
    Epoch(EpochRecord),
    Final { best_epoch: Option<usize>, stopped_early: bool },
}

impl TrainingLog {
    /// One JSON object per line, in the order the events happened.
    pub fn to_jsonl(&self) -> String {
        let mut lines = Vec::new();
        let mut steps = self.steps.iter().peekable();
        for e in &self.epochs {
            while let Some(s) = steps.next_if(|s| s.epoch <= e.epoch) {
                lines.push(LogLine::Step(s.clone()));
            }
            lines.push(LogLine::Epoch(e.clone()));
        }
        lines.extend(steps.map(|s| LogLine::Step(s.clone())));
        lines.push(LogLine::Final {
            best_epoch: self.best_epoch,
            stopped_early: self.stopped_early,
        });
        let mut out = String::new();
        for l in lines {
            out.push_str(&serde_json::to_string(&l).expect("log records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut log = Self::default();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let parsed: LogLine =
                serde_json::from_str(line).map_err(|e| Error::json(format!("training log line {}", i + 1), e))?;
            match parsed {
                LogLine::Step(s) => log.steps.push(s),
                LogLine::Epoch(e) => log.epochs.push(e),
                LogLine::Final { best_epoch, stopped_early } => {
                    log.best_epoch = best_epoch;
                    log.stopped_early = stopped_early;
                }
            }
        }
        Ok(log)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Final validation loss minus final training loss, rounded to 12 decimals
/// so that decimal inputs give decimal answers.
pub fn overfitting_indicator(log: &TrainingLog) -> Result<f64> {
    let last = log.epochs.last().ok_or(Error::Empty("training log has no epoch records"))?;
    Ok(overfitting_gap(last.mean_train_loss, last.val_loss))
}

pub fn overfitting_gap(train_loss: f64, val_loss: f64) -> f64 {
    ((val_loss - train_loss) * 1e12).round() / 1e12
}

/// Stops once validation loss has failed to improve for `patience`
/// consecutive epochs (at least one).
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    best: Option<(usize, f64)>,
    bad_epochs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            bad_epochs: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> Observation {
        let improved = self.best.is_none_or(|(_, b)| val_loss < b);
        if improved {
            self.best = Some((epoch, val_loss));
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        Observation {
            improved,
            stop: self.bad_epochs >= self.patience.max(1),
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }
}

fn labels_of(cases: &[ClinicalCase]) -> Result<Vec<bool>> {
    cases
        .iter()
        .enumerate()
        .map(|(index, c)| {
            c.label.ok_or_else(|| Error::MissingLabel {
                uid: c.uid.clone(),
                index,
            })
        })
        .collect()
}

/// Positive-class probabilities, in input order.
pub fn predict_probabilities(
    params: &ParameterSet<f32>,
    cfg: &ModelConfig,
    cases: &[EncodedCase],
) -> Result<Vec<f64>> {
    let logits = predict_logits(params, cfg, cases)?;
    Ok(logits.into_iter().map(sigmoid).collect())
}

fn predict_logits(params: &ParameterSet<f32>, cfg: &ModelConfig, cases: &[EncodedCase]) -> Result<Vec<f64>> {
    let logits: Vec<f64> = cases
        .par_iter()
        .map(|c| case_logit(params, cfg, c).map(|z| z as f64))
        .collect::<Result<_>>()?;
    if let Some(i) = logits.iter().position(|z| !z.is_finite()) {
        return Err(Error::NonFinite(format!("logit of case {}", cases[i].uid)));
    }
    Ok(logits)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub f1: f64,
}

pub fn evaluate(params: &ParameterSet<f32>, cfg: &ModelConfig, cases: &[EncodedCase], labels: &[bool]) -> Result<Evaluation> {
    let logits = predict_logits(params, cfg, cases)?;
    let loss = bce_loss(&logits, labels)?;
    let preds: Vec<bool> = logits.iter().map(|&z| z >= 0.0).collect();
    let cm = confusion(&preds, labels)?;
    Ok(Evaluation {
        loss,
        accuracy: cm.accuracy(),
        f1: cm.f1(),
    })
}

fn check_fit(model_cfg: &ModelConfig, train_cfg: &TrainConfig, assets: &PipelineAssets) -> Result<()> {
    if model_cfg.vocab_size < assets.vocab.size() {
        return Err(Error::InvalidConfig(format!(
            "model vocab_size {} is smaller than the vocabulary ({})",
            model_cfg.vocab_size,
            assets.vocab.size()
        )));
    }
    if model_cfg.max_positions < train_cfg.max_seq_len {
        return Err(Error::InvalidConfig(format!(
            "max_seq_len {} exceeds max_positions {}",
            train_cfg.max_seq_len, model_cfg.max_positions
        )));
    }
    Ok(())
}

/// Trains from scratch and returns the checkpoint of the epoch with the
/// lowest validation loss together with the full log.
pub fn train(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    split: &CorpusSplit,
    assets: &PipelineAssets,
) -> Result<(Checkpoint, TrainingLog)> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    check_fit(model_cfg, train_cfg, assets)?;
    if split.train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    if split.validation.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    let train_labels = labels_of(&split.train)?;
    let val_labels = labels_of(&split.validation)?;
    let train_set = assets.encode_all(&split.train, train_cfg.max_seq_len)?;
    let val_set = assets.encode_all(&split.validation, train_cfg.max_seq_len)?;

    let mut params = init_parameters::<f32>(model_cfg)?;
    let mut best = params.clone();
    let mut state = OptimizerState::new(&params);
    let mut stopper = EarlyStopping::new(train_cfg.patience);
    let mut log = TrainingLog::default();

    let group = train_cfg.effective_batch();
    let total_steps = train_cfg.steps_per_epoch(train_set.len()) * train_cfg.epochs;
    let shuffle_seed = derive_named(train_cfg.seed, "train/shuffle");
    let mut step = 0;
    let mut epochs_done = 0;
    for epoch in 1..=train_cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut stream(shuffle_seed, epoch as u64));
        let mut loss_sum = 0.0;
        for chunk in order.chunks(group) {
            let results: Vec<(f32, f32, ParameterSet<f32>)> = chunk
                .par_iter()
                .map(|&i| case_gradient(&params, model_cfg, &train_set[i], train_labels[i]))
                .collect::<Result<_>>()?;
            let mut iter = results.into_iter();
            let (first_loss, _, mut grads) = iter.next().expect("chunks are non-empty");
            let mut chunk_loss = first_loss as f64;
            for (loss, _, g) in iter {
                chunk_loss += loss as f64;
                grads.add_assign(&g);
            }
            grads.scale(1.0 / chunk.len() as f32);
            if !chunk_loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at step {step}")));
            }
            let lr = lr_at(step, total_steps, train_cfg)?;
            optimizer_step(&mut params, &grads, &mut state, lr, train_cfg)?;
            loss_sum += chunk_loss;
            log.steps.push(StepRecord {
                step,
                epoch,
                lr,
                train_loss: chunk_loss / chunk.len() as f64,
            });
            step += 1;
        }
        let val = evaluate(&params, model_cfg, &val_set, &val_labels)?;
        let record = EpochRecord {
            epoch,
            mean_train_loss: loss_sum / train_set.len() as f64,
            val_loss: val.loss,
            val_f1: val.f1,
            val_accuracy: val.accuracy,
        };
        info!(
            "epoch {epoch}: train loss {:.4}, val loss {:.4}, val acc {:.3}, val f1 {:.3}",
            record.mean_train_loss, record.val_loss, record.val_accuracy, record.val_f1
        );
        log.epochs.push(record);
        epochs_done = epoch;
        let obs = stopper.observe(epoch, val.loss);
        if obs.improved {
            best.clone_from(&params);
        }
        if obs.stop {
            log.stopped_early = epoch < train_cfg.epochs;
            break;
        }
    }
    log.best_epoch = stopper.best_epoch();
    let checkpoint = Checkpoint {
        config: model_cfg.clone(),
        vocab_hash: assets.vocab.hash(),
        params: best,
        rng_state: Some(vec![train_cfg.seed, epochs_done as u64, step as u64]),
    };
    Ok((checkpoint, log))
}
