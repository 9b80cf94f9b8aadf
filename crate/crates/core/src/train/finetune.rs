use std::collections::BTreeMap;
use std::time::Instant;

use netmae_autograd::{OptimizerState, Tensor};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::config::TrainConfig;
use super::pretrain::{
    batch_gradient, diverged, epoch_order, non_finite_as_divergence, sample_index, EpochRecord, StepRecord,
    TrainHistory,
};
use crate::analysis::{classification_metrics, ClassificationReport, CLASS_COUNT};
use crate::data::{Label, PreparedRecording};
use crate::error::{Error, Result};
use crate::model::{self, softmax, ModelState};
use crate::seed;

#[derive(Clone, Debug, PartialEq)]
pub struct RecordingPrediction {
    pub subject: String,
    pub session: u32,
    pub label: Label,
    /// Mean of the segment logits.
    pub logits: [f64; CLASS_COUNT],
    pub probs: [f64; CLASS_COUNT],
}

fn to_array(v: &[f64]) -> [f64; CLASS_COUNT] {
    let mut a = [0.0; CLASS_COUNT];
    a.copy_from_slice(v);
    a
}

fn aggregate(rec: &PreparedRecording, segment_logits: &[Vec<f64>]) -> RecordingPrediction {
    let mut mean = [0.0; CLASS_COUNT];
    for l in segment_logits {
        for (m, x) in mean.iter_mut().zip(l) {
            *m += x / segment_logits.len() as f64;
        }
    }
    RecordingPrediction {
        subject: rec.subject_id.clone(),
        session: rec.session_index,
        label: rec.label,
        logits: mean,
        probs: to_array(&softmax(&mean)),
    }
}

/// Recording-level predictions: segment logits averaged, then softmax.
pub fn predict_recordings(state: &ModelState, recordings: &[PreparedRecording]) -> Result<Vec<RecordingPrediction>> {
    if state.config.classes != CLASS_COUNT {
        return Err(Error::Invalid(format!(
            "classifier has {} outputs, expected {CLASS_COUNT}",
            state.config.classes
        )));
    }
    recordings
        .par_iter()
        .map(|rec| {
            let logits = rec
                .segments
                .iter()
                .map(|g| state.logits(g))
                .collect::<Result<Vec<_>>>()?;
            Ok(aggregate(rec, &logits))
        })
        .collect()
}

/// Metrics over the labeled predictions.
pub fn evaluate_predictions(preds: &[RecordingPrediction]) -> Result<ClassificationReport> {
    let (labels, scores): (Vec<usize>, Vec<[f64; CLASS_COUNT]>) = preds
        .iter()
        .filter_map(|p| p.label.class_index().map(|c| (c, p.probs)))
        .unzip();
    classification_metrics(&labels, &scores)
}

/// Copies of `recordings` whose labels are permuted across subjects (all
/// sessions of a subject keep one shared label).
pub fn permute_labels(recordings: &[PreparedRecording], seed_value: u64) -> Vec<PreparedRecording> {
    let mut subject_label: BTreeMap<&str, Label> = BTreeMap::new();
    for r in recordings {
        subject_label.entry(r.subject_id.as_str()).or_insert(r.label);
    }
    let subjects: Vec<&str> = subject_label.keys().copied().collect();
    let mut labels: Vec<Label> = subject_label.values().copied().collect();
    labels.shuffle(&mut seed::rng(seed_value, "label-permutation", 0));
    let map: BTreeMap<&str, Label> = subjects.into_iter().zip(labels).collect();
    recordings
        .iter()
        .map(|r| PreparedRecording {
            label: map[r.subject_id.as_str()],
            ..r.clone()
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub state: ModelState,
    /// Epoch validations hold balanced accuracy.
    pub history: TrainHistory,
    pub best_val_bacc: Option<f64>,
    pub epochs_run: usize,
    pub warnings: Vec<String>,
}

fn class_warnings(name: &str, recs: &[PreparedRecording]) -> Option<String> {
    let mut seen = [false; CLASS_COUNT];
    for r in recs {
        if let Some(c) = r.label.class_index() {
            seen[c] = true;
        }
    }
    let missing: Vec<&str> = (0..CLASS_COUNT)
        .filter(|&c| !seen[c])
        .filter_map(Label::from_class_index)
        .map(Label::as_str)
        .collect();
    (!missing.is_empty()).then(|| format!("{name} split lacks class(es) {}", missing.join(",")))
}

/// Pooled encoder features per segment, for frozen-encoder training.
fn pooled_features(state: &ModelState, recs: &[PreparedRecording]) -> Result<Vec<Vec<Tensor>>> {
    recs.par_iter()
        .map(|r| {
            r.segments
                .iter()
                .map(|g| {
                    let (v, _) = state.embedding_summary(g)?;
                    Ok(Tensor::new(&[1, v.len()], v)?)
                })
                .collect()
        })
        .collect()
}

fn head_logits(state: &ModelState, pooled: &Tensor) -> Result<Vec<f64>> {
    let mut g = netmae_autograd::Graph::new();
    let b = model::bind(&mut g, state, |_| false)?;
    let p = g.constant(pooled.clone())?;
    let l = model::classify_pooled(&mut g, state, &b, p)?;
    Ok(g.value(l).data().to_vec())
}

fn predict_cached(
    state: &ModelState,
    recs: &[PreparedRecording],
    feats: &[Vec<Tensor>],
) -> Result<Vec<RecordingPrediction>> {
    recs.par_iter()
        .zip(feats)
        .map(|(rec, f)| {
            let logits = f.iter().map(|p| head_logits(state, p)).collect::<Result<Vec<_>>>()?;
            Ok(aggregate(rec, &logits))
        })
        .collect()
}

/// Cross-entropy fine-tuning of the classifier on segment logits, with
/// early stopping on validation balanced accuracy. In frozen mode only the
/// head changes and pooled features are computed once.
pub fn finetune_classifier(
    init: ModelState,
    train: &[PreparedRecording],
    val: &[PreparedRecording],
    config: &TrainConfig,
) -> Result<FinetuneOutcome> {
    config.validate()?;
    let train: Vec<PreparedRecording> = train
        .iter()
        .filter(|r| r.label.class_index().is_some())
        .cloned()
        .collect();
    let val: Vec<PreparedRecording> = val
        .iter()
        .filter(|r| r.label.class_index().is_some())
        .cloned()
        .collect();
    let samples = sample_index(&train);
    if samples.is_empty() {
        return Err(Error::Invalid("no labeled training segments".into()));
    }
    let mut warnings = Vec::new();
    for (name, recs) in [("train", &train), ("validation", &val)] {
        if let Some(w) = class_warnings(name, recs) {
            eprintln!("warning: {w}");
            warnings.push(w);
        }
    }

    let started = Instant::now();
    let mut state = init;
    let head = state.head_indices();
    let trainable: Vec<bool> = (0..state.params().len())
        .map(|i| !config.frozen_encoder || head.contains(&i))
        .collect();
    let (train_feats, val_feats) = if config.frozen_encoder {
        (
            Some(pooled_features(&state, &train)?),
            Some(pooled_features(&state, &val)?),
        )
    } else {
        (None, None)
    };

    let steps_per_epoch = samples.len().div_ceil(config.batch_size);
    let schedule = config.schedule(steps_per_epoch * config.epochs);
    let mut opt = OptimizerState::new(config.adamw(), state.names().to_vec(), state.params());
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, ModelState)> = None;
    let mut since_best = 0;
    let mut step = 0;
    let mut epochs_run = 0;

    for epoch in 0..config.epochs {
        let order = epoch_order(config.seed, "finetune-order", epoch, samples.len());
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let (loss, grads) = batch_gradient(&state, &trainable, batch, |g, b, pos| {
                let (r, s) = samples[pos];
                let label = train[r].label.class_index().expect("labeled");
                let logits = match &train_feats {
                    Some(f) => {
                        let p = g.constant(f[r][s].clone())?;
                        model::classify_pooled(g, &state, b, p)?
                    }
                    None => model::classify(g, &state, b, &train[r].segments[s])?,
                };
                Ok(g.cross_entropy(logits, label)?)
            })
            .map_err(|e| non_finite_as_divergence(step, e))?;
            let lr = schedule.lr(step)?;
            if !loss.is_finite() {
                return Err(diverged(step, format!("loss became {loss}")));
            }
            opt.step_masked(state.params_mut(), &grads, lr, Some(&trainable))
                .map_err(|e| diverged(step, e))?;
            history.steps.push(StepRecord { step, epoch, loss, lr });
            epoch_loss += loss * batch.len() as f64;
            step += 1;
        }
        epochs_run += 1;
        let bacc = if val.is_empty() {
            None
        } else {
            let preds = match &val_feats {
                Some(f) => predict_cached(&state, &val, f)?,
                None => predict_recordings(&state, &val)?,
            };
            Some(evaluate_predictions(&preds)?.balanced_accuracy)
        };
        let train_loss = epoch_loss / samples.len() as f64;
        if config.verbose {
            let v = bacc.map_or_else(|| "-".into(), |v| format!("{v:.3}"));
            eprintln!(
                "finetune epoch {:>3}/{} loss {train_loss:.4} val bacc {v}",
                epoch + 1,
                config.epochs
            );
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            validation: bacc,
        });
        if let Some(b) = bacc {
            if best.as_ref().is_none_or(|(v, _)| b > *v) {
                best = Some((b, state.clone()));
                history.best_epoch = Some(epoch);
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.patience {
                    break;
                }
            }
        }
    }
    history.wall_seconds = started.elapsed().as_secs_f64();
    let (best_val_bacc, state) = match best {
        Some((b, s)) => (Some(b), s),
        None => (None, state),
    };
    Ok(FinetuneOutcome {
        state,
        history,
        best_val_bacc,
        epochs_run,
        warnings,
    })
}
