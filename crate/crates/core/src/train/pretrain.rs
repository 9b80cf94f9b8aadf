use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use netmae_autograd::{Graph, OptimizerState, Tensor, Var};
use rand::Rng;
use rayon::prelude::*;

use super::config::TrainConfig;
use crate::data::{
    make_mask_plan, make_random_mask_plan, mean_network_mask_size, MaskPlan, NetworkAtlas, PreparedRecording, TokenGrid,
};
use crate::error::{Error, Result};
use crate::model::{self, bind, save_checkpoint, MaskMode, ModelState};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Validation loss (pretraining) or balanced accuracy (fine-tuning).
    pub validation: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept, if validation ran.
    pub best_epoch: Option<usize>,
    pub wall_seconds: f64,
}

impl TrainHistory {
    pub fn final_loss(&self) -> Option<f64> {
        self.steps.last().map(|s| s.loss)
    }

    /// `step,loss,lr` lines.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss,lr\n");
        for r in &self.steps {
            let _ = writeln!(s, "{},{:e},{:e}", r.step, r.loss, r.lr);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// `(step, loss, lr)` rows from a history CSV.
pub fn read_history_csv(path: &Path) -> Result<Vec<(usize, f64, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .skip(1)
        .map(|(i, l)| {
            let bad = || Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                column: 0,
                message: format!("bad history row {l:?}"),
            };
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 3 {
                return Err(bad());
            }
            Ok((
                f[0].parse().map_err(|_| bad())?,
                f[1].parse().map_err(|_| bad())?,
                f[2].parse().map_err(|_| bad())?,
            ))
        })
        .collect()
}

/// Every `(recording, segment)` pair, in input order.
pub(crate) fn sample_index(recs: &[PreparedRecording]) -> Vec<(usize, usize)> {
    recs.iter()
        .enumerate()
        .flat_map(|(r, rec)| (0..rec.segments.len()).map(move |s| (r, s)))
        .collect()
}

/// Shuffled sample order for one epoch.
pub(crate) fn epoch_order(seed_value: u64, stage: &str, epoch: usize, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed_value, stage, epoch as u64));
    order
}

/// Mask plan for the sample at `position` of `epoch`: one uniformly drawn
/// network, or a uniform token subset under random masking.
pub fn sample_plan(
    config: &TrainConfig,
    atlas: &NetworkAtlas,
    grid: &TokenGrid,
    stage: &str,
    draw: u64,
) -> Result<MaskPlan> {
    let mut rng = seed::rng(config.seed, stage, draw);
    match config.mask_mode {
        MaskMode::Network => {
            let target = rng.gen_range(0..atlas.network_count());
            make_mask_plan(atlas, grid, target)
        }
        MaskMode::Random => {
            let size = config
                .random_mask_size
                .unwrap_or_else(|| mean_network_mask_size(atlas, grid.rows));
            make_random_mask_plan(grid, size, &mut rng)
        }
    }
}

/// Loss and parameter gradients for one sample graph. Parameters with
/// `trainable[i] == false` get no gradient.
pub(crate) fn sample_gradient<F>(state: &ModelState, trainable: &[bool], build: F) -> Result<(f64, Vec<Option<Tensor>>)>
where
    F: FnOnce(&mut Graph, &model::Bound) -> Result<Var>,
{
    let mut g = Graph::new();
    let b = bind(&mut g, state, |i| trainable[i])?;
    let loss = build(&mut g, &b)?;
    let value = g.value(loss).data()[0];
    if !value.is_finite() {
        return Ok((value, vec![None; trainable.len()]));
    }
    let mut grads = g.backward(loss)?;
    let out = b
        .vars()
        .iter()
        .zip(trainable)
        .map(|(&v, &t)| if t { grads.take(v) } else { None })
        .collect();
    Ok((value, out))
}

/// Batch-mean loss and gradient; per-sample results are summed in batch
/// order so the outcome does not depend on the worker count.
pub(crate) fn batch_gradient<F>(
    state: &ModelState,
    trainable: &[bool],
    batch: &[usize],
    per_sample: F,
) -> Result<(f64, Vec<Tensor>)>
where
    F: Fn(&mut Graph, &model::Bound, usize) -> Result<Var> + Sync,
{
    let results: Vec<(f64, Vec<Option<Tensor>>)> = batch
        .par_iter()
        .map(|&s| sample_gradient(state, trainable, |g, b| per_sample(g, b, s)))
        .collect::<Result<_>>()?;
    let mut sum: Vec<Tensor> = state.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
    let mut loss = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for (l, grads) in results {
        loss += l * scale;
        for (acc, g) in sum.iter_mut().zip(grads) {
            if let Some(g) = g {
                for (a, x) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += x * scale;
                }
            }
        }
    }
    Ok((loss, sum))
}

pub(crate) fn diverged(step: usize, e: impl std::fmt::Display) -> Error {
    Error::Diverged {
        step,
        message: e.to_string(),
    }
}

/// Non-finite intermediate values during a training step mean divergence.
pub(crate) fn non_finite_as_divergence(step: usize, e: Error) -> Error {
    match e {
        Error::Autograd(a @ netmae_autograd::AutogradError::NonFinite { .. }) => diverged(step, a),
        e => e,
    }
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    /// Best-validation parameters (the final ones when there is no validation split).
    pub best: ModelState,
    pub last: ModelState,
    pub history: TrainHistory,
}

/// Mean masked-reconstruction loss over every validation segment, each with
/// a fixed draw so epochs are comparable.
pub fn validation_loss(
    state: &ModelState,
    val: &[PreparedRecording],
    atlas: &NetworkAtlas,
    config: &TrainConfig,
) -> Result<Option<f64>> {
    let samples = sample_index(val);
    if samples.is_empty() {
        return Ok(None);
    }
    let losses: Vec<f64> = samples
        .par_iter()
        .enumerate()
        .map(|(i, &(r, s))| {
            let grid = &val[r].segments[s];
            let plan = sample_plan(config, atlas, grid, "val-mask", i as u64)?;
            state.reconstruction_loss(grid, &plan)
        })
        .collect::<Result<_>>()?;
    Ok(Some(losses.iter().sum::<f64>() / losses.len() as f64))
}

/// Masked-reconstruction pretraining with AdamW and the WSD schedule.
/// A non-finite loss or gradient aborts with [`Error::Diverged`]; the last
/// best checkpoint, if configured, stays on disk.
pub fn pretrain(
    init: ModelState,
    train: &[PreparedRecording],
    val: &[PreparedRecording],
    atlas: &NetworkAtlas,
    config: &TrainConfig,
) -> Result<PretrainOutcome> {
    config.validate()?;
    let samples = sample_index(train);
    if samples.is_empty() {
        return Err(Error::Invalid("pretraining split has no segments".into()));
    }
    let started = Instant::now();
    let mut state = init;
    state.config.mask_mode = config.mask_mode;
    let steps_per_epoch = samples.len().div_ceil(config.batch_size);
    let schedule = config.schedule(steps_per_epoch * config.epochs);
    let trainable = vec![true; state.params().len()];
    let mut opt = OptimizerState::new(config.adamw(), state.names().to_vec(), state.params());
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, ModelState)> = None;
    let mut step = 0;

    for epoch in 0..config.epochs {
        let order = epoch_order(config.seed, "pretrain-order", epoch, samples.len());
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let (loss, grads) = batch_gradient(&state, &trainable, batch, |g, b, pos| {
                let (r, s) = samples[pos];
                let grid = &train[r].segments[s];
                let draw = (epoch * samples.len() + pos) as u64;
                let plan = sample_plan(config, atlas, grid, "pretrain-mask", draw)?;
                let rec = model::reconstruct(g, &state, b, grid, &plan, false)?;
                model::reconstruction_loss(g, rec.pred, grid, &plan)
            })
            .map_err(|e| non_finite_as_divergence(step, e))?;
            let lr = schedule.lr(step)?;
            if !loss.is_finite() {
                return Err(diverged(step, format!("loss became {loss}")));
            }
            opt.step_masked(state.params_mut(), &grads, lr, None)
                .map_err(|e| diverged(step, e))?;
            history.steps.push(StepRecord { step, epoch, loss, lr });
            epoch_loss += loss * batch.len() as f64;
            step += 1;
        }
        let train_loss = epoch_loss / samples.len() as f64;
        let last_epoch = epoch + 1 == config.epochs;
        let validation = if (epoch + 1) % config.eval_every == 0 || last_epoch {
            validation_loss(&state, val, atlas, config)?
        } else {
            None
        };
        if let Some(v) = validation {
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, state.clone()));
                history.best_epoch = Some(epoch);
                if let Some(path) = &config.checkpoint {
                    save_checkpoint(&state, path)?;
                }
            }
        }
        if config.verbose {
            let v = validation.map_or_else(|| "-".into(), |v| format!("{v:.4}"));
            eprintln!(
                "pretrain epoch {:>3}/{} train {:.4} val {v}",
                epoch + 1,
                config.epochs,
                train_loss
            );
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            validation,
        });
    }
    history.wall_seconds = started.elapsed().as_secs_f64();
    let best = match best {
        Some((_, s)) => s,
        None => {
            if let Some(path) = &config.checkpoint {
                save_checkpoint(&state, path)?;
            }
            state.clone()
        }
    };
    Ok(PretrainOutcome {
        best,
        last: state,
        history,
    })
}
