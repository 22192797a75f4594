//! Training loop: length-proportional window sampling, a trailing validation
//! split per trace, AdamW with warmup + cosine decay, gradient clipping, and
//! early stopping on validation loss.

use super::{Model, ModelError};
use crate::tokenizer::TokenizedStream;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::ops::Range;
use std::path::Path;

/// Everything the optimizer loop needs beyond the model itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainPlan {
    /// Maximum optimizer steps.
    pub steps: usize,
    /// Tokens consumed per step; sequences per step = tokens_per_step / context.
    pub tokens_per_step: usize,
    /// Peak learning rate.
    pub lr: f64,
    /// Fraction of steps spent in linear warmup.
    pub warmup_frac: f64,
    /// Cosine decay floor, as a fraction of the peak rate.
    pub lr_final_frac: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
    /// Global gradient-norm clip.
    pub grad_clip: f64,
    /// Trailing fraction of each trace held out for validation.
    pub val_fraction: f64,
    /// Steps between validation evaluations.
    pub eval_interval: usize,
    /// Consecutive evaluations without improvement before stopping.
    pub patience: usize,
    /// Relative improvement of best validation loss that counts as progress.
    pub min_rel_improvement: f64,
    /// Cap on validation windows per trace (evenly spaced over the region).
    pub val_windows_per_trace: usize,
    /// Seed for window sampling.
    pub seed: u64,
}

impl Default for TrainPlan {
    fn default() -> Self {
        TrainPlan {
            steps: 1000,
            tokens_per_step: 1 << 16,
            lr: 3e-4,
            warmup_frac: 0.01,
            lr_final_frac: 0.1,
            weight_decay: 0.01,
            grad_clip: 1.0,
            val_fraction: 0.10,
            eval_interval: 25,
            patience: 5,
            min_rel_improvement: 0.001,
            val_windows_per_trace: 16,
            seed: 0,
        }
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub step: u64,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Write a training log as `step,train_loss,val_loss` CSV.
pub fn write_loss_csv(log: &[TrainLogEntry], path: &Path) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "step,train_loss,val_loss")?;
    for e in log {
        writeln!(w, "{},{},{}", e.step, e.train_loss, e.val_loss)?;
    }
    w.flush()
}

/// A tokenized stream split into a leading training region and a trailing
/// validation region.
#[derive(Debug, Clone)]
pub struct SplitStream<'a> {
    pub stream: &'a TokenizedStream,
    pub name: String,
    pub train_tokens: usize,
    pub val: Range<usize>,
}

/// Split one stream: the final `val_fraction` of tokens form the validation
/// region; the training boundary is rounded down to an even index so both
/// regions start on a source token.
pub fn split_train_val<'a>(
    stream: &'a TokenizedStream,
    name: &str,
    val_fraction: f64,
    context: usize,
) -> Result<SplitStream<'a>, ModelError> {
    assert!(val_fraction > 0.0 && val_fraction < 1.0, "val_fraction in (0,1)");
    let len = stream.len();
    let val_len = (len as f64 * val_fraction).floor() as usize;
    let mut train_len = len - val_len;
    train_len &= !1;
    let needed = context + 1;
    if train_len < needed {
        return Err(ModelError::RegionTooShort {
            region: "training",
            name: name.to_string(),
            len: train_len,
            needed,
        });
    }
    if len - train_len < needed {
        return Err(ModelError::RegionTooShort {
            region: "validation",
            name: name.to_string(),
            len: len - train_len,
            needed,
        });
    }
    Ok(SplitStream {
        stream,
        name: name.to_string(),
        train_tokens: train_len,
        val: train_len..len,
    })
}

/// One sampled training window: `context` tokens plus their shifted targets.
#[derive(Debug, Clone, Copy)]
pub struct Window<'a> {
    pub trace_index: usize,
    pub offset: usize,
    pub tokens: &'a [u32],
    pub metas: &'a [u32],
    pub targets: &'a [u32],
}

/// Pick a trace with probability proportional to its training-token count,
/// then a uniform even offset whose window (plus one target token) fits in
/// the training region.
pub fn sample_training_window<'a>(
    splits: &[SplitStream<'a>],
    context: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Window<'a>, ModelError> {
    if splits.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    for s in splits {
        if s.train_tokens < context + 1 {
            return Err(ModelError::RegionTooShort {
                region: "training",
                name: s.name.clone(),
                len: s.train_tokens,
                needed: context + 1,
            });
        }
    }
    let total: u64 = splits.iter().map(|s| s.train_tokens as u64).sum();
    let mut pick = rng.random_range(0..total);
    let mut trace_index = 0;
    for (i, s) in splits.iter().enumerate() {
        let w = s.train_tokens as u64;
        if pick < w {
            trace_index = i;
            break;
        }
        pick -= w;
    }
    let split = &splits[trace_index];
    let max_offset = split.train_tokens - (context + 1);
    let n_even = max_offset / 2 + 1;
    let offset = 2 * rng.random_range(0..n_even as u64) as usize;
    let stream = split.stream;
    Ok(Window {
        trace_index,
        offset,
        tokens: &stream.tokens[offset..offset + context],
        metas: &stream.meta_tokens[offset..offset + context],
        targets: &stream.tokens[offset + 1..offset + context + 1],
    })
}

/// Mean validation loss over evenly spaced even-aligned windows of each
/// trace's validation region.
pub fn validation_loss(
    model: &Model,
    splits: &[SplitStream<'_>],
    windows_per_trace: usize,
) -> Result<f64, ModelError> {
    let context = model.config.context;
    let mut jobs: Vec<(&TokenizedStream, usize)> = Vec::new();
    for s in splits {
        let start = (s.val.start + 1) & !1;
        let end = s.val.end;
        let span = end.saturating_sub(start);
        if span < context + 1 {
            return Err(ModelError::RegionTooShort {
                region: "validation",
                name: s.name.clone(),
                len: span,
                needed: context + 1,
            });
        }
        let max_windows = (span - 1) / context;
        let n = max_windows.min(windows_per_trace).max(1);
        let last_start = end - (context + 1);
        for i in 0..n {
            let offset = if n == 1 {
                start
            } else {
                start + (i * (last_start - start)) / (n - 1)
            };
            jobs.push((s.stream, offset & !1));
        }
    }
    let losses: Result<Vec<f64>, ModelError> = jobs
        .par_iter()
        .map(|&(stream, off)| {
            let logits = model.forward(
                &stream.tokens[off..off + context],
                &stream.meta_tokens[off..off + context],
            )?;
            model.loss(&logits, &stream.tokens[off + 1..off + context + 1])
        })
        .collect();
    let losses = losses?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl AdamW {
    fn new(n: usize) -> Self {
        AdamW {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64, weight_decay: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * (mhat / (vhat.sqrt() + self.eps) + weight_decay * params[i]);
        }
    }
}

fn lr_at(plan: &TrainPlan, step: usize) -> f64 {
    let warmup = ((plan.steps as f64 * plan.warmup_frac).round() as usize).max(1);
    if step < warmup {
        return plan.lr * (step + 1) as f64 / warmup as f64;
    }
    let progress = (step - warmup) as f64 / (plan.steps - warmup).max(1) as f64;
    let floor = plan.lr * plan.lr_final_frac;
    floor + 0.5 * (plan.lr - floor) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Outcome of a training run: the log plus the optimizer state at stop time.
/// The model passed to [`train`] is left holding the best-validation weights.
#[derive(Debug)]
pub struct TrainOutcome {
    pub log: Vec<TrainLogEntry>,
    pub best_val_loss: f64,
    pub steps_run: usize,
    pub optimizer_m: Vec<f64>,
    pub optimizer_v: Vec<f64>,
    pub optimizer_step: u64,
}

/// Run the optimizer until `plan.steps` or until the best validation loss
/// stops improving. On success the model holds the best-validation weights.
pub fn train(
    model: &mut Model,
    dataset: &[TokenizedStream],
    names: &[String],
    plan: &TrainPlan,
) -> Result<TrainOutcome, ModelError> {
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let context = model.config.context;
    let splits: Vec<SplitStream> = dataset
        .iter()
        .zip(names)
        .map(|(s, n)| split_train_val(s, n, plan.val_fraction, context))
        .collect::<Result<_, _>>()?;
    for s in &splits {
        for &t in s.stream.tokens.iter() {
            if t as usize >= model.config.vocab {
                return Err(ModelError::TokenOutOfVocab {
                    token: t,
                    vocab: model.config.vocab,
                });
            }
        }
    }

    let seqs_per_step = (plan.tokens_per_step / context).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut opt = AdamW::new(model.params.len());
    let mut grad = vec![0.0; model.params.len()];

    let mut log = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_params = model.params.clone();
    let mut evals_since_improve = 0usize;
    let mut train_loss_accum = 0.0;
    let mut train_loss_count = 0usize;
    let mut steps_run = 0;

    for step in 0..plan.steps {
        let windows: Vec<Window> = (0..seqs_per_step)
            .map(|_| sample_training_window(&splits, context, &mut rng))
            .collect::<Result<_, _>>()?;

        // Each window gets its own gradient buffer; buffers are summed in
        // window order so results do not depend on thread count.
        let results: Result<Vec<(f64, Vec<f64>)>, ModelError> = windows
            .par_iter()
            .map(|w| {
                let mut g = vec![0.0; model.layout.total];
                let loss = model.loss_and_grad(w.tokens, w.metas, w.targets, &mut g)?;
                Ok((loss, g))
            })
            .collect();
        let results = results?;

        grad.fill(0.0);
        let mut step_loss = 0.0;
        let inv = 1.0 / results.len() as f64;
        for (loss, g) in &results {
            step_loss += loss * inv;
            for (acc, &x) in grad.iter_mut().zip(g) {
                *acc += x * inv;
            }
        }
        if !step_loss.is_finite() {
            return Err(ModelError::Diverged {
                step,
                loss: step_loss,
            });
        }

        let norm: f64 = grad.iter().map(|&g| g * g).sum::<f64>().sqrt();
        if norm > plan.grad_clip {
            let s = plan.grad_clip / norm;
            for g in grad.iter_mut() {
                *g *= s;
            }
        }
        opt.update(&mut model.params, &grad, lr_at(plan, step), plan.weight_decay);
        steps_run = step + 1;
        train_loss_accum += step_loss;
        train_loss_count += 1;

        let last_step = step + 1 == plan.steps;
        if (step + 1) % plan.eval_interval == 0 || last_step {
            let val = validation_loss(model, &splits, plan.val_windows_per_trace)?;
            if !val.is_finite() {
                return Err(ModelError::Diverged { step, loss: val });
            }
            log.push(TrainLogEntry {
                step: (step + 1) as u64,
                train_loss: train_loss_accum / train_loss_count.max(1) as f64,
                val_loss: val,
            });
            train_loss_accum = 0.0;
            train_loss_count = 0;

            if val < best_val * (1.0 - plan.min_rel_improvement) || best_val.is_infinite() {
                best_val = val;
                best_params.copy_from_slice(&model.params);
                evals_since_improve = 0;
            } else {
                if val < best_val {
                    // Still the best weights, just not enough gain to reset
                    // the patience window.
                    best_val = val;
                    best_params.copy_from_slice(&model.params);
                }
                evals_since_improve += 1;
                if evals_since_improve >= plan.patience {
                    break;
                }
            }
        }
    }

    model.params.copy_from_slice(&best_params);
    Ok(TrainOutcome {
        log,
        best_val_loss: best_val,
        steps_run,
        optimizer_m: opt.m,
        optimizer_v: opt.v,
        optimizer_step: opt.step,
    })
}
