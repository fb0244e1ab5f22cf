//! Single-worker SGD on the multi-task frame-level MSE.
//!
//! Minibatches are built from whole sequences (memory blocks need intact
//! temporal context) until at least `batch_frames` frames are collected.
//! Per-sequence gradients may be computed on the rayon pool but are always
//! reduced in batch order, so results do not depend on [`Execution`].

use std::collections::BTreeMap;

use crate::config::NetworkConfig;
use crate::dataset::{Dataset, Sequence};
use crate::error::{Error, Result};
use crate::network::{backward, forward, NetworkParams, StreamMap};
use crate::rng::SplitMix64;
use crate::tensor::{Execution, Matrix, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Minimum frames per minibatch.
    pub batch_frames: usize,
    pub lr: f64,
    pub decay_factor: f64,
    /// Consecutive insufficient validation improvements before decaying.
    pub patience: usize,
    /// Relative validation-MSE improvement that counts as progress.
    pub min_improvement: f64,
    pub max_epochs: usize,
    pub seed: u64,
    /// Per-stream loss weights; streams not listed weigh 1.0.
    pub stream_weights: BTreeMap<String, f64>,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_frames: 512,
            lr: 5e-7,
            decay_factor: 0.1,
            patience: 1,
            min_improvement: 0.005,
            max_epochs: 20,
            seed: 0,
            stream_weights: BTreeMap::new(),
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    /// Defaults for the small synthetic tasks, which want a far larger step.
    pub fn synthetic() -> Self {
        Self {
            lr: 1e-2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be >= 0, got {}", self.lr)));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "decay factor must lie in (0, 1), got {}",
                self.decay_factor
            )));
        }
        if self.batch_frames == 0 {
            return Err(Error::InvalidArgument("batch_frames must be >= 1".into()));
        }
        Ok(())
    }

    pub fn weight(&self, stream: &str) -> f64 {
        self.stream_weights.get(stream).copied().unwrap_or(1.0)
    }
}

/// `sum_s w_s * mean((pred_s - target_s)^2)` and its gradient w.r.t. every
/// prediction. Every predicted stream needs a target.
pub fn multitask_mse<T: Real>(
    pred: &StreamMap<T>,
    target: &StreamMap<T>,
    weights: &BTreeMap<String, f64>,
) -> Result<(f64, StreamMap<T>)> {
    let mut loss = 0.0;
    let mut grads = StreamMap::new();
    for (name, p) in pred {
        let t = target.get(name).ok_or_else(|| Error::MissingStream(name.clone()))?;
        if p.shape() != t.shape() {
            return Err(Error::shape("multitask_mse", p.shape(), t.shape()));
        }
        let w = weights.get(name).copied().unwrap_or(1.0);
        let count = p.len() as f64;
        let mut sq = 0.0;
        let scale = T::of(2.0 * w / count);
        let g: Vec<T> = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| {
                let e = a - b;
                sq += e.as_f64() * e.as_f64();
                scale * e
            })
            .collect();
        loss += w * sq / count;
        grads.insert(name.clone(), Matrix::new(p.rows(), p.cols(), g)?);
    }
    Ok((loss, grads))
}

/// `params <- params - lr * grads`.
pub fn sgd_step<T: Real>(params: &mut NetworkParams<T>, grads: &NetworkParams<T>, lr: f64) -> Result<()> {
    params.axpy(T::of(-lr), grads)
}

/// Validation-driven step decay.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    lr: f64,
    decay_factor: f64,
    patience: usize,
    min_improvement: f64,
    best: Option<f64>,
    stale: usize,
}

impl LrSchedule {
    pub fn new(lr: f64, decay_factor: f64, patience: usize, min_improvement: f64) -> Self {
        Self {
            lr,
            decay_factor,
            patience: patience.max(1),
            min_improvement,
            best: None,
            stale: 0,
        }
    }

    pub fn from_config(tc: &TrainConfig) -> Self {
        Self::new(tc.lr, tc.decay_factor, tc.patience, tc.min_improvement)
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// Feed one validation MSE; returns the learning rate for the next epoch.
    pub fn step(&mut self, validation_mse: f64) -> f64 {
        match self.best {
            None => self.best = Some(validation_mse),
            Some(best) => {
                let improvement = if best > 0.0 { (best - validation_mse) / best } else { 0.0 };
                if validation_mse < best {
                    self.best = Some(validation_mse);
                }
                if improvement >= self.min_improvement {
                    self.stale = 0;
                } else {
                    self.stale += 1;
                    if self.stale >= self.patience {
                        self.lr *= self.decay_factor;
                        self.stale = 0;
                    }
                }
            }
        }
        self.lr
    }
}

/// Group sequence indices (in `order`) into batches of at least
/// `batch_frames` frames; the final batch may be smaller.
pub fn make_batches(frames: &[usize], order: &[usize], batch_frames: usize) -> Vec<Vec<usize>> {
    let mut batches = Vec::new();
    let mut current = Vec::new();
    let mut count = 0;
    for &i in order {
        current.push(i);
        count += frames[i];
        if count >= batch_frames {
            batches.push(std::mem::take(&mut current));
            count = 0;
        }
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches
}

fn check_sequence<T: Real>(cfg: &NetworkConfig, seq: &Sequence<T>) -> Result<()> {
    if seq.input.cols() != cfg.input_dim {
        return Err(Error::StreamDim {
            stream: "input".into(),
            expected: cfg.input_dim,
            found: seq.input.cols(),
        });
    }
    for s in &cfg.output_streams {
        let t = seq.targets.get(&s.name).ok_or_else(|| Error::MissingStream(s.name.clone()))?;
        if t.cols() != s.dim {
            return Err(Error::StreamDim {
                stream: s.name.clone(),
                expected: s.dim,
                found: t.cols(),
            });
        }
        if t.rows() != seq.frames() {
            return Err(Error::shape("target frames", t.shape(), (seq.frames(), s.dim)));
        }
    }
    Ok(())
}

/// Check that every sequence matches the network's input and output streams.
pub fn check_dataset<T: Real>(cfg: &NetworkConfig, data: &Dataset<T>) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    data.sequences.iter().try_for_each(|s| check_sequence(cfg, s))
}

/// Loss on one sequence; `targets` may hold extra streams the network lacks.
pub fn sequence_loss<T: Real>(
    params: &NetworkParams<T>,
    cfg: &NetworkConfig,
    seq: &Sequence<T>,
    weights: &BTreeMap<String, f64>,
) -> Result<f64> {
    let out = forward(params, cfg, &seq.input)?;
    Ok(multitask_mse(&out.streams, &seq.targets, weights)?.0)
}

/// Loss and gradient of a minibatch.
///
/// The batch loss pools squared errors over all frames of the batch, which
/// equals the frame-weighted mean of the per-sequence losses.
pub fn batch_gradient<T: Real>(
    params: &NetworkParams<T>,
    cfg: &NetworkConfig,
    batch: &[&Sequence<T>],
    weights: &BTreeMap<String, f64>,
    exec: Execution,
) -> Result<(f64, NetworkParams<T>)> {
    let total: usize = batch.iter().map(|s| s.frames()).sum();
    let per_seq = exec.map(batch, |seq| -> Result<(f64, NetworkParams<T>)> {
        let out = forward(params, cfg, &seq.input)?;
        let (loss, g) = multitask_mse(&out.streams, &seq.targets, weights)?;
        Ok((loss, backward(params, cfg, &out.cache, &g)?.params))
    });
    let mut grads = NetworkParams::zeros(cfg);
    let mut loss = 0.0;
    for (seq, r) in batch.iter().zip(per_seq) {
        let (l, g) = r?;
        let share = seq.frames() as f64 / total as f64;
        loss += share * l;
        grads.axpy(T::of(share), &g)?;
    }
    Ok((loss, grads))
}

/// Frame-weighted mean loss over a dataset.
pub fn evaluate<T: Real>(
    params: &NetworkParams<T>,
    cfg: &NetworkConfig,
    data: &Dataset<T>,
    weights: &BTreeMap<String, f64>,
    exec: Execution,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let losses = exec.map(&data.sequences, |seq| sequence_loss(params, cfg, seq, weights));
    let total = data.total_frames() as f64;
    let mut acc = 0.0;
    for (seq, l) in data.sequences.iter().zip(losses) {
        acc += l? * seq.frames() as f64 / total;
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Learning rate used during the epoch.
    pub lr: f64,
    pub train_mse: f64,
    pub valid_mse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: NetworkParams<T>,
    pub history: Vec<EpochRecord>,
}

impl<T> TrainOutcome<T> {
    pub fn final_valid_mse(&self) -> Option<f64> {
        self.history.last().map(|r| r.valid_mse)
    }
}

/// Plain-text history, one `epoch lr train_mse valid_mse` line per epoch.
pub fn format_history(history: &[EpochRecord]) -> String {
    let mut out = String::from("# epoch\tlr\ttrain_mse\tvalid_mse\n");
    for r in history {
        out.push_str(&format!("{}\t{:e}\t{:.9e}\t{:.9e}\n", r.epoch, r.lr, r.train_mse, r.valid_mse));
    }
    out
}

/// Train from `params` for `tc.max_epochs` epochs.
///
/// Each epoch shuffles sequences with `SplitMix64::derive(tc.seed, epoch)`,
/// takes one SGD step per minibatch, evaluates on `valid` and feeds the
/// result to the learning-rate schedule.
pub fn train<T: Real>(
    cfg: &NetworkConfig,
    mut params: NetworkParams<T>,
    train_set: &Dataset<T>,
    valid_set: &Dataset<T>,
    tc: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    tc.validate()?;
    check_dataset(cfg, train_set)?;
    check_dataset(cfg, valid_set)?;
    params.check_shapes(cfg)?;

    let frames: Vec<usize> = train_set.sequences.iter().map(Sequence::frames).collect();
    let mut schedule = LrSchedule::from_config(tc);
    let mut history = Vec::with_capacity(tc.max_epochs);
    for epoch in 1..=tc.max_epochs {
        let lr = schedule.lr();
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        SplitMix64::derive(tc.seed, epoch as u64).shuffle(&mut order);
        let mut pooled = 0.0;
        for (b, batch) in make_batches(&frames, &order, tc.batch_frames).iter().enumerate() {
            let seqs: Vec<&Sequence<T>> = batch.iter().map(|&i| &train_set.sequences[i]).collect();
            let (loss, grads) = batch_gradient(&params, cfg, &seqs, &tc.stream_weights, tc.execution)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite { epoch, batch: b });
            }
            sgd_step(&mut params, &grads, lr)?;
            if !params.is_finite() {
                return Err(Error::NonFinite { epoch, batch: b });
            }
            let batch_frames: usize = batch.iter().map(|&i| frames[i]).sum();
            pooled += loss * batch_frames as f64;
        }
        let train_mse = pooled / train_set.total_frames() as f64;
        let valid_mse = evaluate(&params, cfg, valid_set, &tc.stream_weights, tc.execution)?;
        if !valid_mse.is_finite() {
            return Err(Error::NonFinite { epoch, batch: usize::MAX });
        }
        history.push(EpochRecord {
            epoch,
            lr,
            train_mse,
            valid_mse,
        });
        schedule.step(valid_mse);
    }
    Ok(TrainOutcome { params, history })
}
