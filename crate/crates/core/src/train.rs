//! NMSE training of the trainable parameter set with Adam and a
//! warmup-cosine learning rate, plus per-epoch port-selection validation.
//!
//! Work is split into fixed chunks of samples; chunks run in parallel and
//! their gradients are summed in chunk order, so results do not depend on
//! the thread count.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, WindowSample};
use crate::error::{Error, Result};
use crate::geometry::ChannelTable;
use crate::nn::{Checkpoint, Grads, NetInput, PortLlm, Real, Tensor, TrainState};
use crate::ports::select_port_single;
use crate::seed::rng_for;

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    /// Warmup length as a fraction of all optimizer steps.
    pub warmup_fraction: f64,
    /// Final learning rate as a fraction of `peak_lr`.
    pub min_lr_fraction: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    /// Write a checkpoint every this many epochs (0: only final and best).
    pub checkpoint_every: usize,
    /// Samples per parallel work unit. Part of the numerical definition of a
    /// step: changing it changes summation order.
    pub chunk_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 4,
            peak_lr: 2e-3,
            warmup_fraction: 0.05,
            min_lr_fraction: 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 1.0,
            checkpoint_every: 5,
            chunk_size: 2,
        }
    }
}

impl TrainConfig {
    pub fn full_scale() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 64,
            peak_lr: 1e-3,
            checkpoint_every: 25,
            chunk_size: 8,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |f: &str, r: &str| Err(Error::config(format!("train.{f}"), r));
        if self.epochs == 0 {
            return err("epochs", "must be >= 1");
        }
        if self.batch_size == 0 {
            return err("batch_size", "must be >= 1");
        }
        if self.chunk_size == 0 {
            return err("chunk_size", "must be >= 1");
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return err("peak_lr", "must be > 0");
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return err("warmup_fraction", "must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.min_lr_fraction) {
            return err("min_lr_fraction", "min LR must not exceed the peak");
        }
        if !((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2)) {
            return err("adam_beta1", "betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return err("adam_eps", "must be > 0");
        }
        if !(self.grad_clip >= 0.0) {
            return err("grad_clip", "must be >= 0");
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, train_samples: usize) -> usize {
        train_samples.div_ceil(self.batch_size)
    }

    pub fn schedule(&self, train_samples: usize) -> LrSchedule {
        let total = self.epochs * self.steps_per_epoch(train_samples);
        LrSchedule {
            peak: self.peak_lr,
            min: self.peak_lr * self.min_lr_fraction,
            warmup: (self.warmup_fraction * total as f64).round() as usize,
            total,
        }
    }
}

/// Linear warmup from 0 to `peak`, then cosine decay to `min` at `total`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub peak: f64,
    pub min: f64,
    pub warmup: usize,
    pub total: usize,
}

impl LrSchedule {
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup {
            return self.peak * step as f64 / self.warmup as f64;
        }
        if self.total <= self.warmup {
            return self.peak;
        }
        let x = (step.min(self.total) - self.warmup) as f64 / (self.total - self.warmup) as f64;
        self.min + 0.5 * (self.peak - self.min) * (1.0 + (std::f64::consts::PI * x).cos())
    }
}

fn energy(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// `||S - S_hat||^2 / ||S||^2` over all entries.
pub fn loss_nmse(s_hat: &[Complex64], s: &[Complex64]) -> Result<f64> {
    if s_hat.len() != s.len() {
        return Err(Error::InvalidInput(format!("{} predictions for {} targets", s_hat.len(), s.len())));
    }
    let den = energy(s);
    if !(den > 0.0) {
        return Err(Error::DegenerateTarget("target tables have zero energy".into()));
    }
    let num: f64 = s.iter().zip(s_hat).map(|(a, b)| (a - b).norm_sqr()).sum();
    Ok(num / den)
}

/// `||h_ref - h||^2 / ||h_ref||^2`.
pub fn validate_port(h: &[Complex64], h_ref: &[Complex64]) -> Result<f64> {
    if h.len() != h_ref.len() {
        return Err(Error::InvalidInput(format!("{} vs {} antennas", h.len(), h_ref.len())));
    }
    let den = energy(h_ref);
    if !(den > 0.0) {
        return Err(Error::DegenerateTarget("reference channel has zero energy".into()));
    }
    Ok(h.iter().zip(h_ref).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() / den)
}

fn future_f64(s: &WindowSample) -> Vec<Complex64> {
    s.future().iter().map(|z| Complex64::new(z.re as f64, z.im as f64)).collect()
}

/// Summed per-sample NMSE of `samples` and its gradient, scaled by `1/denom`
/// (the full batch size) so chunk gradients add up to the batch-mean gradient.
pub fn chunk_loss_and_grad<R: Real>(
    model: &PortLlm<R>,
    samples: &[&WindowSample],
    denom: usize,
) -> Result<(f64, Grads<R>)> {
    let inputs: Vec<NetInput<R>> = samples.iter().map(|s| NetInput::from_sample(s)).collect();
    let (y, cache) = model.forward(&inputs)?;
    let p = model.config().ports();
    let per = model.config().horizon * 2 * p;
    let mut dy = vec![R::zero(); y.len()];
    let mut total = 0.0;
    for (b, s) in samples.iter().enumerate() {
        let stats = s.stats();
        let target = future_f64(s);
        let den = energy(&target);
        if !(den > 0.0) {
            return Err(Error::DegenerateTarget(format!("sample {:?} has a zero future", s.meta)));
        }
        let ys = &y[b * per..(b + 1) * per];
        let pred = model.project_output(ys, &stats);
        total += loss_nmse(&pred, &target)?;
        let scale = 2.0 * stats.sigma / den / denom as f64;
        for (f, row) in dy[b * per..(b + 1) * per].chunks_exact_mut(2 * p).enumerate() {
            for j in 0..p {
                let e = pred[f * p + j] - target[f * p + j];
                row[j] = R::cast_f64(scale * e.re);
                row[p + j] = R::cast_f64(scale * e.im);
            }
        }
    }
    let mut grads = model.zero_grads();
    model.backward(&cache, &dy, &mut grads);
    Ok((total, grads))
}

/// Mean NMSE loss and its gradient over `samples`, chunked and reduced in order.
pub fn batch_loss_and_grad<R: Real>(
    model: &PortLlm<R>,
    samples: &[&WindowSample],
    chunk_size: usize,
) -> Result<(f64, Grads<R>)> {
    let parts: Vec<Result<(f64, Grads<R>)>> = samples
        .par_chunks(chunk_size)
        .map(|c| chunk_loss_and_grad(model, c, samples.len()))
        .collect();
    let mut loss = 0.0;
    let mut grads = model.zero_grads();
    for part in parts {
        let (l, g) = part?;
        loss += l;
        grads.add_assign(&g);
    }
    Ok((loss / samples.len() as f64, grads))
}

/// Adam with bias correction, updating only trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(model: &PortLlm<f32>, cfg: &TrainConfig) -> Self {
        let zeros: Vec<Vec<f32>> = model
            .tensors()
            .iter()
            .map(|t| if t.frozen { Vec::new() } else { vec![0.0; t.data.len()] })
            .collect();
        Adam {
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, model: &mut PortLlm<f32>, grads: &Grads<f32>, lr: f64) {
        self.t += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = (lr / c1) as f32;
        let c2s = c2.sqrt() as f32;
        let eps = self.eps as f32;
        for (i, t) in model.tensors_mut().iter_mut().enumerate() {
            if t.frozen {
                continue;
            }
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads.bufs[i]);
            for j in 0..t.data.len() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                t.data[j] -= step * m[j] / (v[j].sqrt() / c2s + eps);
            }
        }
    }

    /// Moments as named tensors for checkpointing.
    pub fn to_tensors(&self, model: &PortLlm<f32>) -> Vec<Tensor<f32>> {
        let mut out = Vec::new();
        for (i, t) in model.tensors().iter().enumerate().filter(|(_, t)| !t.frozen) {
            for (tag, buf) in [("m", &self.m[i]), ("v", &self.v[i])] {
                out.push(Tensor {
                    name: format!("adam.{tag}.{}", t.name),
                    shape: t.shape.clone(),
                    frozen: false,
                    data: buf.clone(),
                });
            }
        }
        out
    }

    pub fn from_tensors(model: &PortLlm<f32>, cfg: &TrainConfig, t: u64, extra: &[Tensor<f32>]) -> Result<Self> {
        let mut adam = Adam::new(model, cfg);
        adam.t = t;
        for (i, p) in model.tensors().iter().enumerate().filter(|(_, p)| !p.frozen) {
            for tag in ["m", "v"] {
                let name = format!("adam.{tag}.{}", p.name);
                let src = extra
                    .iter()
                    .find(|e| e.name == name && e.data.len() == p.data.len())
                    .ok_or_else(|| Error::Data(format!("checkpoint lacks optimizer state `{name}`")))?;
                let dst = if tag == "m" { &mut adam.m[i] } else { &mut adam.v[i] };
                dst.copy_from_slice(&src.data);
            }
        }
        Ok(adam)
    }
}

/// One row of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Optimizer steps completed at the end of the epoch.
    pub step: usize,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    /// Mean training loss over the epoch (linear).
    pub train_nmse: f64,
    /// Port-selection validation loss on the test split (linear).
    pub val_nmse_v: f64,
    /// Table NMSE on the test split (linear).
    pub val_nmse_t: f64,
}

pub fn write_metrics_csv<W: Write>(mut out: W, records: &[EpochRecord]) -> Result<()> {
    writeln!(out, "epoch,step,lr,train_nmse,val_nmse_v")?;
    for r in records {
        writeln!(out, "{},{},{:.9e},{:.9e},{:.9e}", r.epoch, r.step, r.lr, r.train_nmse, r.val_nmse_v)?;
    }
    Ok(())
}

/// Validation summary of a model on a set of windows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Validation {
    pub nmse_t: f64,
    pub nmse_v: f64,
}

/// Mean table NMSE and mean port-selection loss over `samples`. The port for
/// each future step is chosen on the predicted table against the broadcast
/// reference; the true channel at that port is scored against the reference.
pub fn validate<R: Real>(model: &PortLlm<R>, samples: &[&WindowSample], chunk_size: usize) -> Result<Validation> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("empty validation set".into()));
    }
    let parts: Vec<Result<(f64, f64)>> = samples
        .par_chunks(chunk_size)
        .map(|chunk| {
            let preds = model.predict_samples(chunk)?;
            let (mut t_sum, mut v_sum) = (0.0, 0.0);
            for (s, pred) in chunk.iter().zip(&preds) {
                t_sum += loss_nmse(pred, &future_f64(s))?;
                v_sum += window_port_loss(s, pred)?;
            }
            Ok((t_sum, v_sum))
        })
        .collect();
    let (mut t, mut v) = (0.0, 0.0);
    for p in parts {
        let (a, b) = p?;
        t += a;
        v += b;
    }
    let n = samples.len() as f64;
    Ok(Validation {
        nmse_t: t / n,
        nmse_v: v / n,
    })
}

/// Port-selection loss of one window, averaged over its future steps.
pub fn window_port_loss(sample: &WindowSample, pred: &[Complex64]) -> Result<f64> {
    let (n, m) = sample.dims();
    let np = n * m;
    let h_ref = sample.reference();
    let ref_table = ChannelTable::filled(n, m, h_ref);
    let mut acc = 0.0;
    for f in 0..sample.horizon() {
        let table = ChannelTable::from_vec(n, m, pred[f * np..(f + 1) * np].to_vec())?;
        let port = select_port_single(&table, &ref_table)?;
        let h = sample.future_table(f).get(port);
        acc += validate_port(&[h], &[h_ref])?;
    }
    Ok(acc / sample.horizon() as f64)
}

/// Training driver; owns the model and optimizer between epochs.
#[derive(Debug, Clone)]
pub struct Trainer<'a> {
    pub model: PortLlm<f32>,
    adam: Adam,
    cfg: TrainConfig,
    dataset: &'a Dataset,
    dataset_hash: String,
    seed: u64,
    epoch: usize,
    step: usize,
    schedule: LrSchedule,
    pub best_val_nmse_v: Option<f64>,
}

impl<'a> Trainer<'a> {
    pub fn new(model: PortLlm<f32>, dataset: &'a Dataset, cfg: &TrainConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if dataset.split.train.is_empty() {
            return Err(Error::Data("training split is empty".into()));
        }
        let dims = dataset.dims();
        let net = model.config();
        if [dims.0, dims.1] != net.grid
            || dataset.scenario.history != net.history
            || dataset.scenario.horizon != net.horizon
        {
            return Err(Error::Data(format!(
                "dataset windows ({}x{}, T={}, F={}) do not fit the net ({:?}, T={}, F={})",
                dims.0, dims.1, dataset.scenario.history, dataset.scenario.horizon, net.grid, net.history, net.horizon
            )));
        }
        Ok(Trainer {
            adam: Adam::new(&model, cfg),
            schedule: cfg.schedule(dataset.split.train.len()),
            model,
            cfg: cfg.clone(),
            dataset,
            dataset_hash: crate::dataset::dataset_hash(&dataset.channel, &dataset.scenario, dataset.seed),
            seed,
            epoch: 0,
            step: 0,
            best_val_nmse_v: None,
        })
    }

    /// Continue from a checkpoint written by [`Trainer::checkpoint_parts`].
    pub fn resume(ck: Checkpoint, dataset: &'a Dataset, cfg: &TrainConfig) -> Result<Self> {
        let state = ck
            .state
            .ok_or_else(|| Error::Data("checkpoint has no training state".into()))?;
        let mut tr = Trainer::new(ck.model, dataset, cfg, state.seed)?;
        if state.dataset_hash != tr.dataset_hash {
            return Err(Error::Data(format!(
                "checkpoint was trained on dataset {}, not {}",
                state.dataset_hash, tr.dataset_hash
            )));
        }
        tr.adam = Adam::from_tensors(&tr.model, cfg, state.step as u64, &ck.extra)?;
        tr.epoch = state.epoch;
        tr.step = state.step;
        tr.best_val_nmse_v = state.best_val_nmse_v;
        Ok(tr)
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn schedule(&self) -> LrSchedule {
        self.schedule
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.cfg.epochs
    }

    pub fn state(&self) -> TrainState {
        TrainState {
            epoch: self.epoch,
            step: self.step,
            seed: self.seed,
            dataset_hash: self.dataset_hash.clone(),
            best_val_nmse_v: self.best_val_nmse_v,
        }
    }

    /// Model, state and optimizer tensors for [`crate::nn::save_checkpoint`].
    pub fn checkpoint_parts(&self) -> (&PortLlm<f32>, TrainState, Vec<Tensor<f32>>) {
        (&self.model, self.state(), self.adam.to_tensors(&self.model))
    }

    /// One optimizer step on the given training-set indices.
    pub fn train_step(&mut self, batch: &[usize]) -> Result<f64> {
        let samples: Vec<&WindowSample> = batch.iter().map(|&i| &self.dataset.samples[i]).collect();
        let (loss, mut grads) = batch_loss_and_grad(&self.model, &samples, self.cfg.chunk_size)?;
        let norm = grads.global_norm();
        if !loss.is_finite() || !norm.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss {loss} / gradient norm {norm} at epoch {} step {}",
                self.epoch + 1,
                self.step
            )));
        }
        if self.cfg.grad_clip > 0.0 && norm > self.cfg.grad_clip {
            grads.scale((self.cfg.grad_clip / norm) as f32);
        }
        let lr = self.schedule.lr_at(self.step);
        self.adam.step(&mut self.model, &grads, lr);
        self.step += 1;
        Ok(loss)
    }

    /// Shuffle (seeded by epoch), run every batch, then validate on the test split.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let mut order = self.dataset.split.train.clone();
        order.shuffle(&mut rng_for(self.seed, "shuffle", &[self.epoch as u64]));
        let mut weighted = 0.0;
        let mut lr = 0.0;
        for batch in order.chunks(self.cfg.batch_size) {
            lr = self.schedule.lr_at(self.step);
            weighted += self.train_step(batch)? * batch.len() as f64;
        }
        self.epoch += 1;
        let val_set: Vec<&WindowSample> = if self.dataset.split.test.is_empty() {
            self.dataset.train_samples().collect()
        } else {
            self.dataset.test_samples().collect()
        };
        let val = validate(&self.model, &val_set, self.cfg.chunk_size)?;
        Ok(EpochRecord {
            epoch: self.epoch,
            step: self.step,
            lr,
            train_nmse: weighted / order.len() as f64,
            val_nmse_v: val.nmse_v,
            val_nmse_t: val.nmse_t,
        })
    }
}

/// Train to completion without checkpoints; returns the model and the log.
pub fn train(
    model: PortLlm<f32>,
    dataset: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(PortLlm<f32>, Vec<EpochRecord>)> {
    let mut tr = Trainer::new(model, dataset, cfg, seed)?;
    let mut log = Vec::new();
    while !tr.is_done() {
        log.push(tr.run_epoch()?);
    }
    Ok((tr.model, log))
}

pub fn write_metrics_file(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, records)?;
    std::fs::write(path, buf)?;
    Ok(())
}
