//! Minibatch optimisation: Adam, plateau LR halving, early stopping, and the
//! two-stage schedule (plain TF-loss, then adaptive focal re-weighting).

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, Condition, Manifest, Waveform};
use crate::dsp::{Spectrogram, Stft};
use crate::error::{Error, Result};
use crate::losses::{aft_loss, tf_loss, AftOptions, BatchLossReport};
use crate::model::{self, backward, backward_embedding, embed_from_features, enrollment_features, ModelParams};
use crate::prep::{dac, DacConfig};
use crate::scalar::{mean, Real};

/// Sample rate every training pipeline runs at.
pub const TRAIN_SAMPLE_RATE: u32 = 8000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    pub patience_epochs: usize,
    /// Halvings without validation improvement before stage 1 stops.
    pub max_decays: usize,
    pub stage1_max_epochs: usize,
    pub stage2_max_epochs: usize,
    /// Stage 2 stops after `stage2_patience` epochs improving by less than this.
    pub stage2_min_delta: f64,
    pub stage2_patience: usize,
    /// Overrides the learning rate stage 2 starts from.
    pub stage2_lr: Option<f64>,
    /// Disables z-score clamping in the focal weights.
    pub unclamped: bool,
    pub seed: u64,
    pub dac_enabled: bool,
    pub dac_j: usize,
    pub dac_k: usize,
    /// Worker threads; 1 is the strict single-threaded mode.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            lr0: 0.001,
            lr_decay: 0.5,
            patience_epochs: 3,
            max_decays: 3,
            stage1_max_epochs: 50,
            stage2_max_epochs: 19,
            stage2_min_delta: 1e-4,
            stage2_patience: 3,
            stage2_lr: None,
            unclamped: false,
            seed: 0,
            dac_enabled: false,
            dac_j: 4,
            dac_k: 2,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid("batch_size must be at least 2"));
        }
        if self.stage2_max_epochs >= 20 {
            return Err(Error::invalid(format!("stage2_max_epochs {} must stay below 20", self.stage2_max_epochs)));
        }
        if !(self.lr0 > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay < 1.0) {
            return Err(Error::invalid("lr0 must be positive and lr_decay in (0, 1)"));
        }
        if self.dac_enabled && self.dac_j + self.dac_k == 0 {
            return Err(Error::invalid("DAC needs j + k ≥ 1"));
        }
        Ok(())
    }

    pub fn dac_config(&self, hop: usize) -> Option<DacConfig> {
        self.dac_enabled.then(|| DacConfig::new(self.dac_j, self.dac_k, hop))
    }

    fn aft_options(&self) -> AftOptions {
        AftOptions { clamp: !self.unclamped, ..AftOptions::default() }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize) -> Self {
        Self { m: vec![T::zero(); len], v: vec![T::zero(); len], step: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update. Rejects non-finite gradients without
/// touching the parameters.
pub fn adam_step<T: Real>(params: &mut [T], grads: &[T], state: &mut AdamState<T>, lr: f64) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::invalid(format!(
            "adam shapes: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {i} is {}", grads[i])));
    }
    state.step += 1;
    let b1 = T::of(state.beta1);
    let b2 = T::of(state.beta2);
    let bc1 = T::one() - T::of(state.beta1.powi(state.step as i32));
    let bc2 = T::one() - T::of(state.beta2.powi(state.step as i32));
    let lr = T::of(lr);
    let eps = T::of(state.eps);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + (T::one() - b1) * g;
        *v = b2 * *v + (T::one() - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// One loaded record.
#[derive(Debug, Clone)]
pub struct Example<T> {
    pub id: String,
    pub condition: Condition,
    pub noisy: Waveform<T>,
    pub clean: Waveform<T>,
    pub enroll: Waveform<T>,
}

/// Loads every readable record; unreadable ones are skipped with a warning
/// and returned by id.
pub fn load_examples<T: Real>(manifest: &Manifest) -> (Vec<Example<T>>, Vec<String>) {
    let mut out = Vec::with_capacity(manifest.len());
    let mut skipped = Vec::new();
    for rec in &manifest.records {
        let id = rec.record_id();
        let load = || -> Result<Example<T>> {
            let noisy = read_wav(manifest.resolve(&rec.noisy))?;
            let clean = read_wav(manifest.resolve(&rec.clean))?;
            let enroll = read_wav(manifest.resolve(&rec.enroll))?;
            Ok(Example { id: id.clone(), condition: rec.condition, noisy, clean, enroll })
        };
        match load() {
            Ok(ex) => out.push(ex),
            Err(e) => {
                log::warn!("skipping record {id}: {e}");
                skipped.push(id);
            }
        }
    }
    (out, skipped)
}

/// Model-ready view of one record.
#[derive(Debug, Clone)]
pub struct PreparedExample<T> {
    pub id: String,
    pub condition: Condition,
    pub noisy_spec: Spectrogram<T>,
    pub clean_spec: Spectrogram<T>,
    pub clean: Waveform<T>,
    /// Enrollment actually embedded (compensated when DAC is on).
    pub enroll: Waveform<T>,
    pub enroll_features: Vec<T>,
}

fn prepare_one<T: Real>(ex: &Example<T>, dac_cfg: Option<&DacConfig>, stft: &Stft<T>) -> Result<PreparedExample<T>> {
    if ex.noisy.sample_rate != TRAIN_SAMPLE_RATE {
        return Err(Error::invalid(format!(
            "record {}: {} Hz audio, training runs at {} Hz",
            ex.id, ex.noisy.sample_rate, TRAIN_SAMPLE_RATE
        )));
    }
    if ex.noisy.len() != ex.clean.len() {
        return Err(Error::invalid(format!("record {}: noisy and clean lengths differ", ex.id)));
    }
    ex.noisy.ensure_same_rate(&ex.clean)?;
    let enroll = match dac_cfg {
        Some(cfg) => dac(&ex.enroll, &ex.noisy, cfg)?,
        None => ex.enroll.clone(),
    };
    Ok(PreparedExample {
        id: ex.id.clone(),
        condition: ex.condition,
        noisy_spec: stft.analyze(&ex.noisy)?,
        clean_spec: stft.analyze(&ex.clean)?,
        clean: ex.clean.clone(),
        enroll_features: enrollment_features(&enroll, stft)?,
        enroll,
    })
}

/// Builds model inputs for a batch. With DAC on, each enrollment is
/// compensated with its own record's noisy input.
pub fn assemble_batch<T: Real>(examples: &[&Example<T>], dac_cfg: Option<&DacConfig>, stft: &Stft<T>) -> Result<Vec<PreparedExample<T>>> {
    examples.iter().map(|ex| prepare_one(ex, dac_cfg, stft)).collect()
}

pub fn prepare_dataset<T: Real>(examples: &[Example<T>], cfg: &TrainConfig, stft: &Stft<T>) -> Result<Vec<PreparedExample<T>>> {
    let dac_cfg = cfg.dac_config(stft.config().hop);
    with_threads(cfg.threads, || {
        examples.par_iter().map(|ex| prepare_one(ex, dac_cfg.as_ref(), stft)).collect()
    })
}

fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build().expect("thread pool");
    pool.install(f)
}

#[derive(Debug, Clone)]
pub struct SampleGrad<T> {
    pub loss: T,
    pub neg_sisnr: T,
    pub mse: T,
    pub grads: Vec<T>,
}

/// End-to-end TF-loss of one example and its gradient over all parameters.
pub fn sample_loss_and_grad<T: Real>(params: &ModelParams<T>, stft: &Stft<T>, ex: &PreparedExample<T>) -> Result<SampleGrad<T>> {
    let (emb, ecache) = embed_from_features(&ex.enroll_features, params)?;
    let out = model::forward(&ex.noisy_spec, &emb, params)?;
    let est_wave = stft.synthesize(&out.est_spec)?;
    let tf = tf_loss(stft, &out.est_spec, &ex.clean_spec, &est_wave, &ex.clean)?;
    let mut g = backward(&out.cache, &tf.grad, params)?;
    backward_embedding(&ecache, &g.embedding, params, &mut g.params)?;
    Ok(SampleGrad { loss: tf.loss, neg_sisnr: tf.neg_sisnr, mse: tf.mse, grads: g.params })
}

pub fn sample_loss<T: Real>(params: &ModelParams<T>, stft: &Stft<T>, ex: &PreparedExample<T>) -> Result<T> {
    let (emb, _) = embed_from_features(&ex.enroll_features, params)?;
    let out = model::forward(&ex.noisy_spec, &emb, params)?;
    let est_wave = stft.synthesize(&out.est_spec)?;
    Ok(tf_loss(stft, &out.est_spec, &ex.clean_spec, &est_wave, &ex.clean)?.loss)
}

/// Enhanced waveform for a prepared example.
pub fn enhance_prepared<T: Real>(params: &ModelParams<T>, stft: &Stft<T>, ex: &PreparedExample<T>) -> Result<Waveform<T>> {
    let (emb, _) = embed_from_features(&ex.enroll_features, params)?;
    stft.synthesize(&model::forward(&ex.noisy_spec, &emb, params)?.est_spec)
}

/// Mean TF-loss over a dataset.
pub fn mean_loss<T: Real>(params: &ModelParams<T>, stft: &Stft<T>, data: &[PreparedExample<T>], threads: usize) -> Result<T> {
    let losses: Vec<T> = with_threads(threads, || {
        data.par_iter().map(|ex| sample_loss(params, stft, ex)).collect::<Result<Vec<_>>>()
    })?;
    Ok(mean(&losses))
}

/// Plain-mean report: aggregate = mean, every coefficient 1/B.
pub fn mean_report<T: Real>(per_sample_tf: &[T]) -> BatchLossReport<T> {
    let b = T::of_usize(per_sample_tf.len().max(1));
    BatchLossReport {
        per_sample_tf: per_sample_tf.to_vec(),
        mu: mean(per_sample_tf),
        sigma: T::zero(),
        weights: vec![T::one() / b; per_sample_tf.len()],
        aggregate: mean(per_sample_tf),
        fallback: true,
        coefficients: vec![T::one() / b; per_sample_tf.len()],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Plain TF-loss.
    Tf,
    /// Adaptive focal re-weighting.
    Aft,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::Tf => 1,
            Stage::Aft => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochRecord<T> {
    pub epoch: usize,
    pub stage: Stage,
    /// Mean per-sample TF-loss over the epoch's batches.
    pub train_loss: f64,
    /// Mean optimised aggregate (equals `train_loss` in stage 1).
    pub train_aggregate: f64,
    pub val_loss: f64,
    pub lr: f64,
    /// Focal weighting of every batch (stage 2 only).
    pub reports: Vec<BatchLossReport<T>>,
    pub batch_ids: Vec<Vec<String>>,
}

/// Epoch-level learning-rate schedule with plateau halving.
#[derive(Debug, Clone)]
pub struct PlateauSchedule {
    pub lr: f64,
    pub best: f64,
    decay: f64,
    patience: usize,
    max_decays: usize,
    bad_epochs: usize,
    decays_since_best: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleStep {
    pub improved: bool,
    pub decayed: bool,
    pub stop: bool,
}

impl PlateauSchedule {
    pub fn new(lr: f64, decay: f64, patience: usize, max_decays: usize) -> Self {
        Self { lr, best: f64::INFINITY, decay, patience, max_decays, bad_epochs: 0, decays_since_best: 0 }
    }

    /// Feeds one validation loss; the returned LR applies to the next epoch.
    pub fn observe(&mut self, val: f64) -> ScheduleStep {
        if val < self.best {
            self.best = val;
            self.bad_epochs = 0;
            self.decays_since_best = 0;
            return ScheduleStep { improved: true, decayed: false, stop: false };
        }
        self.bad_epochs += 1;
        if self.bad_epochs < self.patience {
            return ScheduleStep { improved: false, decayed: false, stop: false };
        }
        self.bad_epochs = 0;
        self.lr *= self.decay;
        self.decays_since_best += 1;
        ScheduleStep { improved: false, decayed: true, stop: self.decays_since_best >= self.max_decays }
    }
}

#[derive(Debug, Clone)]
pub struct StageOutcome<T> {
    /// Best-validation parameters.
    pub params: ModelParams<T>,
    pub history: Vec<EpochRecord<T>>,
    pub best_val: f64,
    /// LR in force when the stage ended.
    pub final_lr: f64,
    /// Set when training stopped on a non-finite loss or gradient.
    pub aborted: Option<String>,
}

fn epoch_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    // A trailing singleton has no batch statistics; fold it into its neighbour.
    if batches.len() > 1 && batches.last().map_or(false, |b| b.len() < 2) {
        let last = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(last);
    }
    batches
}

struct EpochResult<T> {
    train_loss: f64,
    train_aggregate: f64,
    reports: Vec<BatchLossReport<T>>,
    batch_ids: Vec<Vec<String>>,
}

/// One pass over `batches`, updating `params` in place.
fn run_epoch<T: Real>(
    params: &mut ModelParams<T>,
    adam: &mut AdamState<T>,
    stft: &Stft<T>,
    data: &[PreparedExample<T>],
    batches: &[Vec<usize>],
    stage: Stage,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<EpochResult<T>> {
    let mut losses_all = Vec::new();
    let mut aggregates = Vec::new();
    let mut reports = Vec::new();
    let mut batch_ids = Vec::new();
    for batch in batches {
        let results: Vec<SampleGrad<T>> = {
            let p: &ModelParams<T> = params;
            with_threads(cfg.threads, || {
                batch.par_iter().map(|&i| sample_loss_and_grad(p, stft, &data[i])).collect::<Result<Vec<_>>>()
            })?
        };
        let losses: Vec<T> = results.iter().map(|r| r.loss).collect();
        if let Some(i) = losses.iter().position(|l| !l.is_finite()) {
            return Err(Error::NonFinite(format!("loss of record {}", data[batch[i]].id)));
        }
        let report = match stage {
            Stage::Tf => mean_report(&losses),
            Stage::Aft => aft_loss(&losses, cfg.aft_options())?,
        };
        let grads: Vec<Vec<T>> = results.into_iter().map(|r| r.grads).collect();
        let combined = report.combine(&grads)?;
        adam_step(&mut params.values, &combined, adam, lr)?;
        losses_all.extend(losses.iter().map(|l| l.to_f64_lossy()));
        aggregates.push(report.aggregate.to_f64_lossy());
        if stage == Stage::Aft {
            batch_ids.push(batch.iter().map(|&i| data[i].id.clone()).collect());
            reports.push(report);
        }
    }
    Ok(EpochResult {
        train_loss: mean(&losses_all),
        train_aggregate: mean(&aggregates),
        reports,
        batch_ids,
    })
}

fn check_data<T>(train: &[PreparedExample<T>], val: &[PreparedExample<T>]) -> Result<()> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("training and validation sets must be non-empty"));
    }
    if train.len() < 2 {
        return Err(Error::invalid("need at least two training records for batch statistics"));
    }
    Ok(())
}

fn shuffle_rng(seed: u64, stage: Stage) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(stage.number() as u64)))
}

/// Stage 1: TF-loss minibatch training with plateau halving and early stop.
pub fn train_stage1<T: Real>(
    init: ModelParams<T>,
    stft: &Stft<T>,
    train: &[PreparedExample<T>],
    val: &[PreparedExample<T>],
    cfg: &TrainConfig,
) -> Result<StageOutcome<T>> {
    cfg.validate()?;
    check_data(train, val)?;
    let mut params = init;
    let mut best = params.clone();
    let mut adam = AdamState::new(params.count());
    let mut schedule = PlateauSchedule::new(cfg.lr0, cfg.lr_decay, cfg.patience_epochs, cfg.max_decays);
    let mut rng = shuffle_rng(cfg.seed, Stage::Tf);
    let mut history = Vec::new();
    let mut aborted = None;
    for epoch in 1..=cfg.stage1_max_epochs {
        let lr = schedule.lr;
        let batches = epoch_batches(train.len(), cfg.batch_size, &mut rng);
        let result = match run_epoch(&mut params, &mut adam, stft, train, &batches, Stage::Tf, lr, cfg) {
            Ok(r) => r,
            Err(e @ Error::NonFinite(_)) => {
                aborted = Some(format!("epoch {epoch}: {e}"));
                break;
            }
            Err(e) => return Err(e),
        };
        let val_loss = mean_loss(&params, stft, val, cfg.threads)?.to_f64_lossy();
        if !val_loss.is_finite() {
            aborted = Some(format!("epoch {epoch}: validation loss {val_loss}"));
            break;
        }
        log::info!("stage 1 epoch {epoch}: train {:.4} val {val_loss:.4} lr {lr:e}", result.train_loss);
        history.push(EpochRecord {
            epoch,
            stage: Stage::Tf,
            train_loss: result.train_loss,
            train_aggregate: result.train_aggregate,
            val_loss,
            lr,
            reports: Vec::new(),
            batch_ids: Vec::new(),
        });
        let step = schedule.observe(val_loss);
        if step.improved {
            best = params.clone();
        }
        if step.stop {
            break;
        }
    }
    Ok(StageOutcome { params: best, history, best_val: schedule.best, final_lr: schedule.lr, aborted })
}

/// Stage 2: continue from a stage-1 model with the adaptive focal aggregate.
///
/// Validation stays plain mean TF-loss. Stops after `stage2_patience`
/// epochs improving by less than `stage2_min_delta`, or at
/// `stage2_max_epochs` (always < 20).
pub fn train_stage2<T: Real>(
    init: ModelParams<T>,
    stft: &Stft<T>,
    train: &[PreparedExample<T>],
    val: &[PreparedExample<T>],
    cfg: &TrainConfig,
    start_lr: f64,
) -> Result<StageOutcome<T>> {
    cfg.validate()?;
    check_data(train, val)?;
    let mut params = init;
    let mut best = params.clone();
    let mut adam = AdamState::new(params.count());
    let lr0 = cfg.stage2_lr.unwrap_or(start_lr);
    let mut schedule = PlateauSchedule::new(lr0, cfg.lr_decay, cfg.patience_epochs, usize::MAX);
    let mut rng = shuffle_rng(cfg.seed, Stage::Aft);
    let mut history = Vec::new();
    let mut aborted = None;
    let mut stalled = 0;
    let mut best_val = f64::INFINITY;
    let mut best_epoch = None;
    for epoch in 1..=cfg.stage2_max_epochs {
        assert!(epoch < 20, "stage 2 must stay below 20 epochs");
        let lr = schedule.lr;
        let batches = epoch_batches(train.len(), cfg.batch_size, &mut rng);
        let result = match run_epoch(&mut params, &mut adam, stft, train, &batches, Stage::Aft, lr, cfg) {
            Ok(r) => r,
            Err(e @ Error::NonFinite(_)) => {
                aborted = Some(format!("epoch {epoch}: {e}"));
                break;
            }
            Err(e) => return Err(e),
        };
        let val_loss = mean_loss(&params, stft, val, cfg.threads)?.to_f64_lossy();
        if !val_loss.is_finite() {
            aborted = Some(format!("epoch {epoch}: validation loss {val_loss}"));
            break;
        }
        log::info!(
            "stage 2 epoch {epoch}: train {:.4} (aft {:.4}) val {val_loss:.4} lr {lr:e}",
            result.train_loss,
            result.train_aggregate
        );
        history.push(EpochRecord {
            epoch,
            stage: Stage::Aft,
            train_loss: result.train_loss,
            train_aggregate: result.train_aggregate,
            val_loss,
            lr,
            reports: result.reports,
            batch_ids: result.batch_ids,
        });
        if best_val - val_loss >= cfg.stage2_min_delta {
            stalled = 0;
        } else {
            stalled += 1;
        }
        if val_loss < best_val {
            best_val = val_loss;
            best = params.clone();
            best_epoch = Some(epoch);
        }
        schedule.observe(val_loss);
        if stalled >= cfg.stage2_patience {
            break;
        }
    }
    log::debug!("stage 2 best epoch {best_epoch:?}");
    Ok(StageOutcome { params: best, history, best_val, final_lr: schedule.lr, aborted })
}

/// `epoch,stage,train_loss,val_loss,lr` rows.
pub fn write_history_csv<T>(path: impl AsRef<Path>, history: &[EpochRecord<T>]) -> Result<()> {
    let path = path.as_ref();
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let io = |e| Error::io(path, e);
    writeln!(out, "epoch,stage,train_loss,val_loss,lr").map_err(io)?;
    for r in history {
        writeln!(out, "{},{},{},{},{}", r.epoch, r.stage.number(), r.train_loss, r.val_loss, r.lr).map_err(io)?;
    }
    out.flush().map_err(io)
}

/// `epoch,batch,sample_id,l_tf,weight` rows for every focal batch report.
pub fn write_batch_reports_csv<T: Real>(path: impl AsRef<Path>, history: &[EpochRecord<T>]) -> Result<()> {
    let path = path.as_ref();
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let io = |e| Error::io(path, e);
    writeln!(out, "epoch,batch,sample_id,l_tf,weight").map_err(io)?;
    for r in history {
        for (b, (report, ids)) in r.reports.iter().zip(&r.batch_ids).enumerate() {
            for ((l, w), id) in report.per_sample_tf.iter().zip(&report.weights).zip(ids) {
                writeln!(out, "{},{b},{id},{l},{w}", r.epoch).map_err(io)?;
            }
        }
    }
    out.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::StftConfig;
    use crate::model::ModelDims;
    use rand::Rng;

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = vec![0.5f64, -1.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, 0.01).unwrap();
        assert_eq!(p, vec![0.5, -1.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        for g in [1e-3, 0.5, -3.0, 100.0] {
            let mut p = vec![0.0f64];
            let mut s = AdamState::new(1);
            adam_step(&mut p, &[g], &mut s, 0.001).unwrap();
            let d = p[0].abs();
            assert!(d <= 0.001 && d >= 0.99 * 0.001 * g.abs() / (g.abs() + 1e-8));
            assert_eq!(p[0].signum(), -g.signum());
        }
    }

    #[test]
    fn adam_two_step_trace() {
        // Hand recursion for g = 1 twice.
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.001);
        let mut expected = 0.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1);
            v = b2 * v + (1.0 - b2);
            expected -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        }
        let mut p = vec![0.0f64];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, lr).unwrap();
        adam_step(&mut p, &[1.0], &mut s, lr).unwrap();
        assert!((p[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut p = vec![1.0f64, 2.0];
        let mut s = AdamState::new(2);
        assert!(adam_step(&mut p, &[f64::NAN, 0.0], &mut s, 0.1).is_err());
        assert_eq!(p, vec![1.0, 2.0]);
        assert_eq!(s.step, 0);
    }

    #[test]
    fn schedule_never_decays_while_improving() {
        let mut s = PlateauSchedule::new(1e-3, 0.5, 3, 3);
        for i in 0..20 {
            let step = s.observe(10.0 - i as f64);
            assert!(step.improved && !step.decayed);
        }
        assert_eq!(s.lr, 1e-3);
    }

    #[test]
    fn schedule_first_decay_after_epoch_four() {
        let mut s = PlateauSchedule::new(1e-3, 0.5, 3, 3);
        let steps: Vec<ScheduleStep> = (0..10).map(|_| s.observe(5.0)).collect();
        let decays: Vec<usize> = steps.iter().enumerate().filter(|(_, st)| st.decayed).map(|(i, _)| i + 1).collect();
        assert_eq!(decays, vec![4, 7, 10]);
        assert!(steps[9].stop);
        assert!(!steps[6].stop);
        assert_eq!(s.lr, 1e-3 * 0.125);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { batch_size: 1, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { stage2_max_epochs: 20, ..TrainConfig::default() }.validate().is_err());
    }

    #[test]
    fn batches_cover_everything_without_singletons() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = epoch_batches(9, 4, &mut rng);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 5]);
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, (0..9).collect::<Vec<_>>());
    }

    fn toy_example(rng: &mut ChaCha8Rng, id: &str, len: usize) -> Example<f64> {
        let clean: Vec<f64> = (0..len).map(|n| 0.3 * (n as f64 * 0.2).sin()).collect();
        let noisy = clean.iter().map(|c| c + rng.gen_range(-0.1..0.1)).collect();
        let enroll = (0..len).map(|n| 0.3 * (n as f64 * 0.21).sin()).collect();
        Example {
            id: id.into(),
            condition: Condition::Noise,
            noisy: Waveform::new(noisy, 8000),
            clean: Waveform::new(clean, 8000),
            enroll: Waveform::new(enroll, 8000),
        }
    }

    #[test]
    fn dac_changes_only_enrollment() {
        let stft = Stft::new(StftConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ex = toy_example(&mut rng, "a", 1500);
        let plain = assemble_batch(&[&ex], None, &stft).unwrap();
        assert_eq!(plain[0].enroll, ex.enroll);
        let dac_cfg = DacConfig::default();
        let compensated = assemble_batch(&[&ex], Some(&dac_cfg), &stft).unwrap();
        let base: Vec<f64> = ex.noisy.samples[..512].iter().chain(&ex.noisy.samples[1500 - 256..]).copied().collect();
        for (i, (a, b)) in compensated[0].enroll.samples.iter().zip(&ex.enroll.samples).enumerate() {
            assert_eq!(*a, b + base[i % base.len()]);
        }
        assert_eq!(compensated[0].noisy_spec, plain[0].noisy_spec);
    }

    #[test]
    fn wrong_sample_rate_rejected() {
        let stft = Stft::new(StftConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ex = toy_example(&mut rng, "a", 800);
        ex.noisy.sample_rate = 16000;
        ex.clean.sample_rate = 16000;
        assert!(assemble_batch(&[&ex], None, &stft).is_err());
    }

    #[test]
    fn degenerate_stage2_matches_stage1() {
        // Identical records give identical per-sample losses in every batch.
        let stft = Stft::new(StftConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ex = toy_example(&mut rng, "a", 700);
        let data: Vec<Example<f64>> = (0..6).map(|_| ex.clone()).collect();
        let cfg = TrainConfig { batch_size: 3, ..TrainConfig::default() };
        let prepared = prepare_dataset(&data, &cfg, &stft).unwrap();
        let init = ModelParams::<f64>::init(ModelDims::for_stft(&stft.config(), 4, 8), 1);
        let batches = vec![vec![0, 1, 2], vec![3, 4, 5]];
        let mut p1 = init.clone();
        let mut a1 = AdamState::new(init.count());
        run_epoch(&mut p1, &mut a1, &stft, &prepared, &batches, Stage::Tf, 1e-3, &cfg).unwrap();
        let mut p2 = init.clone();
        let mut a2 = AdamState::new(init.count());
        let r = run_epoch(&mut p2, &mut a2, &stft, &prepared, &batches, Stage::Aft, 1e-3, &cfg).unwrap();
        assert!(r.reports.iter().all(|rep| rep.fallback));
        assert_eq!(p1, p2);
    }
}
