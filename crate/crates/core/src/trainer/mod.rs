//! Adversarial training with a fixed critic/generator step ratio.

mod checkpoint;

pub use checkpoint::{config_hash, Checkpoint, DISCRIMINATOR_FILE, GENERATOR_FILE, META_FILE};

use std::collections::VecDeque;
use std::fs;
use std::ops::ControlFlow;
use std::path::Path;

use ndarray::Array4;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_io::{DatasetManifest, Split};
use crate::losses::{discriminator_loss_batch, generator_loss_batch, LossWeights};
use crate::model::{Discriminator, Generator, ModelConfig};
use crate::nn::{Adam, Mode, Module};
use crate::pipeline::{Batch, FrameWindow, LoaderConfig, WindowLoader, WindowSpec};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub d_steps_per_g: usize,
    pub max_epochs: usize,
    pub mse_stop: f64,
    pub d_score_target: f64,
    pub d_score_tolerance: f64,
    /// Generator steps averaged for the critic-score stopping test.
    pub d_score_window: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            d_steps_per_g: 5,
            max_epochs: 60,
            mse_stop: 0.001,
            d_score_target: 0.5,
            d_score_tolerance: 0.05,
            d_score_window: 100,
            batch_size: 8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0 <= self.beta1 && self.beta1 < self.beta2 && self.beta2 < 1.0) {
            return bad(format!("need 0 <= beta1 < beta2 < 1, got {} and {}", self.beta1, self.beta2));
        }
        if self.d_steps_per_g == 0 {
            return bad("d_steps_per_g must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.d_score_window == 0 {
            return bad("d_score_window must be at least 1".into());
        }
        if !(self.mse_stop >= 0.0 && self.d_score_tolerance >= 0.0) {
            return bad("mse_stop and d_score_tolerance must be nonnegative".into());
        }
        Ok(())
    }
}

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub g_loss: f64,
    pub d_loss: f64,
    /// Mean critic score of generated frames during generator steps.
    pub d_score_fake: f64,
    /// Mean per-pixel squared prediction error.
    pub train_mse: f64,
    pub g_steps: u64,
    pub d_steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StopReason {
    MaxEpochs,
    /// Critic score settled at its target and the error fell below `mse_stop`.
    Converged,
    /// The epoch callback asked to stop.
    Callback,
    /// A loss or gradient became non-finite; the best earlier state is kept.
    Diverged(String),
}

pub struct FitOutcome<T> {
    /// State with the lowest training error (the initial state if no epoch ran).
    pub best: Checkpoint<T>,
    pub last: Checkpoint<T>,
    pub history: Vec<EpochMetrics>,
    pub stop: StopReason,
}

/// Owns both networks and optimizers for one training run.
pub struct Trainer<T> {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossWeights,
    pub generator: Generator<T>,
    pub discriminator: Discriminator<T>,
    pub opt_g: Adam<T>,
    pub opt_d: Adam<T>,
    pub epoch: usize,
    pub g_steps: u64,
    pub d_steps: u64,
    rng: ChaCha8Rng,
    recent_scores: VecDeque<f64>,
}

fn non_finite<T: Scalar>(net: &dyn Module<T>, stage: &str) -> Result<()> {
    match net.first_non_finite_grad() {
        Some(name) => Err(Error::NonFinite {
            stage: stage.into(),
            detail: format!("gradient of {name}"),
        }),
        None => Ok(()),
    }
}

fn finite_loss<T: Scalar>(v: T, stage: &str) -> Result<T> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            stage: stage.into(),
            detail: format!("loss is {v}"),
        })
    }
}

struct GeneratorStep {
    loss: f64,
    mse: f64,
    fake_score: f64,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: ModelConfig, train: TrainConfig, loss: LossWeights) -> Result<Self> {
        model.validate()?;
        train.validate()?;
        loss.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
        let generator = Generator::new(&model.generator, model.input_frames(), &mut rng)?;
        let discriminator = Discriminator::new(&model.discriminator, &mut rng)?;
        Ok(Trainer {
            opt_g: Adam::new(train.learning_rate, train.beta1, train.beta2),
            opt_d: Adam::new(train.learning_rate, train.beta1, train.beta2),
            model,
            train,
            loss,
            generator,
            discriminator,
            epoch: 0,
            g_steps: 0,
            d_steps: 0,
            rng,
            recent_scores: VecDeque::new(),
        })
    }

    /// Continues from a checkpoint with its optimizer state.
    pub fn resume(ckpt: Checkpoint<T>) -> Result<Self> {
        let mut t = Trainer::new(ckpt.model.clone(), ckpt.train.clone(), ckpt.loss)?;
        t.generator = ckpt.generator;
        t.discriminator = ckpt.discriminator;
        t.opt_g = ckpt.opt_g;
        t.opt_d = ckpt.opt_d;
        t.epoch = ckpt.epoch;
        t.rng = ChaCha8Rng::seed_from_u64(t.train.seed.wrapping_add(t.epoch as u64));
        Ok(t)
    }

    pub fn checkpoint(&self, metrics: Option<EpochMetrics>) -> Checkpoint<T> {
        Checkpoint {
            model: self.model.clone(),
            train: self.train.clone(),
            loss: self.loss,
            generator: self.generator.clone(),
            discriminator: self.discriminator.clone(),
            opt_g: self.opt_g.clone(),
            opt_d: self.opt_d.clone(),
            epoch: self.epoch,
            metrics,
        }
    }

    fn batch(windows: &[&FrameWindow<T>]) -> Result<Batch<T>> {
        if windows.is_empty() {
            return Err(Error::arg("empty batch"));
        }
        Batch::from_windows(windows)
    }

    /// One critic update on real targets against `fake` predictions.
    fn critic_update(&mut self, real: &Array4<T>, fake: &Array4<T>) -> Result<f64> {
        let d = &mut self.discriminator;
        d.zero_grad();
        let real_scores = d.forward(real, Mode::TRAIN)?;
        let fake_scores = d.forward(fake, Mode::TRAIN)?;
        let (loss, d_real, d_fake) = discriminator_loss_batch(&real_scores, &fake_scores)?;
        d.backward(&d_fake);
        d.backward(&d_real);
        let loss = finite_loss(loss, "discriminator step")?;
        non_finite(d, "discriminator step")?;
        self.opt_d.update(d.params_mut())?;
        self.d_steps += 1;
        Ok(loss.as_f64())
    }

    /// Finishes a generator step whose recorded forward pass produced `pred`.
    fn generator_update(&mut self, pred: &Array4<T>, truth: &Array4<T>) -> Result<GeneratorStep> {
        let d_hash = self.discriminator.weight_hash();
        let adversarial = self.loss.lambda_adv > 0.0;
        let scores = if adversarial {
            self.discriminator.forward(pred, Mode::FROZEN_TRAIN)?
        } else {
            self.discriminator.forward(pred, Mode::EVAL)?
        };
        let parts = generator_loss_batch(pred, truth, &scores, &self.loss)?;
        let mut d_pred = parts.d_pred;
        if adversarial {
            d_pred += &self.discriminator.backward(&parts.d_scores);
            self.discriminator.zero_grad();
        }
        self.generator.backward(&d_pred)?;
        let total = finite_loss(parts.total, "generator step")?;
        non_finite(&self.generator, "generator step")?;
        self.opt_g.update(self.generator.params_mut())?;
        self.g_steps += 1;
        if self.discriminator.weight_hash() != d_hash {
            return Err(Error::invalid("discriminator weights changed during a generator step"));
        }
        Ok(GeneratorStep {
            loss: total.as_f64(),
            mse: parts.intensity.as_f64(),
            fake_score: scores.mean().map_or(0.0, |m| m.as_f64()),
        })
    }

    /// One critic update with the generator frozen; returns the critic loss.
    pub fn train_step_discriminator(&mut self, windows: &[&FrameWindow<T>]) -> Result<f64> {
        let batch = Self::batch(windows)?;
        let g_hash = self.generator.weight_hash();
        let fake = self.generator.forward(&batch.inputs, Mode::EVAL)?;
        let loss = self.critic_update(&batch.targets, &fake)?;
        if self.generator.weight_hash() != g_hash {
            return Err(Error::invalid("generator weights changed during a discriminator step"));
        }
        Ok(loss)
    }

    /// One generator update with the critic frozen; returns the weighted objective.
    pub fn train_step_generator(&mut self, windows: &[&FrameWindow<T>]) -> Result<f64> {
        let batch = Self::batch(windows)?;
        self.generator.zero_grad();
        let pred = self.generator.forward(&batch.inputs, Mode::TRAIN)?;
        Ok(self.generator_update(&pred, &batch.targets)?.loss)
    }

    /// `d_steps_per_g` critic updates against one set of predictions, then
    /// the generator update for that batch.
    fn schedule_step(&mut self, batch: &Batch<T>) -> Result<(GeneratorStep, f64)> {
        self.generator.zero_grad();
        let pred = self.generator.forward(&batch.inputs, Mode::TRAIN)?;
        let g_hash = self.generator.weight_hash();
        let mut d_loss = 0.0;
        for _ in 0..self.train.d_steps_per_g {
            d_loss += self.critic_update(&batch.targets, &pred)?;
        }
        if self.generator.weight_hash() != g_hash {
            return Err(Error::invalid("generator weights changed during discriminator steps"));
        }
        let g = self.generator_update(&pred, &batch.targets)?;
        Ok((g, d_loss / self.train.d_steps_per_g as f64))
    }

    /// Runs one shuffled pass over `windows`.
    pub fn train_epoch(&mut self, windows: &[FrameWindow<T>]) -> Result<EpochMetrics> {
        if windows.is_empty() {
            return Err(Error::arg("no training windows"));
        }
        let mut order: Vec<usize> = (0..windows.len()).collect();
        order.shuffle(&mut self.rng);
        let (g0, d0) = (self.g_steps, self.d_steps);
        let (mut g_loss, mut d_loss, mut score, mut mse, mut batches) = (0.0, 0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(self.train.batch_size) {
            let refs: Vec<&FrameWindow<T>> = chunk.iter().map(|&i| &windows[i]).collect();
            let batch = Batch::from_windows(&refs)?;
            let (g, d) = self.schedule_step(&batch)?;
            g_loss += g.loss;
            d_loss += d;
            score += g.fake_score;
            mse += g.mse;
            batches += 1;
            self.recent_scores.push_back(g.fake_score);
            while self.recent_scores.len() > self.train.d_score_window {
                self.recent_scores.pop_front();
            }
        }
        self.epoch += 1;
        let n = batches as f64;
        Ok(EpochMetrics {
            epoch: self.epoch,
            g_loss: g_loss / n,
            d_loss: d_loss / n,
            d_score_fake: score / n,
            train_mse: mse / n,
            g_steps: self.g_steps - g0,
            d_steps: self.d_steps - d0,
        })
    }

    /// Moving average of recent critic scores on generated frames.
    pub fn smoothed_fake_score(&self) -> Option<f64> {
        if self.recent_scores.is_empty() {
            None
        } else {
            Some(self.recent_scores.iter().sum::<f64>() / self.recent_scores.len() as f64)
        }
    }

    fn converged(&self, m: &EpochMetrics) -> bool {
        let settled = self
            .smoothed_fake_score()
            .is_some_and(|s| (s - self.train.d_score_target).abs() <= self.train.d_score_tolerance);
        settled && m.train_mse < self.train.mse_stop
    }

    /// Trains until `max_epochs`, convergence, divergence or the callback stops it.
    pub fn fit_windows<F>(&mut self, windows: &[FrameWindow<T>], mut on_epoch: F) -> Result<FitOutcome<T>>
    where
        F: FnMut(&EpochMetrics) -> ControlFlow<()>,
    {
        let mut best = self.checkpoint(None);
        let mut best_mse = f64::INFINITY;
        let mut history = Vec::new();
        let mut stop = StopReason::MaxEpochs;
        for _ in 0..self.train.max_epochs {
            let m = match self.train_epoch(windows) {
                Ok(m) => m,
                Err(Error::NonFinite { stage, detail }) => {
                    stop = StopReason::Diverged(format!("{stage}: {detail}"));
                    break;
                }
                Err(e) => return Err(e),
            };
            log::info!(
                "epoch {} g_loss {:.5} d_loss {:.5} d_score_fake {:.4} train_mse {:.6}",
                m.epoch,
                m.g_loss,
                m.d_loss,
                m.d_score_fake,
                m.train_mse
            );
            history.push(m.clone());
            if m.train_mse < best_mse {
                best_mse = m.train_mse;
                best = self.checkpoint(Some(m.clone()));
            }
            if self.converged(&m) {
                stop = StopReason::Converged;
                break;
            }
            if on_epoch(&m).is_break() {
                stop = StopReason::Callback;
                break;
            }
        }
        let last = if matches!(stop, StopReason::Diverged(_)) {
            best.clone()
        } else {
            self.checkpoint(history.last().cloned())
        };
        Ok(FitOutcome {
            best,
            last,
            history,
            stop,
        })
    }
}

/// Training windows of a manifest at the model's frame size and window length.
pub fn training_windows<T: Scalar>(manifest: &DatasetManifest, model: &ModelConfig, stride: usize) -> Result<Vec<FrameWindow<T>>> {
    let clips: Vec<_> = manifest.split(Split::Train).cloned().collect();
    if clips.is_empty() {
        return Err(Error::invalid("manifest has no training clips"));
    }
    let spec = WindowSpec {
        frame_size: model.frame_size,
        window_total: model.window_total,
        stride,
    };
    let loader = WindowLoader::new(&clips, spec, LoaderConfig::default())?;
    let windows = loader.collect_windows()?;
    if windows.is_empty() {
        return Err(Error::invalid("training clips are shorter than one window"));
    }
    Ok(windows)
}

/// Trains from scratch on the manifest's training split.
pub fn fit<T: Scalar>(
    manifest: &DatasetManifest,
    model: ModelConfig,
    train: TrainConfig,
    loss: LossWeights,
) -> Result<FitOutcome<T>> {
    let windows = training_windows(manifest, &model, 1)?;
    Trainer::new(model, train, loss)?.fit_windows(&windows, |_| ControlFlow::Continue(()))
}

/// Learning rate used for warm starts when none is given: half the base run's.
pub fn transfer_learning_rate(base: &TrainConfig) -> f64 {
    base.learning_rate / 2.0
}

/// Starts a new run from a checkpoint's weights with fresh optimizer state.
pub fn transfer_init<T: Scalar>(
    base: &Checkpoint<T>,
    model: ModelConfig,
    mut train: TrainConfig,
    loss: LossWeights,
    learning_rate: Option<f64>,
) -> Result<Trainer<T>> {
    train.learning_rate = learning_rate.unwrap_or_else(|| transfer_learning_rate(&base.train));
    let mut t = Trainer::new(model, train, loss)?;
    copy_weights(&base.generator, &mut t.generator, "generator")?;
    copy_weights(&base.discriminator, &mut t.discriminator, "discriminator")?;
    Ok(t)
}

fn copy_weights<T: Scalar>(from: &dyn Module<T>, to: &mut dyn Module<T>, what: &str) -> Result<()> {
    let src = from.params();
    let mut dst = to.params_mut();
    if src.len() != dst.len() {
        return Err(Error::invalid(format!(
            "{what} architecture mismatch: checkpoint has {} tensors, new run has {}",
            src.len(),
            dst.len()
        )));
    }
    for (s, d) in src.iter().zip(dst.iter_mut()) {
        if s.name != d.name || s.value.shape() != d.value.shape() {
            return Err(Error::invalid(format!(
                "{what} architecture mismatch: {} {:?} vs {} {:?}",
                s.name,
                s.value.shape(),
                d.name,
                d.value.shape()
            )));
        }
        d.value.assign(&s.value);
        d.zero_grad();
    }
    Ok(())
}

/// Writes `epoch,g_loss,d_loss,d_score_fake,train_mse`.
pub fn write_metrics_csv(path: &Path, history: &[EpochMetrics]) -> Result<()> {
    let mut text = String::from("epoch,g_loss,d_loss,d_score_fake,train_mse\n");
    for m in history {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            m.epoch, m.g_loss, m.d_loss, m.d_score_fake, m.train_mse
        ));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `epoch,g_steps,d_steps`.
pub fn write_steps_csv(path: &Path, history: &[EpochMetrics]) -> Result<()> {
    let mut text = String::from("epoch,g_steps,d_steps\n");
    for m in history {
        text.push_str(&format!("{},{},{}\n", m.epoch, m.g_steps, m.d_steps));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
