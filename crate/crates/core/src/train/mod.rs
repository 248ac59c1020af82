//! L1 training with Adam and cosine learning-rate decay, evaluation against
//! the bicubic baseline, and resumable checkpoints.

mod adam;
mod checkpoint;

pub use adam::{Adam, ADAM_EPS, BETA1, BETA2};
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
};

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{bicubic_resize, PairSet};
use crate::error::{invalid, Error, Result};
use crate::metrics::{evaluate_metrics, MetricReport};
use crate::model::{Model, ModelConfig};
use crate::tensor::{Element, Graph};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_min: f64,
    pub seed: u64,
    /// Save a checkpoint every this many steps (0 disables).
    pub checkpoint_every: usize,
    /// Evaluate on the held-out set every this many steps (0 disables).
    pub eval_every: usize,
    /// Global gradient-norm clip (disabled when `None`).
    pub clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            batch_size: 2,
            lr_init: 1e-4,
            lr_min: 1e-5,
            seed: 7,
            checkpoint_every: 0,
            eval_every: 0,
            clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return invalid("steps must be at least 1");
        }
        if self.batch_size == 0 {
            return invalid("batch size must be at least 1");
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr_init) {
            return invalid(format!(
                "need 0 <= lr_min <= lr_init, got {} and {}",
                self.lr_min, self.lr_init
            ));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return invalid(format!("clip norm must be positive, got {c}"));
            }
        }
        Ok(())
    }

    /// Cosine decay from `lr_init` at step 0 to `lr_min` at step `steps − 1`.
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.steps <= 1 {
            return self.lr_init;
        }
        let t = step.min(self.steps - 1) as f64 / (self.steps - 1) as f64;
        self.lr_min + 0.5 * (self.lr_init - self.lr_min) * (1.0 + (PI * t).cos())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

pub fn loss_csv(history: &[LossRecord]) -> String {
    let mut s = String::from("step,lr,loss\n");
    for r in history {
        let _ = writeln!(s, "{},{:e},{:e}", r.step, r.lr, r.loss);
    }
    s
}

/// Sample indices for the batch at `step`.
///
/// Batches walk through a per-epoch permutation that depends only on
/// `(seed, epoch)`, so any step can be reproduced without replaying earlier ones.
pub fn batch_indices(seed: u64, step: usize, batch: usize, n: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(batch);
    let mut cached: Option<(usize, Vec<usize>)> = None;
    for pos in step * batch..(step + 1) * batch {
        let (epoch, i) = (pos / n, pos % n);
        if cached.as_ref().map(|c| c.0) != Some(epoch) {
            let mut perm: Vec<usize> = (0..n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(
                seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            );
            perm.shuffle(&mut rng);
            cached = Some((epoch, perm));
        }
        out.push(cached.as_ref().unwrap().1[i]);
    }
    out
}

/// Model, optimizer and progress of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T: Element = f32> {
    pub model: Model<T>,
    pub adam: Adam<T>,
    /// Next step to run.
    pub step: usize,
    pub history: Vec<LossRecord>,
}

impl<T: Element> TrainState<T> {
    pub fn new(model: Model<T>) -> Self {
        let adam = Adam::new(&model.params);
        Self {
            model,
            adam,
            step: 0,
            history: Vec::new(),
        }
    }

    /// Runs one optimizer step and returns its mean loss.
    pub fn step_once(&mut self, pairs: &PairSet<T>, tcfg: &TrainConfig) -> Result<f64> {
        if pairs.is_empty() {
            return invalid("training set is empty");
        }
        if pairs.scale != self.model.cfg.scale {
            return invalid(format!(
                "pairs have scale {}, model expects {}",
                pairs.scale, self.model.cfg.scale
            ));
        }
        let idx = batch_indices(tcfg.seed, self.step, tcfg.batch_size, pairs.len());
        self.model.params.zero_grad();
        let mut total = 0.0;
        for &i in &idx {
            let pair = &pairs.pairs[i];
            let mut g = Graph::new();
            let bound = self.model.params.bind(&mut g, true);
            let x = g.constant(pair.lr.tensor().clone());
            let y = self.model.forward_graph(&mut g, &bound, x)?;
            let target = g.constant(pair.hr.tensor().clone());
            let loss = g.l1_loss(y, target)?;
            let lv = g.value(loss).item()?.as_f64();
            if !lv.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss at step {} is {lv}",
                    self.step
                )));
            }
            total += lv;
            let grads = g.backward(loss)?;
            self.model.params.accumulate(&bound, &grads)?;
        }
        let inv = 1.0 / idx.len() as f64;
        let mut sq = 0.0;
        for p in self.model.params.params_mut() {
            for gr in p.grad.data_mut() {
                *gr = T::from_f64(gr.as_f64() * inv);
                sq += gr.as_f64() * gr.as_f64();
            }
        }
        if let Some(clip) = tcfg.clip {
            let norm = sq.sqrt();
            if norm > clip {
                let f = clip / norm;
                for p in self.model.params.params_mut() {
                    p.grad
                        .data_mut()
                        .iter_mut()
                        .for_each(|g| *g = T::from_f64(g.as_f64() * f));
                }
            }
        }
        let lr = tcfg.lr_at(self.step);
        self.adam.step(&mut self.model.params, lr)?;
        let loss = total * inv;
        self.history.push(LossRecord {
            step: self.step,
            lr,
            loss,
        });
        self.step += 1;
        Ok(loss)
    }

    /// Runs steps until `tcfg.steps` have been completed, calling `on_step`
    /// after each one.
    pub fn run(
        &mut self,
        pairs: &PairSet<T>,
        tcfg: &TrainConfig,
        mut on_step: impl FnMut(&TrainState<T>) -> Result<()>,
    ) -> Result<()> {
        tcfg.validate()?;
        while self.step < tcfg.steps {
            self.step_once(pairs, tcfg)?;
            on_step(self)?;
        }
        Ok(())
    }
}

/// Builds a model from `cfg` seeded by `tcfg.seed` and trains it on `pairs`.
pub fn train<T: Element>(
    cfg: &ModelConfig,
    pairs: &PairSet<T>,
    tcfg: &TrainConfig,
) -> Result<TrainState<T>> {
    let mut state = TrainState::new(Model::build(cfg, tcfg.seed)?);
    state.run(pairs, tcfg, |_| Ok(()))?;
    Ok(state)
}

/// Mean metrics of `model` and of bicubic upsampling over `pairs`.
pub fn evaluate<T: Element>(
    model: &Model<T>,
    pairs: &PairSet<T>,
) -> Result<(MetricReport, MetricReport)> {
    if pairs.is_empty() {
        return invalid("evaluation set is empty");
    }
    let s = pairs.scale;
    let mut ours = Vec::with_capacity(pairs.len());
    let mut base = Vec::with_capacity(pairs.len());
    for p in &pairs.pairs {
        let pred = model.forward(&p.lr)?;
        ours.push(evaluate_metrics(&pred, &p.hr, s)?);
        let up = bicubic_resize(&p.lr, s as f64)?;
        base.push(evaluate_metrics(&up, &p.hr, s)?);
    }
    Ok((MetricReport::mean(&ours)?, MetricReport::mean(&base)?))
}
