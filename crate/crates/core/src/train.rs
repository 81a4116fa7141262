//! The epoch loop with early stopping shared by the trainers.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{Optimizer, OptimizerKind, Parameters};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub epochs: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub weight_decay: f64,
    pub seed: u64,
    pub train_encoder: bool,
}

impl Default for Schedule {
    /// Fine-tuning defaults: 50 epochs, lr 1e-4, patience 5, batch 32, seed 42.
    fn default() -> Self {
        Schedule {
            epochs: 50,
            learning_rate: 1e-4,
            patience: 5,
            batch_size: 32,
            optimizer: OptimizerKind::Sgd,
            weight_decay: 0.0,
            seed: 42,
            train_encoder: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean training loss over the epoch's examples.
    pub train_loss: f64,
    /// Score used for early stopping (accuracy / UAS / exact match), in percent.
    pub dev_score: f64,
    /// LAS for the parser.
    pub dev_secondary: Option<f64>,
}

/// A model whose gradient has the model's own shape.
pub trait Trainable: Clone + Send + Sync {
    type Example: Sync;

    fn zero_grad(&self) -> Self;

    /// Adds this example's loss gradient into `grad` and returns the loss.
    fn accumulate(&self, example: &Self::Example, grad: &mut Self) -> Result<f64>;

    fn parts(&self, with_encoder: bool) -> Vec<&dyn Parameters>;

    fn parts_mut(&mut self, with_encoder: bool) -> Vec<&mut dyn Parameters>;

    /// Dev score and optional secondary metric, both in percent.
    fn evaluate(&self, dev: &[Self::Example]) -> Result<(f64, Option<f64>)>;
}

/// Mean loss and gradient over a batch; deterministic regardless of threads.
pub fn batch_gradient<M: Trainable>(model: &M, batch: &[&M::Example]) -> Result<(f64, M)> {
    let parts: Vec<(f64, M)> = batch
        .par_iter()
        .map(|ex| {
            let mut g = model.zero_grad();
            let loss = model.accumulate(ex, &mut g)?;
            Ok((loss, g))
        })
        .collect::<Result<_>>()?;
    let mut total = model.zero_grad();
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        for (dst, src) in total.parts_mut(true).into_iter().zip(g.parts(true)) {
            dst.add_assign(src);
        }
    }
    let scale = 1.0 / batch.len().max(1) as f64;
    for p in total.parts_mut(true) {
        p.scale(scale);
    }
    Ok((loss * scale, total))
}

/// Trains with early stopping on the dev score and returns the best model.
pub fn fit<M: Trainable>(
    mut model: M,
    train: &[M::Example],
    dev: &[M::Example],
    schedule: &Schedule,
) -> Result<(M, Vec<EpochStats>)> {
    if train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    if dev.is_empty() {
        return Err(Error::Empty("dev split"));
    }
    if schedule.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed ^ 0x05ee_d0fb_a7c4);
    let mut opt = Optimizer::new(schedule.optimizer, schedule.learning_rate, schedule.weight_decay);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, M)> = None;
    let mut since_best = 0;
    let enc = schedule.train_encoder;

    for epoch in 1..=schedule.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(schedule.batch_size) {
            let batch: Vec<&M::Example> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grad) = batch_gradient(&model, &batch)?;
            loss_sum += loss * batch.len() as f64;
            let grads = grad.parts(enc);
            opt.step(&mut model.parts_mut(enc), &grads);
        }
        let (dev_score, dev_secondary) = model.evaluate(dev)?;
        history.push(EpochStats {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            dev_score,
            dev_secondary,
        });
        match &best {
            Some((b, _)) if dev_score <= *b => {
                since_best += 1;
                if since_best >= schedule.patience {
                    break;
                }
            }
            _ => {
                best = Some((dev_score, model.clone()));
                since_best = 0;
            }
        }
    }
    Ok((best.map(|(_, m)| m).unwrap_or(model), history))
}

/// Writes `epoch<TAB>loss<TAB>score[<TAB>secondary]` rows.
pub fn history_tsv(history: &[EpochStats], score_name: &str, secondary: Option<&str>) -> String {
    let mut out = format!("epoch\tloss\t{score_name}");
    if let Some(s) = secondary {
        out.push('\t');
        out.push_str(s);
    }
    out.push('\n');
    for h in history {
        out.push_str(&format!("{}\t{:.6}\t{:.2}", h.epoch, h.train_loss, h.dev_score));
        if secondary.is_some() {
            out.push_str(&format!("\t{:.2}", h.dev_secondary.unwrap_or(f64::NAN)));
        }
        out.push('\n');
    }
    out
}
