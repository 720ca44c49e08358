use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::AdamState;
use super::loss::{attention_terms, bag_objective};
use crate::config::TrainConfig;
use crate::model::{BagInput, Model};
use crate::numerics::{Graph, Gradients};
use crate::parallel::par_map;
use crate::relattn::Dropout;
use crate::seed;
use crate::{Error, Result};

/// Losses of one optimizer step. `loss = loss_re + loss_att`, without the
/// L2 penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: f64,
    pub loss_re: f64,
    pub loss_att: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochSummary {
    /// 1-based epoch number.
    pub epoch: usize,
    pub steps: usize,
    pub mean_loss: f64,
    pub mean_loss_re: f64,
    pub mean_loss_att: f64,
}

fn dropout_seed(base: u64, step: u64, bag: usize) -> u64 {
    seed::derive(seed::derive(base, seed::DROPOUT, step), seed::DROPOUT, bag as u64)
}

/// Forward and backward over `batch`, then one Adam update. Bags run in
/// parallel; gradients are reduced in batch order.
pub fn joint_step(model: &mut Model, adam: &mut AdamState, batch: &[&BagInput], cfg: &TrainConfig) -> Result<StepMetrics> {
    if batch.is_empty() {
        return Err(Error::input("empty batch"));
    }
    let step = adam.step + 1;
    let aux = cfg.uses_aux();
    let terms: usize = if aux {
        batch.iter().map(|b| attention_terms(model, b)).sum()
    } else {
        0
    };
    let re_scale = 1.0 / batch.len() as f64;
    let att_scale = (aux && terms > 0).then(|| 1.0 / terms as f64);
    let frozen: &Model = model;
    let results = par_map(cfg.parallelism, batch, |i, bag| -> Result<(Gradients, f64, f64)> {
        let mut g = Graph::new(&frozen.store);
        let mut dropout = (cfg.dropout_p > 0.0).then(|| Dropout::new(cfg.dropout_p, dropout_seed(cfg.seed, step, i)));
        let obj = bag_objective(&mut g, frozen, bag, dropout.as_mut(), re_scale, att_scale)?;
        let mut grads = Gradients::for_store(&frozen.store);
        if obj.loss_re.is_finite() && obj.att_sum.is_finite() {
            g.backward(obj.loss, &mut grads)?;
        }
        Ok((grads, obj.loss_re, obj.att_sum))
    });
    let mut total = Gradients::for_store(&model.store);
    let (mut re_sum, mut att_sum) = (0.0, 0.0);
    let mut bad = Vec::new();
    for (bag, r) in batch.iter().zip(results) {
        let (grads, re, att) = r?;
        if !(re.is_finite() && att.is_finite() && grads.all_finite()) {
            bad.push(bag.id.clone());
            continue;
        }
        total.accumulate(&grads);
        re_sum += re;
        att_sum += att;
    }
    if !bad.is_empty() {
        return Err(Error::Invariant(format!(
            "non-finite loss at step {step}; offending bags: {}",
            bad.join(", ")
        )));
    }
    adam.update(&mut model.store, &total, cfg.learning_rate, cfg.weight_decay);
    let loss_re = re_sum / batch.len() as f64;
    let loss_att = if terms > 0 { att_sum / terms as f64 } else { 0.0 };
    Ok(StepMetrics {
        step,
        loss: loss_re + loss_att,
        loss_re,
        loss_att,
    })
}

/// Model, optimizer state and progress; everything needed to resume.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub adam: AdamState,
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Self {
        let adam = AdamState::new(&model.store);
        Self {
            model,
            adam,
            config,
            epoch: 0,
        }
    }

    /// Bag order for a 0-based epoch.
    pub fn epoch_order(&self, epoch: usize, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(self.config.seed, seed::SHUFFLE, epoch as u64));
        order.shuffle(&mut rng);
        order
    }

    pub fn run_epoch(&mut self, data: &[BagInput], on_step: &mut dyn FnMut(&StepMetrics)) -> Result<EpochSummary> {
        if data.is_empty() {
            return Err(Error::input("empty training set"));
        }
        let order = self.epoch_order(self.epoch, data.len());
        let mut sums = (0.0, 0.0, 0.0);
        let mut steps = 0;
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&BagInput> = chunk.iter().map(|&i| &data[i]).collect();
            let m = joint_step(&mut self.model, &mut self.adam, &batch, &self.config)?;
            on_step(&m);
            sums.0 += m.loss;
            sums.1 += m.loss_re;
            sums.2 += m.loss_att;
            steps += 1;
        }
        self.epoch += 1;
        let n = steps as f64;
        Ok(EpochSummary {
            epoch: self.epoch,
            steps,
            mean_loss: sums.0 / n,
            mean_loss_re: sums.1 / n,
            mean_loss_att: sums.2 / n,
        })
    }

    /// Runs the remaining epochs up to `config.epochs`. `on_epoch` sees the
    /// trainer after every epoch, e.g. to write checkpoints.
    pub fn train(
        &mut self,
        data: &[BagInput],
        on_step: &mut dyn FnMut(&StepMetrics),
        on_epoch: &mut dyn FnMut(&Trainer, &EpochSummary) -> Result<()>,
    ) -> Result<Vec<EpochSummary>> {
        if data.is_empty() {
            return Err(Error::input("empty training set"));
        }
        let mut out = Vec::new();
        while self.epoch < self.config.epochs {
            let summary = self.run_epoch(data, on_step)?;
            log::info!(
                "epoch {} loss {:.5} (re {:.5}, att {:.5})",
                summary.epoch,
                summary.mean_loss,
                summary.mean_loss_re,
                summary.mean_loss_att
            );
            on_epoch(self, &summary)?;
            out.push(summary);
        }
        Ok(out)
    }
}
