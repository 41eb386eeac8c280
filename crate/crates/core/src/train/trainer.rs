use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{adjusted_base_lr, poly_lr, sgd_step, OptimizerState};
use crate::data::{augment, Pair, SegBatch};
use crate::error::{Error, Result};
use crate::model::SegModel;
use crate::ops::{self, Mode};
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::IGNORE_INDEX;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Learning rate quoted for a batch of 16.
    pub base_lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub power: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub aux_weight: f64,
    pub crop: usize,
    pub scale_lo: f64,
    pub scale_hi: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 0.001,
            batch_size: 16,
            epochs: 80,
            power: 0.9,
            momentum: 0.9,
            weight_decay: 0.0001,
            aux_weight: 0.2,
            crop: 64,
            scale_lo: 0.5,
            scale_hi: 2.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.base_lr > 0.0) || !self.base_lr.is_finite() {
            return bad(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.crop == 0 {
            return bad("batch_size, epochs and crop must be positive".into());
        }
        if !(self.power > 0.0) || !(self.momentum >= 0.0) || !(self.weight_decay >= 0.0) {
            return bad("power must be positive, momentum and weight_decay non-negative".into());
        }
        if !(self.aux_weight >= 0.0) {
            return bad(format!("aux_weight must be non-negative, got {}", self.aux_weight));
        }
        if !(self.scale_lo > 0.0 && self.scale_lo <= self.scale_hi) {
            return bad(format!("invalid scale range {}..{}", self.scale_lo, self.scale_hi));
        }
        Ok(())
    }

    pub fn iterations_per_epoch(&self, dataset_len: usize) -> usize {
        dataset_len.div_ceil(self.batch_size)
    }

    pub fn total_iterations(&self, dataset_len: usize) -> usize {
        self.epochs * self.iterations_per_epoch(dataset_len)
    }

    pub fn adjusted_base_lr(&self) -> f64 {
        adjusted_base_lr(self.base_lr, self.batch_size)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub main: f64,
    pub aux: f64,
    pub total: f64,
}

/// One logged training iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub iter: usize,
    pub lr: f64,
    pub losses: StepLosses,
}

pub const CSV_HEADER: &str = "iter,lr,main,aux,total";

impl LogRow {
    pub fn log_line(&self) -> String {
        format!(
            "iter={} lr={} main={:.6} aux={:.6} total={:.6}",
            self.iter, self.lr, self.losses.main, self.losses.aux, self.losses.total
        )
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.iter, self.lr, self.losses.main, self.losses.aux, self.losses.total
        )
    }
}

/// Forward, `main + aux_weight·aux` loss, backward and one SGD step at
/// `poly_lr(adjusted base, iter, total_iter)`.
pub fn train_step<T: Scalar>(
    model: &mut SegModel<T>,
    batch: &SegBatch<T>,
    cfg: &TrainConfig,
    state: &mut OptimizerState<T>,
    iter: usize,
    total_iter: usize,
) -> Result<LogRow> {
    let lr = poly_lr(cfg.adjusted_base_lr(), iter, total_iter, cfg.power)?;
    let mut tape = Tape::new();
    let x = tape.constant(batch.images.clone());
    let (out, bindings) = model.forward(&mut tape, x, Mode::Train, true, true)?;
    let aux_logits = out.aux_logits.expect("aux requested");
    let main = ops::softmax_cross_entropy(&mut tape, out.logits, &batch.labels, IGNORE_INDEX)?;
    let aux = ops::softmax_cross_entropy(&mut tape, aux_logits, &batch.labels, IGNORE_INDEX)?;
    let weighted = ops::scale(&mut tape, aux, T::lit(cfg.aux_weight))?;
    let total = ops::add(&mut tape, main, weighted)?;

    let item = |v| tape.value(v).data()[0].as_f64();
    let losses = StepLosses {
        main: item(main),
        aux: item(aux),
        total: item(total),
    };
    if !(losses.main.is_finite() && losses.aux.is_finite() && losses.total.is_finite()) {
        return Err(Error::Divergence { iter });
    }
    tape.backward(total)?;
    let grads: Vec<Option<&[T]>> = (0..model.params.len())
        .map(|i| bindings.var(i).and_then(|v| tape.grad(v)))
        .collect();
    sgd_step(&mut model.params, &grads, state, lr, cfg.momentum, cfg.weight_decay)?;
    Ok(LogRow { iter, lr, losses })
}

/// Shuffled index batches for one epoch. The final batch is filled up by
/// wrapping around the epoch order, so every batch has `batch` items.
pub fn epoch_batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    (0..n.div_ceil(batch))
        .map(|b| (0..batch).map(|j| order[(b * batch + j) % n]).collect())
        .collect()
}

/// Runs `cfg.epochs` epochs over `pairs`, calling `on_row` after every
/// iteration. Returns every logged row.
pub fn train<T: Scalar>(
    model: &mut SegModel<T>,
    pairs: &[Pair],
    cfg: &TrainConfig,
    state: &mut OptimizerState<T>,
    mut on_row: impl FnMut(&LogRow) -> Result<()>,
) -> Result<Vec<LogRow>> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Config("no training pairs".into()));
    }
    let total = cfg.total_iterations(pairs.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::with_capacity(total);
    let mut iter = 0;
    for _ in 0..cfg.epochs {
        for indices in epoch_batches(pairs.len(), cfg.batch_size, &mut rng) {
            let augmented: Vec<Pair> = indices
                .iter()
                .map(|&i| augment(&pairs[i], cfg.crop, cfg.scale_lo, cfg.scale_hi, &mut rng))
                .collect();
            let refs: Vec<&Pair> = augmented.iter().collect();
            let batch = SegBatch::from_pairs(&refs)?;
            let row = train_step(model, &batch, cfg, state, iter, total)?;
            on_row(&row)?;
            rows.push(row);
            iter += 1;
        }
    }
    Ok(rows)
}
