use log::info;
use ndarray::Array2;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::neural::{learning_rate, masked_mae, ssim, ssim_with_grad, AdamState, Tensor};
use crate::rng::{derive_seed, stream_rng};
use crate::scalar::Real;
use crate::stack::Plane;

use super::model::ResUNet;
use super::Normalization;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    /// learning rate multiplier per completed epoch
    pub decay: f64,
    /// epochs without validation improvement before stopping
    pub patience: usize,
    pub seed: u64,
    pub ssim_window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 16,
            base_lr: 1e-3,
            decay: 0.96,
            patience: 20,
            seed: 0,
            ssim_window: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.patience == 0 || self.patience >= self.epochs {
            return Err(Error::Config(format!(
                "patience must be in 1..epochs, got {} with {} epochs",
                self.patience, self.epochs
            )));
        }
        if !(self.base_lr > 0.0) || !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!(
                "invalid learning rate schedule: base {} decay {}",
                self.base_lr, self.decay
            )));
        }
        if self.ssim_window == 0 {
            return Err(Error::Config("ssim_window must be positive".into()));
        }
        Ok(())
    }
}

/// One training example: a distorted plane, its original, and the bins the
/// detector removal affected.
#[derive(Debug, Clone)]
pub struct PlaneSample {
    pub distorted: Plane,
    pub original: Plane,
    pub affected: Array2<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    EarlyStopping { best_epoch: usize },
    MaxEpochs { best_epoch: usize },
}

impl StopReason {
    pub fn best_epoch(&self) -> usize {
        match *self {
            StopReason::EarlyStopping { best_epoch } | StopReason::MaxEpochs { best_epoch } => best_epoch,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::EarlyStopping { .. } => "early_stopping",
            StopReason::MaxEpochs { .. } => "max_epochs",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub stop: StopReason,
}

/// Patience counter over validation losses (strict improvement).
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records the loss of `epoch`; returns whether it is the best so far.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

fn dynamic_range<T: Real>(a: &[T], b: &[T]) -> T {
    let l = a.iter().chain(b).copied().fold(T::neg_infinity(), T::max);
    if l > T::zero() {
        l
    } else {
        T::one()
    }
}

/// `(1 - SSIM) + masked MAE` with the SSIM range taken as the maximum over
/// both images (1 if that is not positive).
pub fn loss<T: Real>(pred: &[T], target: &[T], mask: &[bool], h: usize, w: usize, window: usize) -> Result<T> {
    loss_with_range(pred, target, mask, h, w, window, dynamic_range(pred, target))
}

pub fn loss_with_range<T: Real>(
    pred: &[T],
    target: &[T],
    mask: &[bool],
    h: usize,
    w: usize,
    window: usize,
    range: T,
) -> Result<T> {
    let (mae, _) = masked_mae(pred, target, mask)?;
    Ok(T::one() - ssim(pred, target, h, w, range, window)? + mae)
}

/// Loss and its gradient with respect to `pred`, for a fixed SSIM range.
pub fn loss_grad_with_range<T: Real>(
    pred: &[T],
    target: &[T],
    mask: &[bool],
    h: usize,
    w: usize,
    window: usize,
    range: T,
) -> Result<(T, Vec<T>)> {
    let (mae, mut grad) = masked_mae(pred, target, mask)?;
    let (s, ds) = ssim_with_grad(pred, target, h, w, range, window)?;
    for (g, d) in grad.iter_mut().zip(ds) {
        *g -= d;
    }
    Ok((T::one() - s + mae, grad))
}

/// Loss of the reinstated composite (`net` on masked bins, `input`
/// elsewhere) and its gradient with respect to `net`.
fn composite_loss<T: Real>(
    net: &[T],
    input: &[T],
    target: &[T],
    mask: &[bool],
    (h, w): (usize, usize),
    window: usize,
    with_grad: bool,
) -> Result<(T, Vec<T>)> {
    let comp: Vec<T> = (0..net.len()).map(|i| if mask[i] { net[i] } else { input[i] }).collect();
    let range = dynamic_range(&comp, target);
    if !with_grad {
        return Ok((loss_with_range(&comp, target, mask, h, w, window, range)?, Vec::new()));
    }
    let (l, mut g) = loss_grad_with_range(&comp, target, mask, h, w, window, range)?;
    for (d, &m) in g.iter_mut().zip(mask) {
        if !m {
            *d = T::zero();
        }
    }
    Ok((l, g))
}

struct Prepared {
    input: Vec<f32>,
    target: Vec<f32>,
    mask: Vec<bool>,
}

fn prepare(samples: &[PlaneSample], dim: &mut Option<(usize, usize)>) -> Result<Vec<Prepared>> {
    let mut out = Vec::with_capacity(samples.len());
    for s in samples {
        let d = s.distorted.dim();
        if s.original.dim() != d || s.affected.dim() != d {
            return Err(Error::Shape("sample planes and mask differ in size".into()));
        }
        if *dim.get_or_insert(d) != d {
            return Err(Error::Shape(format!("sample plane {d:?} differs from {:?}", dim.unwrap())));
        }
        let input: Vec<f32> = s.distorted.iter().copied().collect();
        let norm = Normalization::of(&input);
        let mask: Vec<bool> = s.affected.iter().copied().collect();
        if norm.is_degenerate() || !mask.iter().any(|&m| m) {
            continue;
        }
        let target: Vec<f32> = s.original.iter().copied().collect();
        out.push(Prepared {
            input: norm.normalize(&input),
            target: norm.normalize(&target),
            mask,
        });
    }
    Ok(out)
}

fn batch_tensor(items: &[&Prepared], (h, w): (usize, usize)) -> Result<Tensor<f32>> {
    let mut data = Vec::with_capacity(items.len() * h * w);
    for p in items {
        data.extend_from_slice(&p.input);
    }
    Tensor::from_vec([items.len(), 1, h, w], data)
}

fn evaluate(model: &ResUNet<f32>, set: &[Prepared], dim: (usize, usize), cfg: &TrainConfig) -> Result<f64> {
    let mut total = 0.0;
    for chunk in set.chunks(cfg.batch_size) {
        let items: Vec<&Prepared> = chunk.iter().collect();
        let y = model.predict(&batch_tensor(&items, dim)?)?;
        for (i, p) in chunk.iter().enumerate() {
            let (l, _) = composite_loss(y.sample(i), &p.input, &p.target, &p.mask, dim, cfg.ssim_window, false)?;
            total += l as f64;
        }
    }
    Ok(total / set.len() as f64)
}

/// Mini-batch Adam on shuffled samples with early stopping on the
/// validation loss. On return `model` holds the weights of the best
/// validation epoch. Samples whose distorted plane is all zero or whose mask
/// is empty carry no loss and are skipped.
pub fn train(
    model: &mut ResUNet<f32>,
    train_set: &[PlaneSample],
    val_set: &[PlaneSample],
    cfg: &TrainConfig,
) -> Result<History> {
    cfg.validate()?;
    let mut dim = None;
    let train_data = prepare(train_set, &mut dim)?;
    let val_data = prepare(val_set, &mut dim)?;
    if train_data.is_empty() || val_data.is_empty() {
        return Err(Error::Empty("training and validation sets need usable samples".into()));
    }
    let dim = dim.expect("nonempty sets have a size");
    let mut adam = AdamState::new();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_state = model.state();
    let mut records = Vec::new();
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut stopped_early = false;
    for epoch in 0..cfg.epochs {
        let lr = learning_rate(cfg.base_lr, cfg.decay, epoch);
        order.sort_unstable();
        order.shuffle(&mut stream_rng(derive_seed(cfg.seed, 0x7368_7566), epoch as u64));
        let mut train_total = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let items: Vec<&Prepared> = idx.iter().map(|&i| &train_data[i]).collect();
            let x = batch_tensor(&items, dim)?;
            model.zero_grad();
            let y = model.forward(&x)?;
            let mut dy = Tensor::zeros(y.shape());
            let scale = 1.0 / items.len() as f32;
            let mut batch_loss = 0.0f64;
            for (i, p) in items.iter().enumerate() {
                let (l, g) = composite_loss(y.sample(i), &p.input, &p.target, &p.mask, dim, cfg.ssim_window, true)?;
                batch_loss += l as f64;
                for (d, v) in dy.sample_mut(i).iter_mut().zip(g) {
                    *d = v * scale;
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    value: batch_loss,
                });
            }
            train_total += batch_loss;
            model.backward(&dy)?;
            adam.step(model.params_mut(), lr)?;
        }
        let val_loss = evaluate(model, &val_data, dim, cfg)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: usize::MAX,
                value: val_loss,
            });
        }
        let record = EpochRecord {
            epoch,
            learning_rate: lr,
            train_loss: train_total / train_data.len() as f64,
            val_loss,
        };
        info!(
            "epoch {epoch}: lr {lr:.3e} train {:.5} val {val_loss:.5}",
            record.train_loss
        );
        records.push(record);
        if stopper.observe(epoch, val_loss) {
            best_state = model.state();
        }
        if stopper.should_stop() {
            stopped_early = true;
            break;
        }
    }
    model.load_state(&best_state)?;
    let best_epoch = stopper.best_epoch();
    Ok(History {
        epochs: records,
        stop: if stopped_early {
            StopReason::EarlyStopping { best_epoch }
        } else {
            StopReason::MaxEpochs { best_epoch }
        },
    })
}
