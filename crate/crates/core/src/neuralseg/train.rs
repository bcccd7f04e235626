//! SGD training loop over (slice, mask) pairs with seeded shuffling and
//! dropout, per-epoch validation, and a best-validation-dice checkpoint.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuralseg::loss::{edge_map, hard_dice, loss_and_grad, LossConfig, Reduction};
use crate::neuralseg::net::QuickNatLite;
use crate::neuralseg::tensor::Tensor4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Documented scale on the learning rate (width compensation).
    pub lr_scale: f64,
    /// Classical momentum; 0 is plain SGD.
    pub momentum: f64,
    pub dice_weight: f64,
    pub ce_weight: f64,
    pub edge_weight_gain: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 4,
            learning_rate: 1e-5,
            lr_scale: 1.0,
            momentum: 0.0,
            dice_weight: 1.0,
            ce_weight: 1.0,
            edge_weight_gain: 2.0,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.lr_scale > 0.0) {
            return Err(Error::Config("learning rate and scale must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.dice_weight < 0.0 || self.ce_weight < 0.0 || self.edge_weight_gain < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            dice_weight: self.dice_weight,
            ce_weight: self.ce_weight,
            edge_weight_gain: self.edge_weight_gain,
            reduction: Reduction::Mean,
        }
    }
}

/// One training pair: a grayscale slice in [0, 1] and its label mask.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub image: Vec<f64>,
    pub mask: Vec<u8>,
    pub h: usize,
    pub w: usize,
}

impl TrainSample {
    pub fn new(image: Vec<f64>, mask: Vec<u8>, h: usize, w: usize) -> Result<Self> {
        if image.len() != h * w || mask.len() != h * w {
            return Err(Error::Data(format!(
                "sample buffers must be {h}x{w} = {} px, got image {} / mask {}",
                h * w,
                image.len(),
                mask.len()
            )));
        }
        if mask.iter().any(|&v| v > 1) {
            return Err(Error::Data("mask labels must be 0 or 1".into()));
        }
        Ok(TrainSample { image, mask, h, w })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_dice: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_val_dice: f64,
}

pub const METRICS_CSV_HEADER: &str = "epoch,train_loss,val_loss,val_dice";

pub fn metrics_to_csv(epochs: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for m in epochs {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            m.epoch, m.train_loss, m.val_loss, m.val_dice
        ));
    }
    out
}

fn check_dataset(net: &QuickNatLite, samples: &[TrainSample], what: &str) -> Result<(usize, usize)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Data(format!("{what} set is empty")))?;
    let div = 1 << net.spec.num_encoders;
    if first.h % div != 0 || first.w % div != 0 {
        return Err(Error::Data(format!(
            "{what} slices must have sides divisible by {div}, got {}x{}",
            first.h, first.w
        )));
    }
    for (i, s) in samples.iter().enumerate() {
        if (s.h, s.w) != (first.h, first.w) {
            return Err(Error::Data(format!(
                "{what} sample {i} is {}x{}, expected {}x{}",
                s.h, s.w, first.h, first.w
            )));
        }
    }
    Ok((first.h, first.w))
}

fn batch_tensor(samples: &[&TrainSample], h: usize, w: usize) -> (Tensor4, Vec<u8>, Vec<f64>) {
    let n = samples.len();
    let mut x = Tensor4::zeros(n, 1, h, w);
    let mut target = Vec::with_capacity(n * h * w);
    let mut edges = Vec::with_capacity(n * h * w);
    for (b, s) in samples.iter().enumerate() {
        x.plane_mut(b, 0).copy_from_slice(&s.image);
        target.extend_from_slice(&s.mask);
        edges.extend(edge_map(&s.mask, h, w));
    }
    (x, target, edges)
}

fn fisher_yates(order: &mut [usize], rng: &mut ChaCha8Rng) {
    use rand::Rng;
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
}

/// Evaluates loss and aggregate hard dice over a dataset (inference mode).
pub fn evaluate(net: &QuickNatLite, samples: &[TrainSample], loss_cfg: &LossConfig) -> Result<(f64, f64)> {
    let (h, w) = check_dataset(net, samples, "validation")?;
    let mut loss_sum = 0.0;
    let mut preds = Vec::new();
    let mut targets = Vec::new();
    for s in samples {
        let refs = [s];
        let (x, target, edges) = batch_tensor(&refs, h, w);
        let probs = net.infer(&x)?;
        let (loss, _) = loss_and_grad(&probs, &target, &edges, loss_cfg)?;
        loss_sum += loss.total;
        let plane = h * w;
        for i in 0..plane {
            preds.push(u8::from(probs.plane(0, 1)[i] >= probs.plane(0, 0)[i]));
        }
        targets.extend_from_slice(&s.mask);
    }
    Ok((loss_sum / samples.len() as f64, hard_dice(&preds, &targets)))
}

/// Trains in place; the network is left at the best-validation-dice
/// parameters (ties keep the earlier epoch).
pub fn train(
    net: &mut QuickNatLite,
    train_set: &[TrainSample],
    val_set: &[TrainSample],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    let (h, w) = check_dataset(net, train_set, "training")?;
    check_dataset(net, val_set, "validation")?;
    let loss_cfg = cfg.loss_config();
    let lr = cfg.learning_rate * cfg.lr_scale;

    let mut shuffle_rng = crate::rng::stream(cfg.seed, &[0x7368]);
    let mut dropout_rng = crate::rng::stream(cfg.seed, &[0x6472]);

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut velocity = vec![0.0f64; net.param_count()];
    let mut best_params = net.params().to_vec();
    let mut best_running = net.clone();
    let mut best_dice = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        fisher_yates(&mut order, &mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainSample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (x, target, edges) = batch_tensor(&batch, h, w);
            let plan = net.sample_dropout(&mut dropout_rng, batch.len(), h, w);
            let (probs, tape) = net.forward_train(&x, &plan)?;
            let (loss, d_probs) = loss_and_grad(&probs, &target, &edges, &loss_cfg)?;
            let grads = net.backward(&tape, &plan, &d_probs);
            net.update_running_stats(&tape);
            if cfg.momentum > 0.0 {
                for (v, g) in velocity.iter_mut().zip(&grads) {
                    *v = cfg.momentum * *v + g;
                }
                net.apply_gradients(&velocity, lr);
            } else {
                net.apply_gradients(&grads, lr);
            }
            loss_sum += loss.total;
            steps += 1;
        }
        let (val_loss, val_dice) = evaluate(net, val_set, &loss_cfg)?;
        epochs.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / steps as f64,
            val_loss,
            val_dice,
        });
        if val_dice > best_dice {
            best_dice = val_dice;
            best_epoch = epoch;
            best_params = net.params().to_vec();
            best_running = net.clone();
        }
    }

    // Restore the best checkpoint (parameters and running statistics).
    *net = best_running;
    net.set_params(best_params)?;
    Ok(TrainReport {
        epochs,
        best_epoch,
        best_val_dice: best_dice,
    })
}

/// Repeated SGD steps on a single pair; returns the soft dice trajectory.
pub fn overfit_single_pair(
    net: &mut QuickNatLite,
    sample: &TrainSample,
    steps: usize,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let loss_cfg = cfg.loss_config();
    let lr = cfg.learning_rate * cfg.lr_scale;
    let mut dropout_rng = crate::rng::stream(cfg.seed, &[0x6f76]);
    let refs = [sample];
    let (x, target, edges) = batch_tensor(&refs, sample.h, sample.w);
    let mut dices = Vec::with_capacity(steps);
    for _ in 0..steps {
        let plan = net.sample_dropout(&mut dropout_rng, 1, sample.h, sample.w);
        let (probs, tape) = net.forward_train(&x, &plan)?;
        let (loss, d_probs) = loss_and_grad(&probs, &target, &edges, &loss_cfg)?;
        let grads = net.backward(&tape, &plan, &d_probs);
        net.update_running_stats(&tape);
        net.apply_gradients(&grads, lr);
        dices.push(loss.soft_dice);
    }
    Ok(dices)
}
