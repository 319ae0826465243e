use serde::{Deserialize, Serialize};

use super::{feat_to_map, ResNet};
use crate::corpus::Label;
use crate::dsp::FeatTensor;
use crate::error::{Error, Result};
use crate::eval::prf1_class_i;
use crate::nnet::loss::{cross_entropy, cross_entropy_grad};
use crate::nnet::{OversampleStream, Parameters, Sgd, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without dev improvement before stopping.
    pub patience: usize,
    /// Stalled epochs before the learning rate is halved.
    pub lr_decay_patience: usize,
    /// Oversampled draws per epoch; defaults to the training-set size.
    pub samples_per_epoch: Option<usize>,
    pub clip_norm: Option<f64>,
    /// Score early stopping on an evenly spaced dev subsample of this size.
    pub dev_limit: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            momentum: 0.9,
            batch_size: 32,
            max_epochs: 50,
            patience: 5,
            lr_decay_patience: 3,
            samples_per_epoch: None,
            clip_norm: Some(5.0),
            dev_limit: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DevMetric {
    Accuracy,
    F1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub train_loss: f64,
    pub dev_metric: f64,
    pub lr: f64,
    /// Mean share of positive samples per batch.
    pub positive_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub best_epoch: Option<usize>,
    pub best_dev: f64,
    pub history: Vec<EpochStats>,
}

fn dev_score(model: &ResNet, xs: &[Tensor], positive: &[bool], metric: DevMetric) -> Result<f64> {
    let mut pred = Vec::with_capacity(xs.len());
    for chunk in xs.chunks(64) {
        let out = model.infer(chunk)?;
        pred.extend(out.logits.data().chunks(2).map(|l| l[0] > l[1]));
    }
    Ok(match metric {
        DevMetric::Accuracy => {
            pred.iter().zip(positive).filter(|(a, b)| a == b).count() as f64 / xs.len() as f64
        }
        DevMetric::F1 => {
            let g: Vec<Label> = positive.iter().map(|&b| Label::from_bool(b)).collect();
            let p: Vec<Label> = pred.iter().map(|&b| Label::from_bool(b)).collect();
            prf1_class_i(&g, &p)?.f1_i
        }
    })
}

/// SGD with cross-entropy on oversampled batches; positives are class 0.
/// Restores the parameters of the best dev epoch.
pub fn train_classifier(
    model: &mut ResNet,
    train: &[Tensor],
    positive: &[bool],
    dev: &[Tensor],
    dev_positive: &[bool],
    metric: DevMetric,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if model.is_frozen() {
        return Err(Error::InvalidArgument("cannot train a frozen model".into()));
    }
    if train.is_empty() || dev.is_empty() {
        return Err(Error::InvalidArgument("training and dev sets must be non-empty".into()));
    }
    if train.len() != positive.len() || dev.len() != dev_positive.len() {
        return Err(Error::Shape("labels do not match inputs".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    let keep: Vec<usize> = match cfg.dev_limit {
        Some(m) if m > 0 && m < dev.len() => (0..m).map(|i| i * dev.len() / m).collect(),
        _ => (0..dev.len()).collect(),
    };
    let dev: Vec<Tensor> = keep.iter().map(|&i| dev[i].clone()).collect();
    let dev_positive: Vec<bool> = keep.iter().map(|&i| dev_positive[i]).collect();
    let mut stream = OversampleStream::new(positive, cfg.seed)?;
    let mut opt = Sgd::new(cfg.lr, cfg.momentum);
    let per_epoch = cfg.samples_per_epoch.unwrap_or(train.len()).max(1);
    let mut report = TrainReport {
        best_epoch: None,
        best_dev: f64::NEG_INFINITY,
        history: Vec::new(),
    };
    let mut best = None;
    let mut stalled = 0;
    for epoch in 0..cfg.max_epochs {
        let mut loss_sum = 0.0;
        let mut frac_sum = 0.0;
        let mut n_batches = 0;
        let mut drawn = 0;
        while drawn < per_epoch {
            let size = cfg.batch_size.min(per_epoch - drawn);
            let idx: Vec<usize> = stream.by_ref().take(size).collect();
            drawn += size;
            let batch: Vec<Tensor> = idx.iter().map(|&i| train[i].clone()).collect();
            model.zero_grad();
            let out = model.forward(&batch, true)?;
            let mut dlogits = Tensor::zeros(&[size, 2]);
            let mut n_pos = 0;
            for (r, &i) in idx.iter().enumerate() {
                let class = if positive[i] { 0 } else { 1 };
                n_pos += positive[i] as usize;
                let l = out.logits.row(r);
                loss_sum += cross_entropy(l, class)? / size as f64;
                let g = cross_entropy_grad(l, class);
                for (d, gv) in dlogits.row_mut(r).iter_mut().zip(g) {
                    *d = gv / size as f64;
                }
            }
            model.backward(&dlogits);
            if let Some(c) = cfg.clip_norm {
                model.clip_grad_norm(c);
            }
            opt.step(model)?;
            frac_sum += n_pos as f64 / size as f64;
            n_batches += 1;
        }
        let score = dev_score(model, &dev, &dev_positive, metric)?;
        log::info!("epoch {epoch}: loss {:.4} dev {:.4}", loss_sum / n_batches as f64, score);
        report.history.push(EpochStats {
            train_loss: loss_sum / n_batches as f64,
            dev_metric: score,
            lr: opt.lr,
            positive_fraction: frac_sum / n_batches as f64,
        });
        if score > report.best_dev {
            report.best_dev = score;
            report.best_epoch = Some(epoch);
            best = Some(model.snapshot());
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= cfg.patience {
                break;
            }
            if cfg.lr_decay_patience > 0 && stalled % cfg.lr_decay_patience == 0 {
                opt.lr *= 0.5;
            }
        }
    }
    if let Some(s) = best {
        model.restore(&s);
    }
    Ok(report)
}

fn split<L: Copy>(items: &[(FeatTensor, L)], pos: impl Fn(L) -> bool) -> (Vec<Tensor>, Vec<bool>) {
    items.iter().map(|(f, l)| (feat_to_map(f), pos(*l))).unzip()
}

/// Neutral-vs-emotional pretraining (`true` = emotional), best dev accuracy.
pub fn pretrain(
    model: &mut ResNet,
    train: &[(FeatTensor, bool)],
    dev: &[(FeatTensor, bool)],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let (x, y) = split(train, |b| b);
    let (dx, dy) = split(dev, |b| b);
    train_classifier(model, &x, &y, &dx, &dy, DevMetric::Accuracy, cfg)
}

/// Word-level EC fine-tuning of all layers, best dev F1-I.
pub fn finetune(
    model: &mut ResNet,
    train: &[(FeatTensor, Label)],
    dev: &[(FeatTensor, Label)],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let (x, y) = split(train, Label::is_ec);
    let (dx, dy) = split(dev, Label::is_ec);
    train_classifier(model, &x, &y, &dx, &dy, DevMetric::F1, cfg)
}
