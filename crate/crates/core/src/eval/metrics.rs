use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};

/// Class-I scores. Precision and recall are percentages, F1 a fraction.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub precision_i: f64,
    pub recall_i: f64,
    pub f1_i: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

/// F1 from fractional precision and recall; 0 when both are 0.
pub fn f1_from_pr(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl Metrics {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        Self {
            precision_i: 100.0 * p,
            recall_i: 100.0 * r,
            f1_i: f1_from_pr(p, r),
            tp,
            fp,
            fn_,
        }
    }
}

pub fn prf1_class_i(gold: &[Label], pred: &[Label]) -> Result<Metrics> {
    if gold.len() != pred.len() {
        return Err(Error::Shape(format!(
            "{} gold labels vs {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (g, p) in gold.iter().zip(pred) {
        match (g, p) {
            (Label::I, Label::I) => tp += 1,
            (Label::O, Label::I) => fp += 1,
            (Label::I, Label::O) => fn_ += 1,
            (Label::O, Label::O) => {}
        }
    }
    Ok(Metrics::from_counts(tp, fp, fn_))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselinePolicy {
    /// Fair coin per token.
    EqualPriors,
    /// Predict I with the class prior.
    ClassPriors,
}

impl BaselinePolicy {
    pub fn p_predict_i(self, prior_i: f64) -> f64 {
        match self {
            BaselinePolicy::EqualPriors => 0.5,
            BaselinePolicy::ClassPriors => prior_i,
        }
    }
}

/// Expected scores of a label-independent random guesser.
pub fn baseline_expected(prior_i: f64, policy: BaselinePolicy) -> Metrics {
    let r = policy.p_predict_i(prior_i);
    let p = prior_i;
    Metrics {
        precision_i: 100.0 * p,
        recall_i: 100.0 * r,
        f1_i: f1_from_pr(p, r),
        ..Default::default()
    }
}

/// Random predictions for `gold` under `policy`, with the prior estimated
/// by the caller (usually from training data).
pub fn baseline_predictions(gold_len: usize, prior_i: f64, policy: BaselinePolicy, seed: u64) -> Vec<Label> {
    let q = policy.p_predict_i(prior_i);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..gold_len).map(|_| Label::from_bool(rng.gen::<f64>() < q)).collect()
}

/// Monte Carlo check of [`baseline_expected`]: draws `n_tokens` gold labels
/// at `prior_i` and scores random predictions.
pub fn simulate_baseline(prior_i: f64, policy: BaselinePolicy, n_tokens: usize, seed: u64) -> Metrics {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gold: Vec<Label> = (0..n_tokens).map(|_| Label::from_bool(rng.gen::<f64>() < prior_i)).collect();
    let pred = baseline_predictions(n_tokens, prior_i, policy, rng.gen());
    prf1_class_i(&gold, &pred).expect("equal lengths")
}

/// Per-fold metrics with mean and population std over folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub per_fold: Vec<Metrics>,
    pub mean: Metrics,
    pub std: Metrics,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

impl FoldMetrics {
    pub fn aggregate(per_fold: Vec<Metrics>) -> Result<Self> {
        if per_fold.is_empty() {
            return Err(Error::InvalidArgument("no folds to aggregate".into()));
        }
        let col = |f: fn(&Metrics) -> f64| per_fold.iter().map(f).collect::<Vec<_>>();
        let (pm, ps) = mean_std(&col(|m| m.precision_i));
        let (rm, rs) = mean_std(&col(|m| m.recall_i));
        let (fm, fs) = mean_std(&col(|m| m.f1_i));
        let sum = |f: fn(&Metrics) -> u64| per_fold.iter().map(f).sum::<u64>();
        Ok(Self {
            mean: Metrics {
                precision_i: pm,
                recall_i: rm,
                f1_i: fm,
                tp: sum(|m| m.tp),
                fp: sum(|m| m.fp),
                fn_: sum(|m| m.fn_),
            },
            std: Metrics {
                precision_i: ps,
                recall_i: rs,
                f1_i: fs,
                ..Default::default()
            },
            per_fold,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{I, O};

    #[test]
    fn hand_case() {
        let gold = [I, I, I, I, I, O, O];
        let pred = [I, I, I, O, O, I, O];
        let m = prf1_class_i(&gold, &pred).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (3, 1, 2));
        assert!((m.precision_i - 75.0).abs() < 1e-12);
        assert!((m.recall_i - 60.0).abs() < 1e-12);
        assert!((m.f1_i - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_cases() {
        let gold = [I, O, I];
        assert_eq!(prf1_class_i(&gold, &[O, O, O]).unwrap().f1_i, 0.0);
        let m = prf1_class_i(&gold, &gold).unwrap();
        assert_eq!((m.precision_i, m.recall_i, m.f1_i), (100.0, 100.0, 1.0));
        assert!(prf1_class_i(&gold, &[O]).is_err());
    }

    #[test]
    fn baselines() {
        let e = baseline_expected(0.066, BaselinePolicy::EqualPriors);
        assert!((e.f1_i - 2.0 * 0.066 * 0.5 / 0.566).abs() < 1e-12);
        let c = baseline_expected(0.5, BaselinePolicy::ClassPriors);
        assert!((c.f1_i - 0.5).abs() < 1e-12);
    }

    #[test]
    fn population_std() {
        let fm = FoldMetrics::aggregate(vec![
            Metrics::from_counts(1, 0, 0),
            Metrics::from_counts(0, 1, 1),
        ])
        .unwrap();
        assert!((fm.mean.f1_i - 0.5).abs() < 1e-12);
        assert!((fm.std.f1_i - 0.5).abs() < 1e-12);
    }
}
