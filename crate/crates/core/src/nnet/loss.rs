use super::layers::{log_sum_exp, softmax};
use crate::error::{Error, Result};

/// Lower bound applied to predicted probabilities inside the KL divergence.
pub const PROB_FLOOR: f64 = 1e-8;

/// `-log softmax(logits)[class]`, stabilized with log-sum-exp.
pub fn cross_entropy(logits: &[f64], class: usize) -> Result<f64> {
    if logits.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("cross-entropy logits".into()));
    }
    if class >= logits.len() {
        return Err(Error::InvalidArgument(format!("class {class} out of range")));
    }
    Ok(log_sum_exp(logits) - logits[class])
}

/// Gradient of [`cross_entropy`] with respect to the logits.
pub fn cross_entropy_grad(logits: &[f64], class: usize) -> Vec<f64> {
    let mut g = softmax(logits);
    g[class] -= 1.0;
    g
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|&v| v < 0.0 || v.is_nan()) {
        return Err(Error::InvalidArgument(format!("{what} has negative probabilities")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

/// `sum target * ln(target / max(predicted, 1e-8))` with `0 ln 0 = 0`.
pub fn kl_divergence(target: &[f64], predicted: &[f64]) -> Result<f64> {
    if target.len() != predicted.len() {
        return Err(Error::Shape("kl: distributions differ in length".into()));
    }
    check_distribution(target, "target")?;
    check_distribution(predicted, "predicted")?;
    Ok(kl_unchecked(target, predicted))
}

fn kl_unchecked(target: &[f64], predicted: &[f64]) -> f64 {
    target
        .iter()
        .zip(predicted)
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, p)| t * (t / p.max(PROB_FLOOR)).ln())
        .sum()
}

/// KL divergence of `softmax(logits)` from `target`, and its gradient with
/// respect to the logits. Floored coordinates contribute no gradient.
pub fn kl_from_logits(target: &[f64], logits: &[f64]) -> (f64, Vec<f64>) {
    let p = softmax(logits);
    let loss = kl_unchecked(target, &p);
    let live_mass: f64 = target
        .iter()
        .zip(&p)
        .filter(|(_, &pk)| pk > PROB_FLOOR)
        .map(|(t, _)| t)
        .sum();
    let grad = target
        .iter()
        .zip(&p)
        .map(|(&t, &pj)| {
            let own = if pj > PROB_FLOOR { t } else { 0.0 };
            pj * live_mass - own
        })
        .collect();
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_examples() {
        assert!((cross_entropy(&[0.0, 0.0], 0).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!((cross_entropy(&[0.0, 0.0], 1).unwrap() - 2f64.ln()).abs() < 1e-12);
        let v = cross_entropy(&[3f64.ln(), 0.0], 0).unwrap();
        assert!((v - (-(0.75f64).ln())).abs() < 1e-12);
        assert!((v - 0.2877).abs() < 1e-4);
        let big = cross_entropy(&[1000.0, 0.0], 0).unwrap();
        assert!(big.is_finite() && big.abs() < 1e-12);
        assert!(cross_entropy(&[f64::NAN, 0.0], 0).is_err());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_divergence(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        let v = kl_divergence(&[0.5, 0.5], &[0.25, 0.75]).unwrap();
        let hand = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((v - hand).abs() < 1e-12);
        assert!((v - 0.1438).abs() < 1e-4);
        let v = kl_divergence(&[1.0, 0.0], &[1e-8, 1.0 - 1e-8]).unwrap();
        assert!((v - 18.420680743952367).abs() < 1e-9);
        let v = kl_divergence(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!(v.is_finite());
        assert!(kl_divergence(&[-0.1, 1.1], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn kl_grad_is_p_minus_t_when_unfloored() {
        let (_, g) = kl_from_logits(&[0.2, 0.8], &[0.3, -0.4]);
        let p = softmax(&[0.3, -0.4]);
        assert!((g[0] - (p[0] - 0.2)).abs() < 1e-12);
        assert!((g[1] - (p[1] - 0.8)).abs() < 1e-12);
    }
}
