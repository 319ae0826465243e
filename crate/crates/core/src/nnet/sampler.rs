use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Endless stream of sample indices that alternates between the positive
/// and negative class, drawing uniformly with replacement within a class.
/// The stream opens with a positive draw.
#[derive(Debug, Clone)]
pub struct OversampleStream {
    positives: Vec<usize>,
    negatives: Vec<usize>,
    rng: ChaCha8Rng,
    next_positive: bool,
}

impl OversampleStream {
    pub fn new(positive: &[bool], seed: u64) -> Result<Self> {
        let positives: Vec<usize> = (0..positive.len()).filter(|&i| positive[i]).collect();
        let negatives: Vec<usize> = (0..positive.len()).filter(|&i| !positive[i]).collect();
        if positives.is_empty() || negatives.is_empty() {
            return Err(Error::SingleClass(format!(
                "oversampling needs both classes ({} positive, {} negative)",
                positives.len(),
                negatives.len()
            )));
        }
        Ok(Self {
            positives,
            negatives,
            rng: ChaCha8Rng::seed_from_u64(seed),
            next_positive: true,
        })
    }
}

impl Iterator for OversampleStream {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        let pool = if self.next_positive {
            &self.positives
        } else {
            &self.negatives
        };
        self.next_positive = !self.next_positive;
        Some(pool[self.rng.gen_range(0..pool.len())])
    }
}

/// Convenience wrapper returning the stream for a label list.
pub fn oversample_indices(positive: &[bool], seed: u64) -> Result<OversampleStream> {
    OversampleStream::new(positive, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn imbalanced_draws_are_balanced() {
        let mut labels = vec![false; 94];
        labels.extend(vec![true; 6]);
        let draws: Vec<usize> = oversample_indices(&labels, 1).unwrap().take(1000).collect();
        let frac = draws.iter().filter(|&&i| labels[i]).count() as f64 / 1000.0;
        assert!((0.45..=0.55).contains(&frac));
    }

    #[test]
    fn two_samples_alternate() {
        let labels = [false, true];
        let draws: Vec<usize> = oversample_indices(&labels, 9).unwrap().take(8).collect();
        assert_eq!(draws, vec![1, 0, 1, 0, 1, 0, 1, 0]);
    }

    #[test]
    fn deterministic_and_single_class_rejected() {
        let labels: Vec<bool> = (0..50).map(|i| i % 7 == 0).collect();
        let a: Vec<usize> = oversample_indices(&labels, 3).unwrap().take(100).collect();
        let b: Vec<usize> = oversample_indices(&labels, 3).unwrap().take(100).collect();
        assert_eq!(a, b);
        assert!(oversample_indices(&[true, true], 0).is_err());
        assert!(oversample_indices(&[], 0).is_err());
    }
}
