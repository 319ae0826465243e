use serde::{Deserialize, Serialize};

use super::mfcc::{FeatTensor, N_COEFFS, N_MOMENTS};
use crate::error::{Error, Result};
use crate::nnet::tensor::compensated_sum;

pub const STD_FLOOR: f64 = 1e-8;
const N_CHANNELS: usize = N_COEFFS * N_MOMENTS;

/// Per-(coefficient, moment) statistics, indexed `coeff * 3 + moment`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn mean_at(&self, coeff: usize, moment: usize) -> f64 {
        self.mean[coeff * N_MOMENTS + moment]
    }

    pub fn std_at(&self, coeff: usize, moment: usize) -> f64 {
        self.std[coeff * N_MOMENTS + moment]
    }
}

fn channel_values<'a>(
    tensors: &'a [FeatTensor],
    c: usize,
    m: usize,
) -> impl Iterator<Item = f64> + 'a {
    tensors
        .iter()
        .flat_map(move |t| (0..t.n_frames).map(move |f| t.get(c, f, m)))
}

/// Population mean and std pooled over every frame of every tensor.
pub fn fit_norm_stats(tensors: &[FeatTensor]) -> Result<NormStats> {
    let n: usize = tensors.iter().map(|t| t.n_frames).sum();
    if n == 0 {
        return Err(Error::InvalidArgument("no frames to fit normalization on".into()));
    }
    let mut mean = vec![0.0; N_CHANNELS];
    let mut std = vec![0.0; N_CHANNELS];
    for c in 0..N_COEFFS {
        for m in 0..N_MOMENTS {
            let mu = compensated_sum(channel_values(tensors, c, m)) / n as f64;
            let var =
                compensated_sum(channel_values(tensors, c, m).map(|v| (v - mu) * (v - mu)))
                    / n as f64;
            mean[c * N_MOMENTS + m] = mu;
            std[c * N_MOMENTS + m] = var.sqrt().max(STD_FLOOR);
        }
    }
    Ok(NormStats { mean, std })
}

pub fn apply_norm(tensor: &FeatTensor, stats: &NormStats) -> FeatTensor {
    let mut out = tensor.clone();
    for c in 0..N_COEFFS {
        for m in 0..N_MOMENTS {
            let (mu, sd) = (stats.mean_at(c, m), stats.std_at(c, m));
            for t in 0..tensor.n_frames {
                out.set(c, t, m, (tensor.get(c, t, m) - mu) / sd);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn filled(n: usize, v: f64) -> FeatTensor {
        let mut t = FeatTensor::zeros(n);
        t.data.iter_mut().for_each(|x| *x = v);
        t
    }

    #[test]
    fn two_values_hand_case() {
        let s = fit_norm_stats(&[filled(1, 1.0), filled(1, 3.0)]).unwrap();
        assert!(s.mean.iter().all(|&m| (m - 2.0).abs() < 1e-15));
        assert!(s.std.iter().all(|&d| (d - 1.0).abs() < 1e-15));
    }

    #[test]
    fn constant_channel_is_floored() {
        let s = fit_norm_stats(&[filled(4, 5.0)]).unwrap();
        assert!(s.std.iter().all(|&d| d == STD_FLOOR));
        let n = apply_norm(&filled(4, 5.0), &s);
        assert!(n.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn empty_is_error() {
        assert!(fit_norm_stats(&[]).is_err());
    }
}
