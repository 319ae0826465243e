//! Autocorrelation pitch tracker.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{Signal, HOP};

/// 40 ms analysis window.
pub const F0_FRAME_LEN: usize = 640;
pub const F0_MIN: f64 = 60.0;
pub const F0_MAX: f64 = 500.0;
pub const VOICING_THRESHOLD: f64 = 0.45;
/// Candidates within this fraction of the best peak prefer the shorter lag.
const OCTAVE_RATIO: f64 = 0.9;
const ACF_FFT: usize = 1024;

/// Per-frame f0 (0 when unvoiced) and the normalized autocorrelation peak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitchTrack {
    pub f0: Vec<f64>,
    pub strength: Vec<f64>,
}

impl PitchTrack {
    pub fn len(&self) -> usize {
        self.f0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0.is_empty()
    }

    pub fn is_voiced(&self, i: usize) -> bool {
        self.f0[i] > 0.0
    }

    pub fn voiced_fraction(&self) -> f64 {
        if self.f0.is_empty() {
            return 0.0;
        }
        self.f0.iter().filter(|&&f| f > 0.0).count() as f64 / self.f0.len() as f64
    }
}

/// Number of pitch frames; short inputs get one zero-padded frame.
pub fn f0_frame_count(n: usize) -> usize {
    if n == 0 {
        0
    } else if n < F0_FRAME_LEN {
        1
    } else {
        1 + (n - F0_FRAME_LEN) / HOP
    }
}

/// Frame `i` of the pitch grid, zero-padded at the end if needed.
pub fn f0_frame(x: &[f64], i: usize) -> Vec<f64> {
    let start = i * HOP;
    let mut f = vec![0.0; F0_FRAME_LEN];
    let end = (start + F0_FRAME_LEN).min(x.len());
    f[..end - start].copy_from_slice(&x[start..end]);
    f
}

fn lag_range(sample_rate: u32) -> (usize, usize) {
    let sr = sample_rate as f64;
    ((sr / F0_MAX).ceil() as usize, (sr / F0_MIN).floor() as usize)
}

/// Normalized autocorrelation `r[τ]` for `τ in 0..=max_lag`.
pub fn normalized_acf(frame: &[f64], max_lag: usize, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n = frame.len();
    let mean = frame.iter().sum::<f64>() / n as f64;
    let x: Vec<f64> = frame.iter().map(|v| v - mean).collect();
    let size = ACF_FFT.max((n + max_lag).next_power_of_two());
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let mut buf: Vec<Complex<f64>> = (0..size)
        .map(|i| Complex::new(if i < n { x[i] } else { 0.0 }, 0.0))
        .collect();
    fwd.process(&mut buf);
    for b in buf.iter_mut() {
        *b = Complex::new(b.norm_sqr(), 0.0);
    }
    inv.process(&mut buf);
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + x[i] * x[i];
    }
    (0..=max_lag.min(n - 1))
        .map(|tau| {
            let head = prefix[n - tau];
            let tail = prefix[n] - prefix[tau];
            let denom = (head * tail).sqrt();
            if denom <= 1e-300 {
                0.0
            } else {
                (buf[tau].re / size as f64 / denom).clamp(-1.0, 1.0)
            }
        })
        .collect()
}

/// Picks the pitch lag in one frame: `(lag, peak)` with parabolic refinement.
fn pick_peak(r: &[f64], lo: usize, hi: usize) -> Option<(f64, f64)> {
    let mut peaks = Vec::new();
    for tau in lo.max(1)..=hi.min(r.len().saturating_sub(2)) {
        if r[tau] > 0.0 && r[tau] >= r[tau - 1] && r[tau] >= r[tau + 1] {
            peaks.push(tau);
        }
    }
    let best = peaks.iter().map(|&t| r[t]).fold(f64::NEG_INFINITY, f64::max);
    let tau = *peaks.iter().find(|&&t| r[t] >= OCTAVE_RATIO * best)?;
    let (a, b, c) = (r[tau - 1], r[tau], r[tau + 1]);
    let curv = a - 2.0 * b + c;
    let delta = if curv < 0.0 { (0.5 * (a - c) / curv).clamp(-0.5, 0.5) } else { 0.0 };
    let peak = (b - 0.25 * (a - c) * delta).min(1.0);
    Some((tau as f64 + delta, peak))
}

pub fn extract_f0(segment: &Signal) -> PitchTrack {
    let x = segment.samples();
    let (lo, hi) = lag_range(segment.sample_rate());
    let mut planner = FftPlanner::new();
    let n = f0_frame_count(x.len());
    let mut f0 = Vec::with_capacity(n);
    let mut strength = Vec::with_capacity(n);
    for i in 0..n {
        let frame = f0_frame(x, i);
        let r = normalized_acf(&frame, hi + 1, &mut planner);
        match pick_peak(&r, lo, hi) {
            Some((lag, peak)) if peak > VOICING_THRESHOLD => {
                f0.push(segment.sample_rate() as f64 / lag);
                strength.push(peak);
            }
            Some((_, peak)) => {
                f0.push(0.0);
                strength.push(peak.max(0.0));
            }
            None => {
                f0.push(0.0);
                strength.push(0.0);
            }
        }
    }
    PitchTrack { f0, strength }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    use std::f64::consts::PI;

    fn sine(freq: f64, n: usize) -> Signal {
        Signal::from_samples(
            (0..n).map(|i| (2.0 * PI * freq * i as f64 / 16_000.0).sin()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn sine_200() {
        let t = extract_f0(&sine(200.0, 16_000));
        assert_eq!(t.voiced_fraction(), 1.0);
        assert!(t.f0.iter().all(|f| (f - 200.0).abs() < 4.0));
    }

    #[test]
    fn noise_is_unvoiced() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..16_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let t = extract_f0(&Signal::from_samples(x).unwrap());
        assert!(t.voiced_fraction() < 0.2, "{}", t.voiced_fraction());
    }

    #[test]
    fn chirp_rises() {
        // f(t) = 100 + 200 t, phase = 2π(100 t + 100 t²)
        let x: Vec<f64> = (0..16_000)
            .map(|i| {
                let t = i as f64 / 16_000.0;
                (2.0 * PI * (100.0 * t + 100.0 * t * t)).sin()
            })
            .collect();
        let tr = extract_f0(&Signal::from_samples(x).unwrap());
        assert!(tr.f0.iter().all(|&f| f > 0.0));
        assert!(tr.f0.windows(2).all(|w| w[1] >= w[0] - 4.0));
        let mean = tr.f0.iter().sum::<f64>() / tr.len() as f64;
        assert!((mean - 200.0).abs() < 10.0, "{mean}");
    }

    #[test]
    fn silence_and_short_input() {
        let t = extract_f0(&Signal::from_samples(vec![0.0; 1000]).unwrap());
        assert!(t.f0.iter().all(|&f| f == 0.0));
        assert_eq!(f0_frame_count(100), 1);
        assert_eq!(f0_frame_count(0), 0);
    }
}
