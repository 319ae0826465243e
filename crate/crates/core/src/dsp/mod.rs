//! Signal handling and acoustic feature extraction.

pub mod mfcc;
pub mod norm;
pub mod pitch;
pub mod prosody;
pub mod wav;

use crate::error::{Error, Result};

pub use mfcc::{extract_mfcc_tensor, FeatTensor, N_COEFFS, N_MOMENTS};
pub use norm::{apply_norm, fit_norm_stats, NormStats};
pub use pitch::{extract_f0, PitchTrack};
pub use prosody::{prosodic_features, ProsodicFeatures};

pub const SAMPLE_RATE: u32 = 16_000;
/// Samples per analysis window (25 ms).
pub const FRAME_LEN: usize = 400;
/// Samples per hop (10 ms).
pub const HOP: usize = 160;
/// Minimum number of MFCC frames a word segment must yield.
pub const MIN_FRAMES: usize = 5;

/// Mono audio at 16 kHz.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Signal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate != SAMPLE_RATE {
            return Err(Error::AudioFormat {
                path: "<signal>".into(),
                message: format!("sample rate {sample_rate} Hz, expected {SAMPLE_RATE}"),
            });
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("signal samples".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn from_samples(samples: Vec<f64>) -> Result<Self> {
        Self::new(samples, SAMPLE_RATE)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Number of 400/160 analysis frames for `n` samples (0 when `n < 400`).
pub fn frame_count(n: usize) -> usize {
    if n < FRAME_LEN {
        0
    } else {
        1 + (n - FRAME_LEN) / HOP
    }
}

fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Symmetric reflect padding (repeated as needed) to `target` samples.
pub fn reflect_pad(samples: &[f64], target: usize) -> Vec<f64> {
    let n = samples.len();
    if n >= target || n == 0 {
        return samples.to_vec();
    }
    let left = (target - n) / 2;
    (0..target)
        .map(|j| samples[reflect_index(j as isize - left as isize, n)])
        .collect()
}

/// Cuts `[start, end)` seconds out of `signal`. Segments shorter than
/// [`MIN_FRAMES`] analysis frames are reflect-padded to exactly that length.
pub fn cut_word_segment(signal: &Signal, start: f64, end: f64) -> Result<Signal> {
    let dur = signal.duration();
    if !(start >= 0.0 && start < end && end <= dur + 1e-9) {
        return Err(Error::InvalidArgument(format!(
            "segment {start}..{end} outside 0..{dur}"
        )));
    }
    let sr = signal.sample_rate as f64;
    let s = ((start * sr).round() as usize).min(signal.len().saturating_sub(1));
    let e = ((end * sr).round() as usize).clamp(s + 1, signal.len());
    let min_len = FRAME_LEN + (MIN_FRAMES - 1) * HOP;
    Signal::new(reflect_pad(&signal.samples[s..e], min_len), signal.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> Signal {
        Signal::from_samples((0..n).map(|i| i as f64 / n as f64).collect()).unwrap()
    }

    #[test]
    fn cut_length_matches_times() {
        let s = ramp(16_000);
        assert_eq!(cut_word_segment(&s, 0.52, 0.83).unwrap().len(), 4960);
    }

    #[test]
    fn short_word_is_padded_to_five_frames() {
        let s = ramp(16_000);
        let seg = cut_word_segment(&s, 0.5, 0.52).unwrap();
        assert!(seg.len() >= 1040);
        assert_eq!(frame_count(seg.len()), 5);
        // reflection keeps the original samples in the middle
        let orig = &s.samples()[8000..8320];
        let left = (1040 - 320) / 2;
        assert_eq!(&seg.samples()[left..left + 320], orig);
    }

    #[test]
    fn out_of_range_is_error() {
        let s = ramp(16_000);
        assert!(cut_word_segment(&s, 0.9, 1.2).is_err());
        assert!(cut_word_segment(&s, 0.5, 0.5).is_err());
        assert!(cut_word_segment(&s, -0.1, 0.5).is_err());
    }

    #[test]
    fn reflect_padding_repeats_when_needed() {
        let p = reflect_pad(&[1.0, 2.0, 3.0], 9);
        assert_eq!(p, vec![2.0, 3.0, 2.0, 1.0, 2.0, 3.0, 2.0, 1.0, 2.0]);
    }

    #[test]
    fn rejects_other_rates() {
        assert!(Signal::new(vec![0.0; 10], 44_100).is_err());
    }
}
