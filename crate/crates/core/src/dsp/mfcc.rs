//! MFCC tensors with delta and delta-delta moments.

use std::f64::consts::PI;
use std::sync::OnceLock;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{frame_count, Signal, FRAME_LEN, HOP, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const N_FFT: usize = 512;
pub const N_MELS: usize = 40;
pub const N_COEFFS: usize = 40;
pub const N_MOMENTS: usize = 3;
pub const LOG_FLOOR: f64 = 1e-10;
pub const DELTA_WIDTH: usize = 2;

/// 40 × T × 3, stored row-major as `[coeff][frame][moment]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatTensor {
    pub data: Vec<f64>,
    pub n_frames: usize,
    pub word_ref: Option<(String, usize)>,
}

impl FeatTensor {
    pub fn zeros(n_frames: usize) -> Self {
        Self {
            data: vec![0.0; N_COEFFS * n_frames * N_MOMENTS],
            n_frames,
            word_ref: None,
        }
    }

    #[inline]
    fn idx(&self, c: usize, t: usize, m: usize) -> usize {
        (c * self.n_frames + t) * N_MOMENTS + m
    }

    pub fn get(&self, c: usize, t: usize, m: usize) -> f64 {
        self.data[self.idx(c, t, m)]
    }

    pub fn set(&mut self, c: usize, t: usize, m: usize, v: f64) {
        let i = self.idx(c, t, m);
        self.data[i] = v;
    }

    pub fn shape(&self) -> [usize; 3] {
        [N_COEFFS, self.n_frames, N_MOMENTS]
    }

    /// Rearranges into a `[moment][coeff][frame]` map (channels first).
    pub fn to_channels_first(&self) -> Vec<f64> {
        let t_len = self.n_frames;
        let mut out = vec![0.0; N_MOMENTS * N_COEFFS * t_len];
        for c in 0..N_COEFFS {
            for t in 0..t_len {
                for m in 0..N_MOMENTS {
                    out[(m * N_COEFFS + c) * t_len + t] = self.get(c, t, m);
                }
            }
        }
        out
    }

    pub fn with_ref(mut self, narrative_id: &str, token_index: usize) -> Self {
        self.word_ref = Some((narrative_id.to_string(), token_index));
        self
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Edge frequencies of the filterbank (`N_MELS + 2` points, 0 to Nyquist).
pub fn mel_edges() -> Vec<f64> {
    let hi = hz_to_mel(SAMPLE_RATE as f64 / 2.0);
    (0..N_MELS + 2)
        .map(|i| mel_to_hz(hi * i as f64 / (N_MELS + 1) as f64))
        .collect()
}

pub fn mel_center_frequencies() -> Vec<f64> {
    mel_edges()[1..=N_MELS].to_vec()
}

/// Triangular filter weights, `[N_MELS][N_FFT/2 + 1]`.
pub fn mel_filterbank() -> &'static [Vec<f64>] {
    static BANK: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    BANK.get_or_init(|| {
        let edges = mel_edges();
        let n_bins = N_FFT / 2 + 1;
        (0..N_MELS)
            .map(|m| {
                let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                (0..n_bins)
                    .map(|k| {
                        let f = k as f64 * SAMPLE_RATE as f64 / N_FFT as f64;
                        if f <= lo || f >= hi {
                            0.0
                        } else if f <= mid {
                            (f - lo) / (mid - lo)
                        } else {
                            (hi - f) / (hi - mid)
                        }
                    })
                    .collect()
            })
            .collect()
    })
}

pub fn hamming(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

fn window() -> &'static [f64] {
    static W: OnceLock<Vec<f64>> = OnceLock::new();
    W.get_or_init(|| hamming(FRAME_LEN))
}

/// Power spectrum of one windowed, zero-padded 400-sample frame.
pub fn power_spectrum(frame: &[f64]) -> Vec<f64> {
    let mut planner = FftPlanner::<f64>::new();
    power_spectra(&[frame], &mut planner).pop().unwrap()
}

fn power_spectra(frames: &[&[f64]], planner: &mut FftPlanner<f64>) -> Vec<Vec<f64>> {
    let fft = planner.plan_fft_forward(N_FFT);
    let w = window();
    let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
    frames
        .iter()
        .map(|frame| {
            for (i, b) in buf.iter_mut().enumerate() {
                *b = if i < FRAME_LEN {
                    Complex::new(frame[i] * w[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            fft.process(&mut buf);
            buf[..=N_FFT / 2].iter().map(|c| c.norm_sqr()).collect()
        })
        .collect()
}

/// Mel filterbank energies (linear, before the log) for a power spectrum.
pub fn mel_filterbank_energies(power: &[f64]) -> Vec<f64> {
    mel_filterbank()
        .iter()
        .map(|h| h.iter().zip(power).map(|(a, b)| a * b).sum())
        .collect()
}

fn dct_matrix() -> &'static [Vec<f64>] {
    static D: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    D.get_or_init(|| {
        let m = N_MELS as f64;
        (0..N_COEFFS)
            .map(|n| {
                let scale = if n == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
                (0..N_MELS)
                    .map(|j| scale * (PI * n as f64 * (j as f64 + 0.5) / m).cos())
                    .collect()
            })
            .collect()
    })
}

/// Orthonormal DCT-II of the floored log filterbank energies.
pub fn cepstrum(energies: &[f64]) -> Vec<f64> {
    let logs: Vec<f64> = energies.iter().map(|&e| e.max(LOG_FLOOR).ln()).collect();
    dct_matrix()
        .iter()
        .map(|row| row.iter().zip(&logs).map(|(a, b)| a * b).sum())
        .collect()
}

/// Regression deltas over a `±DELTA_WIDTH` window with edge replication.
pub fn deltas(x: &[f64]) -> Vec<f64> {
    let n = x.len() as isize;
    let denom: f64 = 2.0 * (1..=DELTA_WIDTH).map(|k| (k * k) as f64).sum::<f64>();
    (0..n)
        .map(|t| {
            let mut acc = 0.0;
            for k in 1..=DELTA_WIDTH as isize {
                let fwd = x[(t + k).min(n - 1) as usize];
                let bwd = x[(t - k).max(0) as usize];
                acc += k as f64 * (fwd - bwd);
            }
            acc / denom
        })
        .collect()
}

pub fn extract_mfcc_tensor(segment: &Signal) -> Result<FeatTensor> {
    let x = segment.samples();
    if x.is_empty() {
        return Err(Error::InvalidArgument("empty segment".into()));
    }
    let t_len = frame_count(x.len());
    if t_len == 0 {
        return Err(Error::InvalidArgument(format!(
            "segment of {} samples is shorter than one {FRAME_LEN}-sample frame",
            x.len()
        )));
    }
    let frames: Vec<&[f64]> = (0..t_len).map(|t| &x[t * HOP..t * HOP + FRAME_LEN]).collect();
    let mut planner = FftPlanner::new();
    let spectra = power_spectra(&frames, &mut planner);
    let mut out = FeatTensor::zeros(t_len);
    let mut tracks = vec![vec![0.0; t_len]; N_COEFFS];
    for (t, p) in spectra.iter().enumerate() {
        for (c, v) in cepstrum(&mel_filterbank_energies(p)).into_iter().enumerate() {
            tracks[c][t] = v;
        }
    }
    for (c, track) in tracks.iter().enumerate() {
        let d1 = deltas(track);
        let d2 = deltas(&d1);
        for t in 0..t_len {
            out.set(c, t, 0, track[t]);
            out.set(c, t, 1, d1[t]);
            out.set(c, t, 2, d2[t]);
        }
    }
    Ok(out)
}
