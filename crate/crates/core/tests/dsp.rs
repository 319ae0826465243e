use std::f64::consts::PI;

use ecpipe::dsp::mfcc::{hz_to_mel, mel_center_frequencies, mel_edges, mel_to_hz};
use ecpipe::dsp::{extract_f0, extract_mfcc_tensor, frame_count, prosodic_features, Signal};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn voice(f0: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phase = 0.0;
    (0..n)
        .map(|i| {
            let f = f0 + 6.0 * (2.0 * PI * 3.0 * i as f64 / 16000.0).sin();
            phase += 2.0 * PI * f / 16000.0;
            let amp = 0.3 * (1.0 + 0.2 * (2.0 * PI * 5.0 * i as f64 / 16000.0).sin());
            amp * (phase.sin() + 0.5 * (2.0 * phase).sin()) + 0.003 * rng.gen_range(-1.0..1.0)
        })
        .collect()
}

#[test]
fn frame_count_law() {
    for n in 400..3000 {
        assert_eq!(frame_count(n), 1 + (n - 400) / 160, "n = {n}");
        let s = Signal::from_samples(vec![0.01; n]).unwrap();
        assert_eq!(extract_mfcc_tensor(&s).unwrap().n_frames, frame_count(n));
    }
}

#[test]
fn mel_scale_round_trips() {
    for f in [0.0, 100.0, 700.0, 1000.0, 4000.0, 8000.0] {
        assert!((mel_to_hz(hz_to_mel(f)) - f).abs() < 1e-9);
    }
    assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-9);
    let e = mel_edges();
    assert_eq!(e.len(), 42);
    assert_eq!(e[0], 0.0);
    assert!((e[41] - 8000.0).abs() < 1e-9);
    let c = mel_center_frequencies();
    assert!(c.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn amplitude_scaling_invariance() {
    let x = voice(160.0, 6400, 1);
    let base = Signal::from_samples(x.clone()).unwrap();
    let f0 = extract_f0(&base);
    let a = prosodic_features(&base, &f0).unwrap();
    for c in [0.5, 2.0] {
        let scaled = Signal::from_samples(x.iter().map(|v| v * c).collect()).unwrap();
        let f0s = extract_f0(&scaled);
        for (u, v) in f0.f0.iter().zip(&f0s.f0) {
            assert!((u - v).abs() < 1e-6);
        }
        let b = prosodic_features(&scaled, &f0s).unwrap();
        assert!((a.jitter.unwrap() - b.jitter.unwrap()).abs() < 1e-6);
        assert!((a.shimmer.unwrap() - b.shimmer.unwrap()).abs() < 1e-6);
        let shift = b.energy_mean - a.energy_mean;
        assert!((shift - 20.0 * c.log10()).abs() < 1e-6, "shift {shift}");
    }
}

#[test]
fn one_hop_of_silence_shifts_frames() {
    let x = voice(210.0, 4800, 2);
    let mut shifted = vec![0.0; 160];
    shifted.extend_from_slice(&x);
    let a = extract_mfcc_tensor(&Signal::from_samples(x).unwrap()).unwrap();
    let b = extract_mfcc_tensor(&Signal::from_samples(shifted).unwrap()).unwrap();
    assert_eq!(b.n_frames, a.n_frames + 1);
    let t_len = a.n_frames;
    for c in 0..40 {
        for t in 0..t_len {
            assert!((a.get(c, t, 0) - b.get(c, t + 1, 0)).abs() < 1e-9);
        }
        for t in 2..t_len - 2 {
            assert!((a.get(c, t, 1) - b.get(c, t + 1, 1)).abs() < 1e-9);
        }
        for t in 4..t_len - 4 {
            assert!((a.get(c, t, 2) - b.get(c, t + 1, 2)).abs() < 1e-9);
        }
    }
}

#[test]
fn constant_tensor_has_zero_moments() {
    // A periodic signal whose period divides the hop gives identical frames.
    let x: Vec<f64> = (0..3200).map(|i| 0.4 * (2.0 * PI * 400.0 * i as f64 / 16000.0).sin()).collect();
    let t = extract_mfcc_tensor(&Signal::from_samples(x).unwrap()).unwrap();
    for c in 0..40 {
        for f in 0..t.n_frames {
            assert!(t.get(c, f, 1).abs() < 1e-9 && t.get(c, f, 2).abs() < 1e-9);
        }
    }
}

#[test]
fn harmonic_voice_tracks_f0() {
    for f in [95.0, 180.0, 330.0] {
        let track = extract_f0(&Signal::from_samples(voice(f, 8000, 3)).unwrap());
        let voiced: Vec<f64> = track.f0.iter().copied().filter(|&v| v > 0.0).collect();
        assert!(voiced.len() as f64 >= 0.9 * track.len() as f64);
        let m = voiced.iter().sum::<f64>() / voiced.len() as f64;
        assert!((m - f).abs() / f < 0.02, "{f}: {m}");
    }
}
