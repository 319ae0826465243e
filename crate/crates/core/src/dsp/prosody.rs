//! Word-level prosodic descriptors.

use serde::{Deserialize, Serialize};

use super::pitch::{f0_frame, f0_frame_count, PitchTrack};
use super::Signal;
use crate::error::{Error, Result};

const RMS_FLOOR: f64 = 1e-10;
const HNR_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProsodicFeatures {
    pub f0_mean: Option<f64>,
    pub f0_delta_mean: Option<f64>,
    pub f0_delta2_mean: Option<f64>,
    pub energy_mean: f64,
    pub energy_delta_mean: f64,
    pub energy_delta2_mean: f64,
    pub hnr_mean: Option<f64>,
    pub jitter: Option<f64>,
    pub shimmer: Option<f64>,
    pub voiced_fraction: f64,
}

impl ProsodicFeatures {
    pub const FIELDS: [&'static str; 10] = [
        "f0_mean",
        "f0_delta_mean",
        "f0_delta2_mean",
        "energy_mean",
        "energy_delta_mean",
        "energy_delta2_mean",
        "hnr_mean",
        "jitter",
        "shimmer",
        "voiced_fraction",
    ];

    pub fn values(&self) -> [Option<f64>; 10] {
        [
            self.f0_mean,
            self.f0_delta_mean,
            self.f0_delta2_mean,
            Some(self.energy_mean),
            Some(self.energy_delta_mean),
            Some(self.energy_delta2_mean),
            self.hnr_mean,
            self.jitter,
            self.shimmer,
            Some(self.voiced_fraction),
        ]
    }

    pub fn get(&self, field: &str) -> Option<f64> {
        let i = Self::FIELDS.iter().position(|f| *f == field)?;
        self.values()[i]
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

fn diff(v: &[f64]) -> Vec<f64> {
    v.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Splits a sequence into maximal runs of present values.
fn runs(seq: &[Option<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    for v in seq {
        match v {
            Some(x) => cur.push(*x),
            None if !cur.is_empty() => out.push(std::mem::take(&mut cur)),
            None => {}
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// `mean |v_i - v_{i-1}| / mean v` over consecutive present values.
/// Absent when no two consecutive values exist.
pub fn local_perturbation(seq: &[Option<f64>]) -> Option<f64> {
    let mut diffs = Vec::new();
    let mut vals = Vec::new();
    for run in runs(seq).into_iter().filter(|r| r.len() >= 2) {
        diffs.extend(diff(&run).iter().map(|d| d.abs()));
        vals.extend(run);
    }
    let m = mean(&vals)?;
    if m <= 0.0 {
        return None;
    }
    Some(mean(&diffs)? / m)
}

fn frame_energy_db(frame: &[f64], n_valid: usize) -> f64 {
    let n = n_valid.max(1);
    let rms = (frame[..n].iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    20.0 * rms.max(RMS_FLOOR).log10()
}

pub fn prosodic_features(segment: &Signal, f0: &PitchTrack) -> Result<ProsodicFeatures> {
    let x = segment.samples();
    let n = f0_frame_count(x.len());
    if f0.len() != n || f0.strength.len() != n {
        return Err(Error::Shape(format!(
            "pitch track has {} frames, segment has {n}",
            f0.len()
        )));
    }
    let mut energy = Vec::with_capacity(n);
    let mut periods = Vec::with_capacity(n);
    let mut amps = Vec::with_capacity(n);
    let mut hnr = Vec::new();
    let mut voiced_f0 = Vec::with_capacity(n);
    for i in 0..n {
        let frame = f0_frame(x, i);
        let valid = (x.len() - i * super::HOP).min(frame.len());
        energy.push(frame_energy_db(&frame, valid));
        if f0.is_voiced(i) {
            let r = f0.strength[i].clamp(HNR_CLAMP, 1.0 - HNR_CLAMP);
            hnr.push(10.0 * (r / (1.0 - r)).log10());
            periods.push(Some(1.0 / f0.f0[i]));
            amps.push(Some(frame.iter().fold(0.0f64, |a, v| a.max(v.abs()))));
            voiced_f0.push(Some(f0.f0[i]));
        } else {
            periods.push(None);
            amps.push(None);
            voiced_f0.push(None);
        }
    }
    let f0_runs = runs(&voiced_f0);
    let all_f0: Vec<f64> = f0_runs.iter().flatten().copied().collect();
    let d1: Vec<f64> = f0_runs.iter().flat_map(|r| diff(r)).collect();
    let d2: Vec<f64> = f0_runs.iter().flat_map(|r| diff(&diff(r))).collect();
    let e1 = diff(&energy);
    let e2 = diff(&e1);
    Ok(ProsodicFeatures {
        f0_mean: mean(&all_f0),
        f0_delta_mean: mean(&d1),
        f0_delta2_mean: mean(&d2),
        energy_mean: mean(&energy).unwrap_or(20.0 * RMS_FLOOR.log10()),
        energy_delta_mean: mean(&e1).unwrap_or(0.0),
        energy_delta2_mean: mean(&e2).unwrap_or(0.0),
        hnr_mean: mean(&hnr),
        jitter: local_perturbation(&periods),
        shimmer: local_perturbation(&amps),
        voiced_fraction: f0.voiced_fraction(),
    })
}

fn csv_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// One row of the per-token prosody export.
#[derive(Debug, Clone)]
pub struct ProsodyRow {
    pub narrative_id: String,
    pub token_index: usize,
    pub word: String,
    pub label: String,
    pub features: ProsodicFeatures,
}

pub fn prosody_csv(rows: &[ProsodyRow]) -> String {
    let mut out = String::from("narrative_id,token_index,word,label");
    for f in ProsodicFeatures::FIELDS {
        out.push(',');
        out.push_str(f);
    }
    out.push('\n');
    for r in rows {
        let word = if r.word.contains([',', '"', '\n']) {
            format!("\"{}\"", r.word.replace('"', "\"\""))
        } else {
            r.word.clone()
        };
        out.push_str(&format!("{},{},{},{}", r.narrative_id, r.token_index, word, r.label));
        for v in r.features.values() {
            out.push(',');
            out.push_str(&csv_cell(v));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::extract_f0;
    use std::f64::consts::PI;

    fn sine(freq: f64, amp: f64, n: usize) -> Signal {
        Signal::from_samples(
            (0..n)
                .map(|i| amp * (2.0 * PI * freq * i as f64 / 16_000.0).sin())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn alternating_periods() {
        let p: Vec<Option<f64>> = (0..10).map(|i| Some(if i % 2 == 0 { 5.0 } else { 5.5 })).collect();
        assert!((local_perturbation(&p).unwrap() - 0.5 / 5.25).abs() < 1e-12);
        let a: Vec<Option<f64>> = (0..10).map(|i| Some(if i % 2 == 0 { 1.0 } else { 0.8 })).collect();
        assert!((local_perturbation(&a).unwrap() - 0.2 / 0.9).abs() < 1e-12);
    }

    #[test]
    fn too_few_voiced_frames_is_absent() {
        assert_eq!(local_perturbation(&[Some(1.0), None, Some(2.0)]), None);
        assert_eq!(local_perturbation(&[]), None);
    }

    #[test]
    fn perfect_sine_has_no_perturbation() {
        let s = sine(200.0, 0.5, 8000);
        let p = prosodic_features(&s, &extract_f0(&s)).unwrap();
        assert!(p.jitter.unwrap() < 1e-9);
        assert!(p.shimmer.unwrap() < 1e-9);
        assert!(p.hnr_mean.unwrap() > 20.0);
        assert_eq!(p.voiced_fraction, 1.0);
    }

    #[test]
    fn scaling_shifts_energy() {
        let a = sine(150.0, 0.2, 6000);
        let b = sine(150.0, 0.6, 6000);
        let pa = prosodic_features(&a, &extract_f0(&a)).unwrap();
        let pb = prosodic_features(&b, &extract_f0(&b)).unwrap();
        assert!((pb.energy_mean - pa.energy_mean - 20.0 * 3f64.log10()).abs() < 1e-6);
        assert!((pb.f0_mean.unwrap() - pa.f0_mean.unwrap()).abs() < 1e-6);
    }

    #[test]
    fn silence_has_no_pitch_stats() {
        let s = Signal::from_samples(vec![0.0; 3000]).unwrap();
        let p = prosodic_features(&s, &extract_f0(&s)).unwrap();
        assert_eq!(p.f0_mean, None);
        assert_eq!(p.jitter, None);
        assert_eq!(p.voiced_fraction, 0.0);
    }

    #[test]
    fn csv_header() {
        let csv = prosody_csv(&[]);
        assert!(csv.starts_with("narrative_id,token_index,word,label,f0_mean,"));
    }
}
