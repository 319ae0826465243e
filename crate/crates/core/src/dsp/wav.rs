use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{Signal, SAMPLE_RATE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct WavInfo {
    pub frames: u32,
    pub duration: f64,
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::AudioFormat {
        path: path.display().to_string(),
        message: message.into(),
    }
}

fn open(path: &Path) -> Result<WavReader<std::io::BufReader<std::fs::File>>> {
    let reader = WavReader::open(path).map_err(|e| format_err(path, e.to_string()))?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(format_err(path, format!("{} Hz, expected 16000 Hz", spec.sample_rate)));
    }
    if spec.channels != 1 {
        return Err(format_err(path, format!("{} channels, expected mono", spec.channels)));
    }
    if spec.bits_per_sample != 16 || spec.sample_format != SampleFormat::Int {
        return Err(format_err(path, "expected 16-bit signed PCM"));
    }
    Ok(reader)
}

/// Validates the header and returns the length.
pub fn probe(path: &Path) -> Result<WavInfo> {
    let reader = open(path)?;
    let frames = reader.duration();
    Ok(WavInfo {
        frames,
        duration: frames as f64 / SAMPLE_RATE as f64,
    })
}

pub fn read_wav(path: &Path) -> Result<Signal> {
    let mut reader = open(path)?;
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| format_err(path, e.to_string()))?;
    Signal::from_samples(samples)
}

pub fn to_pcm16(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn write_wav(path: &Path, signal: &Signal) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut w = WavWriter::create(path, spec).map_err(|e| format_err(path, e.to_string()))?;
    for &s in signal.samples() {
        w.write_sample(to_pcm16(s))
            .map_err(|e| format_err(path, e.to_string()))?;
    }
    w.finalize().map_err(|e| format_err(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_rate_check() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let sig = Signal::from_samples(vec![0.0, 0.5, -0.25, 0.999]).unwrap();
        write_wav(&p, &sig).unwrap();
        let back = read_wav(&p).unwrap();
        for (a, b) in sig.samples().iter().zip(back.samples()) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
        assert_eq!(probe(&p).unwrap().frames, 4);

        let bad = dir.path().join("b.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&bad, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        assert!(matches!(probe(&bad), Err(Error::AudioFormat { .. })));
    }
}
