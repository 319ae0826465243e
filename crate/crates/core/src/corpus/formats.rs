use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{Corpus, Label, Narrative, Token};
use crate::dsp::wav;
use crate::error::{Error, Result};

/// Optional `narrative_id<TAB>speaker_id` map read from the audio directory.
pub const SPEAKERS_FILE: &str = "speakers.tsv";
const TSV_HEADER: &str = "narrative_id\ttoken_index\tword\tlabel\tannotator_count\tpos";

#[derive(Debug, Clone, PartialEq)]
pub struct CtmEntry {
    pub narrative_id: String,
    pub channel: u32,
    pub start: f64,
    pub duration: f64,
    pub word: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRow {
    pub narrative_id: String,
    pub token_index: usize,
    pub word: String,
    pub label: Label,
    pub annotator_count: Option<u32>,
    pub pos: Option<String>,
}

/// Parses CTM-style alignments, one `id channel start duration word` per line.
/// Blank lines and `;;` comments are skipped.
pub fn parse_ctm(text: &str) -> Result<Vec<CtmEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with(";;") {
            continue;
        }
        let loc = || format!("alignment line {}", i + 1);
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 5 {
            return Err(Error::parse(loc(), format!("expected 5 fields, got {}", f.len())));
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(loc(), format!("bad {what} {s:?}")))
        };
        out.push(CtmEntry {
            narrative_id: f[0].to_string(),
            channel: f[1]
                .parse()
                .map_err(|_| Error::parse(loc(), format!("bad channel {:?}", f[1])))?,
            start: num(f[2], "start")?,
            duration: num(f[3], "duration")?,
            word: f[4].to_string(),
        });
    }
    Ok(out)
}

fn optional<T: std::str::FromStr>(s: Option<&&str>) -> std::result::Result<Option<T>, String> {
    match s.map(|v| v.trim()) {
        None | Some("-") | Some("") => Ok(None),
        Some(v) => v.parse().map(Some).map_err(|_| format!("bad value {v:?}")),
    }
}

pub fn parse_annotations(text: &str) -> Result<Vec<AnnotationRow>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || (i == 0 && line.starts_with("narrative_id\t")) {
            continue;
        }
        let loc = || format!("annotation line {}", i + 1);
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 && f.len() != 6 {
            return Err(Error::parse(loc(), format!("expected 6 columns, got {}", f.len())));
        }
        let row = AnnotationRow {
            narrative_id: f[0].to_string(),
            token_index: f[1]
                .parse()
                .map_err(|_| Error::parse(loc(), format!("bad token index {:?}", f[1])))?,
            word: f[2].to_string(),
            label: f[3].trim().parse().map_err(|e: Error| Error::parse(loc(), e.to_string()))?,
            annotator_count: optional(f.get(4)).map_err(|m| Error::parse(loc(), m))?,
            pos: optional(f.get(5)).map_err(|m| Error::parse(loc(), m))?,
        };
        if row.label == Label::I && row.annotator_count == Some(0) {
            return Err(Error::parse(loc(), "label I with annotator_count 0"));
        }
        out.push(row);
    }
    Ok(out)
}

fn parse_speakers(text: &str) -> Result<HashMap<String, String>> {
    let mut map = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || (i == 0 && line.starts_with("narrative_id\t")) {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 2 {
            return Err(Error::parse(format!("{SPEAKERS_FILE} line {}", i + 1), "expected 2 columns"));
        }
        map.insert(f[0].to_string(), f[1].trim().to_string());
    }
    Ok(map)
}

fn default_speaker(narrative_id: &str) -> String {
    narrative_id
        .split_once('_')
        .map(|(s, _)| s.to_string())
        .unwrap_or_else(|| narrative_id.to_string())
}

/// Builds a corpus from alignment and annotation text plus the audio
/// directory holding `<narrative_id>.wav` (16 kHz mono 16-bit PCM).
pub fn ingest(alignment: &str, annotation: &str, audio_dir: &Path) -> Result<Corpus> {
    let rows = parse_annotations(annotation)?;
    if rows.is_empty() {
        return Err(Error::NoNarratives);
    }
    let ctm = parse_ctm(alignment)?;

    let mut order: Vec<String> = Vec::new();
    let mut by_narrative: HashMap<String, Vec<AnnotationRow>> = HashMap::new();
    for r in rows {
        if !by_narrative.contains_key(&r.narrative_id) {
            order.push(r.narrative_id.clone());
        }
        by_narrative.entry(r.narrative_id.clone()).or_default().push(r);
    }
    let mut aligned: HashMap<String, Vec<CtmEntry>> = HashMap::new();
    for e in ctm {
        aligned.entry(e.narrative_id.clone()).or_default().push(e);
    }
    for id in aligned.keys() {
        if !by_narrative.contains_key(id) {
            return Err(Error::Ingest {
                narrative: id.clone(),
                message: "aligned but not annotated".into(),
            });
        }
    }

    let speakers_path = audio_dir.join(SPEAKERS_FILE);
    let speakers = if speakers_path.exists() {
        let text = std::fs::read_to_string(&speakers_path).map_err(|e| Error::io(&speakers_path, e))?;
        parse_speakers(&text)?
    } else {
        HashMap::new()
    };

    let missing: Vec<String> = order
        .iter()
        .map(|id| audio_dir.join(format!("{id}.wav")))
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingAudio(missing));
    }

    let mut narratives = Vec::with_capacity(order.len());
    for id in order {
        let mut rows = by_narrative.remove(&id).unwrap_or_default();
        rows.sort_by_key(|r| r.token_index);
        let entries = aligned.remove(&id).unwrap_or_default();
        let err = |message: String| Error::Ingest {
            narrative: id.clone(),
            message,
        };
        if rows.len() != entries.len() {
            return Err(err(format!(
                "{} annotated tokens but {} aligned tokens",
                rows.len(),
                entries.len()
            )));
        }
        let mut tokens = Vec::with_capacity(rows.len());
        for (i, (row, e)) in rows.into_iter().zip(entries).enumerate() {
            if row.token_index != i {
                return Err(err(format!("token index {} where {i} expected", row.token_index)));
            }
            if row.word != e.word {
                return Err(err(format!(
                    "token {i}: annotated word {:?} != aligned word {:?}",
                    row.word, e.word
                )));
            }
            if e.duration <= 0.0 {
                return Err(err(format!("token {i} has non-positive duration")));
            }
            tokens.push(Token {
                word: row.word,
                start: e.start,
                end: e.start + e.duration,
                label: row.label,
                annotator_count: row.annotator_count,
                pos: row.pos,
            });
        }
        let audio_path = audio_dir.join(format!("{id}.wav"));
        let info = wav::probe(&audio_path)?;
        if let Some(last) = tokens.last() {
            if last.end > info.duration + 1e-9 {
                return Err(err(format!(
                    "token ends at {} beyond audio duration {}",
                    last.end, info.duration
                )));
            }
        }
        narratives.push(Narrative {
            speaker_id: speakers.get(&id).cloned().unwrap_or_else(|| default_speaker(&id)),
            narrative_id: id,
            tokens,
            audio_path,
        });
    }
    Corpus::new(narratives)
}

pub fn ingest_files(alignment: &Path, annotation: &Path, audio_dir: &Path) -> Result<Corpus> {
    let a = std::fs::read_to_string(alignment).map_err(|e| Error::io(alignment, e))?;
    let b = std::fs::read_to_string(annotation).map_err(|e| Error::io(annotation, e))?;
    ingest(&a, &b, audio_dir)
}

/// Duration whose sum with `start` reproduces `end` exactly.
fn exact_duration(start: f64, end: f64) -> f64 {
    let mut d = end - start;
    for _ in 0..8 {
        let e = start + d;
        if e == end {
            break;
        }
        d = if e < end { d.next_up() } else { d.next_down() };
    }
    d
}

pub fn write_ctm(corpus: &Corpus) -> String {
    let mut s = String::new();
    for n in &corpus.narratives {
        for t in &n.tokens {
            let _ = writeln!(
                s,
                "{} 1 {} {} {}",
                n.narrative_id,
                t.start,
                exact_duration(t.start, t.end),
                t.word
            );
        }
    }
    s
}

pub fn write_annotations(corpus: &Corpus) -> String {
    let mut s = String::from(TSV_HEADER);
    s.push('\n');
    for n in &corpus.narratives {
        for (i, t) in n.tokens.iter().enumerate() {
            let count = t.annotator_count.map_or("-".to_string(), |c| c.to_string());
            let pos = t.pos.as_deref().unwrap_or("-");
            let _ = writeln!(s, "{}\t{i}\t{}\t{}\t{count}\t{pos}", n.narrative_id, t.word, t.label);
        }
    }
    s
}

pub fn write_speakers(corpus: &Corpus) -> String {
    let mut s = String::from("narrative_id\tspeaker_id\n");
    for n in &corpus.narratives {
        let _ = writeln!(s, "{}\t{}", n.narrative_id, n.speaker_id);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ctm_line_maps_to_token_fields() {
        let e = parse_ctm("n01 1 0.52 0.31 Wahl\n").unwrap();
        assert_eq!(e[0].word, "Wahl");
        assert_eq!(e[0].start, 0.52);
        assert!((e[0].start + e[0].duration - 0.83).abs() < 1e-12);
    }

    #[test]
    fn ctm_errors_carry_line_numbers() {
        let err = parse_ctm("n01 1 0.5 0.3 a\nn01 1 x 0.3 b\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn annotation_dash_columns() {
        let rows = parse_annotations("n01\t0\tWahl\tI\t-\t-\nn01\t1\tdie\tO\t0\tDET\n").unwrap();
        assert_eq!(rows[0].annotator_count, None);
        assert_eq!(rows[0].pos, None);
        assert_eq!(rows[1].pos.as_deref(), Some("DET"));
        assert!(parse_annotations("n01\t0\tWahl\tX\t-\t-\n").is_err());
    }

    #[test]
    fn exact_duration_reproduces_end() {
        for (s, e) in [(0.52, 0.83), (0.1, 0.3), (1234.5678, 1234.9), (0.0, 1e-3)] {
            assert_eq!(s + exact_duration(s, e), e);
        }
    }

    #[test]
    fn empty_annotation_is_no_narratives() {
        let dir = std::env::temp_dir();
        assert!(matches!(ingest("", "", &dir), Err(Error::NoNarratives)));
    }
}
