use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nnet::param::{join, Param, Parameters};
use crate::nnet::Tensor;

pub const OOV_RANGE: f64 = 0.25;

/// Trainable word-vector table over a fixed vocabulary.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub table: Param,
    words: Vec<String>,
    index: HashMap<String, usize>,
    oov: Vec<String>,
}

impl EmbeddingTable {
    pub fn from_rows(dim: usize, rows: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        let mut words = Vec::with_capacity(rows.len());
        let mut index = HashMap::new();
        for (w, v) in rows {
            if v.len() != dim {
                return Err(Error::Shape(format!("vector for {w} has {} values, expected {dim}", v.len())));
            }
            if index.insert(w.clone(), words.len()).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate word {w}")));
            }
            words.push(w);
            data.extend(v);
        }
        Ok(Self {
            dim,
            table: Param::new(Tensor::from_vec(&[words.len(), dim], data)?),
            words,
            index,
            oov: Vec::new(),
        })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Words that had no pretrained vector.
    pub fn oov_words(&self) -> &[String] {
        &self.oov
    }

    pub fn oov_rate(&self) -> f64 {
        if self.words.is_empty() {
            0.0
        } else {
            self.oov.len() as f64 / self.words.len() as f64
        }
    }

    pub fn row_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn vector(&self, word: &str) -> Option<&[f64]> {
        self.row_of(word).map(|r| self.table.value.row(r))
    }

    pub fn rows_for(&self, words: &[String]) -> Result<Vec<usize>> {
        words
            .iter()
            .map(|w| {
                self.row_of(w)
                    .ok_or_else(|| Error::InvalidArgument(format!("word {w:?} not in embedding table")))
            })
            .collect()
    }

    /// Adds `grad` rows (first `dim` columns of each row of `dx`) to the table gradient.
    pub fn accumulate(&mut self, rows: &[usize], dx: &Tensor) {
        let dim = self.dim;
        for (t, &r) in rows.iter().enumerate() {
            let src = &dx.row(t)[..dim];
            for (g, v) in self.table.grad.row_mut(r).iter_mut().zip(src) {
                *g += v;
            }
        }
    }
}

impl Parameters for EmbeddingTable {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "table"), &mut self.table);
    }
}

fn parse_vectors(text: &str, dim: usize) -> Result<HashMap<String, Vec<f64>>> {
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let loc = format!("line {}", i + 1);
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let vals = parts
            .map(|p| p.parse::<f64>().map_err(|e| Error::parse(&loc, format!("{p:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != dim {
            return Err(Error::parse(&loc, format!("{} values, expected {dim}", vals.len())));
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(&loc, "non-finite value"));
        }
        out.entry(word.to_string()).or_insert(vals);
    }
    Ok(out)
}

/// Builds a table for `vocab` from word-vector text; words missing from
/// the file get seeded uniform(-0.25, 0.25) vectors.
pub fn load_word_embeddings(text: &str, vocab: &[String], dim: usize, seed: u64) -> Result<EmbeddingTable> {
    let mut known = parse_vectors(text, dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut oov = Vec::new();
    let mut rows = Vec::with_capacity(vocab.len());
    for w in vocab {
        let v = match known.remove(w) {
            Some(v) => v,
            None => {
                oov.push(w.clone());
                (0..dim).map(|_| rng.gen_range(-OOV_RANGE..OOV_RANGE)).collect()
            }
        };
        rows.push((w.clone(), v));
    }
    let mut table = EmbeddingTable::from_rows(dim, rows)?;
    table.oov = oov;
    log::info!("embeddings: {} words, OOV rate {:.3}", table.len(), table.oov_rate());
    Ok(table)
}

pub fn load_word_embeddings_file(path: &Path, vocab: &[String], dim: usize, seed: u64) -> Result<EmbeddingTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    load_word_embeddings(&text, vocab, dim, seed)
}
