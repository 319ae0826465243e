use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Corpus;
use crate::error::{Error, Result};

/// Speaker-to-fold assignment for speaker-disjoint cross-validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: BTreeMap<String, usize>,
    pub seed: u64,
}

/// Fold indices playing each role for one held-out test fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldRoles {
    pub test: usize,
    pub dev: usize,
    pub train: Vec<usize>,
}

/// Shuffles the sorted speaker list with a seeded PRNG and deals speakers
/// round-robin into `k` folds.
pub fn split_speakers(speakers: &[String], k: usize, seed: u64) -> Result<FoldPlan> {
    let unique: BTreeSet<&String> = speakers.iter().collect();
    if k == 0 || k > unique.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot split {} speakers into {k} folds",
            unique.len()
        )));
    }
    let mut order: Vec<&String> = unique.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let assignments = order
        .into_iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), i % k))
        .collect();
    Ok(FoldPlan {
        k,
        assignments,
        seed,
    })
}

pub fn split_folds(corpus: &Corpus, k: usize, seed: u64) -> Result<FoldPlan> {
    split_speakers(&corpus.speakers(), k, seed)
}

impl FoldPlan {
    pub fn fold_of(&self, speaker: &str) -> Option<usize> {
        self.assignments.get(speaker).copied()
    }

    pub fn speakers_in(&self, fold: usize) -> BTreeSet<String> {
        self.assignments
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(s, _)| s.clone())
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignments.values() {
            sizes[f] += 1;
        }
        sizes
    }

    /// Test fold `test`, the next fold (cyclically) as dev, the rest train.
    pub fn roles(&self, test: usize) -> Result<FoldRoles> {
        if self.k < 3 {
            return Err(Error::InvalidArgument(format!(
                "train/dev/test roles need k >= 3, plan has k = {}",
                self.k
            )));
        }
        if test >= self.k {
            return Err(Error::InvalidArgument(format!("fold {test} out of range")));
        }
        let dev = (test + 1) % self.k;
        Ok(FoldRoles {
            test,
            dev,
            train: (0..self.k).filter(|&f| f != test && f != dev).collect(),
        })
    }

    /// Speaker sets for the roles of one test fold.
    pub fn role_speakers(
        &self,
        roles: &FoldRoles,
    ) -> (BTreeSet<String>, BTreeSet<String>, BTreeSet<String>) {
        let train = roles
            .train
            .iter()
            .flat_map(|&f| self.speakers_in(f))
            .collect();
        (train, self.speakers_in(roles.dev), self.speakers_in(roles.test))
    }

    pub fn covers(&self, corpus: &Corpus) -> bool {
        corpus.speakers().iter().all(|s| self.assignments.contains_key(s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn speakers(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("spk{i:03}")).collect()
    }

    #[test]
    fn sixty_six_speakers_five_folds() {
        let plan = split_speakers(&speakers(66), 5, 7).unwrap();
        let mut sizes = plan.fold_sizes();
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        assert_eq!(sizes, vec![14, 13, 13, 13, 13]);
    }

    #[test]
    fn one_speaker_per_fold() {
        let plan = split_speakers(&speakers(5), 5, 1).unwrap();
        assert_eq!(plan.fold_sizes(), vec![1; 5]);
    }

    #[test]
    fn too_many_folds() {
        assert!(split_speakers(&speakers(3), 4, 0).is_err());
        assert!(split_speakers(&speakers(3), 0, 0).is_err());
    }

    #[test]
    fn roles_cycle_dev_fold() {
        let plan = split_speakers(&speakers(10), 5, 0).unwrap();
        let r = plan.roles(4).unwrap();
        assert_eq!(r.dev, 0);
        assert_eq!(r.train, vec![1, 2, 3]);
    }
}
