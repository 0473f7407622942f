//! Actor-disjoint cross-validation folds over a 24-actor corpus.

use serde::Serialize;

use crate::error::{Error, Result};

pub const ACTORS: u32 = 24;
pub const FOLDS: usize = 5;
pub const TEST_ACTORS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FoldSpec {
    pub fold_index: usize,
    pub test_actors: Vec<u32>,
    pub train_actors: Vec<u32>,
}

/// Fold `i` tests actors `4i+1 ..= 4i+4` and trains on the other twenty.
/// Actors 21..=24 are therefore never tested.
pub fn make_folds(actors: &[u32]) -> Result<Vec<FoldSpec>> {
    let mut sorted = actors.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != actors.len() || sorted != (1..=ACTORS).collect::<Vec<_>>() {
        return Err(Error::ActorCount(actors.to_vec()));
    }
    Ok((0..FOLDS)
        .map(|i| {
            let lo = (TEST_ACTORS * i) as u32 + 1;
            let test: Vec<u32> = (lo..lo + TEST_ACTORS as u32).collect();
            FoldSpec {
                fold_index: i,
                train_actors: sorted.iter().copied().filter(|a| !test.contains(a)).collect(),
                test_actors: test,
            }
        })
        .collect())
}

impl FoldSpec {
    /// Lists every violated fold invariant; empty when the fold is valid.
    pub fn violations(&self, all: &[u32]) -> Vec<String> {
        let mut v = Vec::new();
        if self.test_actors.len() != TEST_ACTORS || self.train_actors.len() != all.len() - TEST_ACTORS {
            v.push(format!(
                "split is {}/{} instead of {}/{TEST_ACTORS}",
                self.train_actors.len(),
                self.test_actors.len(),
                all.len() - TEST_ACTORS
            ));
        }
        if self.test_actors.iter().any(|a| self.train_actors.contains(a)) {
            v.push("train and test actors overlap".into());
        }
        let mut union: Vec<u32> = self.test_actors.iter().chain(&self.train_actors).copied().collect();
        union.sort_unstable();
        if union != all {
            v.push("train ∪ test differs from the actor set".into());
        }
        let even = self.test_actors.iter().filter(|a| *a % 2 == 0).count();
        if even * 2 != self.test_actors.len() {
            v.push(format!("{even} even test actors out of {}", self.test_actors.len()));
        }
        v
    }
}
