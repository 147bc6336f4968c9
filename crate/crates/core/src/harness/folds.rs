use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::HarnessError;
use crate::telemetry::Group;

/// Disjoint subject folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FoldPlan {
    pub folds: Vec<Vec<String>>,
}

/// Subject ids of one cross-validation iteration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Split {
    pub test_fold: usize,
    pub val_fold: usize,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Split {
    /// Errors unless train, validation and test are pairwise disjoint.
    pub fn check_disjoint(&self) -> Result<(), HarnessError> {
        let tr: BTreeSet<&String> = self.train.iter().collect();
        let va: BTreeSet<&String> = self.val.iter().collect();
        let te: BTreeSet<&String> = self.test.iter().collect();
        let overlap: Vec<String> = tr
            .intersection(&va)
            .chain(tr.intersection(&te))
            .chain(va.intersection(&te))
            .map(|s| s.to_string())
            .collect();
        if overlap.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::Leakage(overlap))
        }
    }
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    pub fn fold_of(&self, subject: &str) -> Option<usize> {
        self.folds
            .iter()
            .position(|f| f.iter().any(|s| s == subject))
    }

    /// Iteration `k`: test fold k, validation fold (k+1) mod K, train on the rest.
    pub fn split(&self, k: usize) -> Split {
        let n = self.k();
        let v = (k + 1) % n;
        let train = (0..n)
            .filter(|&i| i != k && i != v)
            .flat_map(|i| self.folds[i].iter().cloned())
            .collect();
        Split {
            test_fold: k,
            val_fold: v,
            train,
            val: self.folds[v].clone(),
            test: self.folds[k].clone(),
        }
    }
}

/// Shuffles each group's subjects with a seeded RNG and deals them
/// round-robin into `k` folds. The deal position carries over from one
/// group to the next, so fold sizes differ by at most one overall and by
/// at most one within each group.
pub fn make_folds(
    subjects: &[(String, Group)],
    k: usize,
    seed: u64,
) -> Result<FoldPlan, HarnessError> {
    if k < 3 {
        return Err(HarnessError::InvalidConfig(format!(
            "need at least 3 folds for train/validation/test, got {k}"
        )));
    }
    let mut by_group: BTreeMap<Group, BTreeSet<&str>> = BTreeMap::new();
    for (id, g) in subjects {
        by_group.entry(*g).or_default().insert(id);
    }
    let distinct: usize = by_group.values().map(BTreeSet::len).sum();
    if distinct < k {
        return Err(HarnessError::TooFewSubjects {
            needed: k,
            found: distinct,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut deal = 0usize;
    for ids in by_group.values() {
        let mut ids: Vec<&str> = ids.iter().copied().collect();
        ids.shuffle(&mut rng);
        for id in ids {
            folds[deal % k].push(id.to_string());
            deal += 1;
        }
    }
    Ok(FoldPlan { folds })
}
