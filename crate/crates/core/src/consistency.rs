//! Self-consistency merging: a tuple enters the merged label when it occurs
//! in a strict majority of the seed runs (3 of 5 for five seeds).

use std::collections::HashMap;

use crate::corpus::Label;

/// Validated labels of one example across `n >= 1` seed runs.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedRunSet {
    labels: Vec<Label>,
}

impl SeedRunSet {
    pub fn new(labels: Vec<Label>) -> Option<Self> {
        if labels.is_empty() {
            None
        } else {
            Some(SeedRunSet { labels })
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    /// Smallest vote count that is a strict majority.
    pub fn threshold(&self) -> usize {
        self.labels.len() / 2 + 1
    }
}

pub fn merge_sc(runs: &SeedRunSet) -> Label {
    let mut votes = HashMap::new();
    for label in &runs.labels {
        for t in label {
            *votes.entry(t).or_insert(0usize) += 1;
        }
    }
    let n = runs.len();
    votes
        .into_iter()
        .filter(|(_, c)| 2 * c > n)
        .map(|(t, _)| t.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Polarity, SentimentTuple};
    use proptest::prelude::*;

    fn t(i: usize) -> SentimentTuple {
        SentimentTuple::quad(format!("a{i}"), "food quality", Polarity::Positive, "o")
    }

    fn label(ids: &[usize]) -> Label {
        ids.iter().map(|&i| t(i)).collect()
    }

    #[test]
    fn three_of_five() {
        let runs = SeedRunSet::new(vec![
            label(&[0, 1]),
            label(&[0, 1]),
            label(&[0]),
            label(&[2]),
            label(&[]),
        ])
        .unwrap();
        assert_eq!(runs.threshold(), 3);
        assert_eq!(merge_sc(&runs), label(&[0]));
    }

    #[test]
    fn identical_runs() {
        let runs = SeedRunSet::new(vec![label(&[1, 2, 3]); 5]).unwrap();
        assert_eq!(merge_sc(&runs), label(&[1, 2, 3]));
    }

    #[test]
    fn single_run_and_empty() {
        let runs = SeedRunSet::new(vec![label(&[4, 5])]).unwrap();
        assert_eq!(merge_sc(&runs), label(&[4, 5]));
        assert!(SeedRunSet::new(vec![]).is_none());
    }

    #[test]
    fn even_n_needs_strict_majority() {
        let runs = SeedRunSet::new(vec![label(&[0]), label(&[0]), label(&[]), label(&[])]).unwrap();
        assert!(merge_sc(&runs).is_empty());
    }

    fn runs_strategy() -> impl Strategy<Value = Vec<Label>> {
        prop::collection::vec(prop::collection::btree_set(0usize..6, 0..5), 1..8)
            .prop_map(|v| v.into_iter().map(|s| s.into_iter().map(t).collect()).collect())
    }

    proptest! {
        #[test]
        fn bounds_and_permutation(runs in runs_strategy(), rot in 0usize..8) {
            let set = SeedRunSet::new(runs.clone()).unwrap();
            let merged = merge_sc(&set);
            let union: Label = runs.iter().flatten().cloned().collect();
            let inter: Label = runs[0].iter().filter(|x| runs.iter().all(|r| r.contains(*x))).cloned().collect();
            prop_assert!(merged.is_subset(&union));
            prop_assert!(inter.is_subset(&merged));
            let mut rotated = runs.clone();
            let k = rot % rotated.len();
            rotated.rotate_left(k);
            prop_assert_eq!(merge_sc(&SeedRunSet::new(rotated).unwrap()), merged);
        }

        #[test]
        fn monotone(runs in runs_strategy(), which in 0usize..8, tuple in 0usize..6) {
            let before = merge_sc(&SeedRunSet::new(runs.clone()).unwrap());
            let mut more = runs.clone();
            let i = which % more.len();
            more[i].insert(t(tuple));
            let after = merge_sc(&SeedRunSet::new(more).unwrap());
            if before.contains(&t(tuple)) {
                prop_assert!(after.contains(&t(tuple)));
            }
        }
    }
}
