//! Stratified train/dev/test partitioning.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::{Emotion, FeatureSequence};
use crate::error::{EmsError, Result};
use crate::rng::{derive_seed, seeded};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitCorpus {
    pub train: Vec<FeatureSequence>,
    pub dev: Vec<FeatureSequence>,
    pub test: Vec<FeatureSequence>,
}

/// Largest-remainder apportionment of `n` over `ratios`.
fn apportion(n: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts = [0usize; 3];
    for (c, e) in counts.iter_mut().zip(&exact) {
        *c = e.floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut left = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Partitions record indices by class so that the global split sizes follow
/// largest-remainder apportionment and each class lands within one record of
/// its proportional share in every split.
pub fn split_indices(labels: &[Emotion], ratios: [f64; 3], seed: u64) -> Result<SplitIndices> {
    if ratios.iter().any(|&r| !(r > 0.0)) {
        return Err(EmsError::EmptySplit(format!("every split ratio must be positive, got {ratios:?}")));
    }
    if (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(EmsError::invalid(format!("split ratios must sum to 1, got {ratios:?}")));
    }
    let mut by_class: BTreeMap<Emotion, Vec<usize>> = BTreeMap::new();
    for (i, &label) in labels.iter().enumerate() {
        by_class.entry(label).or_default().push(i);
    }
    let targets = apportion(labels.len(), &ratios);

    // Floor shares per class, then hand out each class's leftovers (at most
    // one per split) to the splits with the largest remaining deficit.
    let mut alloc: BTreeMap<Emotion, [usize; 3]> = BTreeMap::new();
    let mut leftovers: Vec<(Emotion, usize, [f64; 3])> = Vec::new();
    for (&class, members) in &by_class {
        let n = members.len();
        let exact: [f64; 3] = std::array::from_fn(|s| ratios[s] * n as f64);
        let floors: [usize; 3] = std::array::from_fn(|s| exact[s].floor() as usize);
        let rem: [f64; 3] = std::array::from_fn(|s| exact[s] - floors[s] as f64);
        leftovers.push((class, n - floors.iter().sum::<usize>(), rem));
        alloc.insert(class, floors);
    }
    let mut deficit: [isize; 3] =
        std::array::from_fn(|s| targets[s] as isize - alloc.values().map(|a| a[s] as isize).sum::<isize>());
    leftovers.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    for (class, extra, rem) in leftovers {
        let mut splits: Vec<usize> = (0..3).collect();
        splits.sort_by(|&a, &b| deficit[b].cmp(&deficit[a]).then(rem[b].total_cmp(&rem[a])).then(a.cmp(&b)));
        for &s in splits.iter().take(extra) {
            alloc.get_mut(&class).expect("class present")[s] += 1;
            deficit[s] -= 1;
        }
    }

    let names = ["train", "dev", "test"];
    let mut out = SplitIndices { train: Vec::new(), dev: Vec::new(), test: Vec::new() };
    for (&class, members) in &by_class {
        let counts = alloc[&class];
        if let Some(s) = (0..3).find(|&s| counts[s] == 0) {
            return Err(EmsError::EmptySplit(format!("{} split would receive no {class} records", names[s])));
        }
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut seeded(derive_seed(seed, &[class.index() as u64])));
        let (train, rest) = shuffled.split_at(counts[0]);
        let (dev, test) = rest.split_at(counts[1]);
        out.train.extend_from_slice(train);
        out.dev.extend_from_slice(dev);
        out.test.extend_from_slice(test);
    }
    out.train.sort_unstable();
    out.dev.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

pub fn split_corpus(records: &[FeatureSequence], ratios: [f64; 3], seed: u64) -> Result<SplitCorpus> {
    let labels: Vec<Emotion> = records.iter().map(|r| r.emotion).collect();
    let idx = split_indices(&labels, ratios, seed)?;
    let pick = |ids: &[usize]| ids.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    Ok(SplitCorpus { train: pick(&idx.train), dev: pick(&idx.dev), test: pick(&idx.test) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(n: usize) -> Vec<Emotion> {
        (0..n).map(|i| Emotion::ALL[i % 4]).collect()
    }

    #[test]
    fn exact_sizes_for_round_ratios() {
        let s = split_indices(&labels(100), [0.8, 0.1, 0.1], 1).unwrap();
        assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (80, 10, 10));
    }

    #[test]
    fn deterministic_per_seed() {
        let a = split_indices(&labels(100), [0.8, 0.1, 0.1], 1).unwrap();
        let b = split_indices(&labels(100), [0.8, 0.1, 0.1], 1).unwrap();
        let c = split_indices(&labels(100), [0.8, 0.1, 0.1], 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn zero_ratio_is_an_empty_split() {
        assert!(matches!(split_indices(&labels(100), [0.5, 0.5, 0.0], 1), Err(EmsError::EmptySplit(_))));
        assert!(split_indices(&labels(100), [0.5, 0.3, 0.3], 1).is_err());
    }

    #[test]
    fn tiny_class_triggers_empty_split() {
        assert!(matches!(split_indices(&labels(8), [0.8, 0.1, 0.1], 0), Err(EmsError::EmptySplit(_))));
    }

    proptest! {
        #[test]
        fn partition_is_stratified(n in 24usize..300, seed in 0u64..1000, a in 0.2f64..0.7, b in 0.1f64..0.3) {
            let ratios = [a, b, 1.0 - a - b];
            prop_assume!(ratios[2] > 0.05);
            let labels: Vec<Emotion> = (0..n).map(|i| Emotion::ALL[(i * 7 + i / 3) % 4]).collect();
            let Ok(s) = split_indices(&labels, ratios, seed) else { return Ok(()) };
            let mut all: Vec<usize> = s.train.iter().chain(&s.dev).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            for class in Emotion::ALL {
                let total = labels.iter().filter(|&&l| l == class).count() as f64;
                for (split, r) in [(&s.train, ratios[0]), (&s.dev, ratios[1]), (&s.test, ratios[2])] {
                    let got = split.iter().filter(|&&i| labels[i] == class).count() as f64;
                    prop_assert!((got - r * total).abs() <= 1.0 + 1e-9, "class {class}: {got} vs {}", r * total);
                }
            }
        }
    }
}
