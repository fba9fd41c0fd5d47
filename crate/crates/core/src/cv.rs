//! Fold assignment and randomized hyper-parameter search helpers.

use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::rng::SimRng;

/// Shuffled k-fold split of `0..n`; returns the held-out indices of each
/// fold, each sorted ascending.
pub fn kfold(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        bail!(Config, "need at least 2 folds, got {}", k);
    }
    if n < k {
        bail!(Config, "{} samples cannot fill {} folds", n, k);
    }
    let perm = SimRng::new(seed).permutation(n);
    let mut folds = alloc::vec![Vec::new(); k];
    for (pos, &i) in perm.iter().enumerate() {
        folds[pos % k].push(i);
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(folds)
}

/// k-fold split that deals each class round-robin, so every fold gets
/// both labels whenever each class has at least `k` members.
pub fn stratified_kfold(labels: &[bool], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        bail!(Config, "need at least 2 folds, got {}", k);
    }
    if labels.len() < k {
        bail!(Config, "{} samples cannot fill {} folds", labels.len(), k);
    }
    let mut rng = SimRng::new(seed);
    let mut folds = alloc::vec![Vec::new(); k];
    let mut offset = 0;
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        rng.shuffle(&mut idx);
        for (pos, &i) in idx.iter().enumerate() {
            folds[(pos + offset) % k].push(i);
        }
        offset += idx.len();
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(folds)
}

/// Complement of a sorted fold within `0..n`.
pub fn complement(n: usize, fold: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(n - fold.len());
    let mut it = fold.iter().peekable();
    for i in 0..n {
        if it.peek() == Some(&&i) {
            it.next();
        } else {
            out.push(i);
        }
    }
    out
}

/// Picks up to `budget` distinct grid points at random. When the budget
/// covers the grid, the whole grid is returned in its original order.
pub fn sample_grid<T: Clone>(grid: &[T], budget: usize, rng: &mut SimRng) -> Vec<T> {
    if budget >= grid.len() {
        return grid.to_vec();
    }
    rng.sample_without_replacement(grid.len(), budget)
        .into_iter()
        .map(|i| grid[i].clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_partition_rows() {
        let folds = kfold(23, 5, 1).unwrap();
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert!(kfold(3, 5, 1).is_err());
        assert_eq!(complement(6, &[1, 4]), alloc::vec![0, 2, 3, 5]);
    }

    #[test]
    fn stratified_folds_see_both_classes() {
        let labels: Vec<bool> = (0..40).map(|i| i % 8 == 0).collect();
        for f in stratified_kfold(&labels, 5, 3).unwrap() {
            assert!(f.iter().any(|&i| labels[i]));
            assert!(f.iter().any(|&i| !labels[i]));
        }
    }
}
