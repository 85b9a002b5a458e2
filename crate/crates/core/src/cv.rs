//! Stratified fold assignment shared by LASSO cross-validation, grid search
//! and Platt calibration.

use std::cmp::Ordering;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed;

/// Orders row ids numerically when both parse as integers, else as strings.
pub fn cmp_row_id(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        _ => a.cmp(b),
    }
}

/// Assigns each row to one of `k` folds. Rows are first put in canonical
/// order (by row id when given, else by position), then shuffled within each
/// class and dealt round-robin, so the assignment of a given row does not
/// depend on the order rows arrive in.
pub fn stratified_folds(y: &[u8], row_ids: Option<&[String]>, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 folds, got {k}")));
    }
    let mut order: Vec<usize> = (0..y.len()).collect();
    if let Some(ids) = row_ids {
        order.sort_by(|&a, &b| cmp_row_id(&ids[a], &ids[b]));
    }
    let mut rng = seed::rng(seed);
    let mut fold = vec![0usize; y.len()];
    let mut counts = vec![[0usize; 2]; k];
    for class in [0u8, 1] {
        let mut members: Vec<usize> = order.iter().copied().filter(|&i| y[i] == class).collect();
        members.shuffle(&mut rng);
        for (pos, i) in members.into_iter().enumerate() {
            fold[i] = pos % k;
            counts[pos % k][class as usize] += 1;
        }
    }
    if let Some(f) = counts.iter().position(|c| c[0] == 0 || c[1] == 0) {
        return Err(Error::SingleClassFold { fold: f });
    }
    Ok(fold)
}

/// Splits row indices into (train, validation) for fold `f`.
pub fn fold_split(folds: &[usize], f: usize) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut valid = Vec::new();
    for (i, &g) in folds.iter().enumerate() {
        if g == f {
            valid.push(i)
        } else {
            train.push(i)
        }
    }
    (train, valid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_are_stratified_and_permutation_stable() {
        let y: Vec<u8> = (0..103).map(|i| u8::from(i % 7 == 0)).collect();
        let ids: Vec<String> = (0..103).map(|i| (i + 1).to_string()).collect();
        let f = stratified_folds(&y, Some(&ids), 5, 9).unwrap();
        for g in 0..5 {
            let pos = (0..103).filter(|&i| f[i] == g && y[i] == 1).count();
            assert!((2..=4).contains(&pos));
        }
        let perm: Vec<usize> = (0..103).rev().collect();
        let y2: Vec<u8> = perm.iter().map(|&i| y[i]).collect();
        let ids2: Vec<String> = perm.iter().map(|&i| ids[i].clone()).collect();
        let f2 = stratified_folds(&y2, Some(&ids2), 5, 9).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            assert_eq!(f2[j], f[i]);
        }
    }

    #[test]
    fn too_few_positives() {
        let y = [1, 1, 0, 0, 0, 0];
        assert_eq!(stratified_folds(&y, None, 3, 1).unwrap_err().code(), "SingleClassFold");
    }
}
