//! Exhaustive enumeration of node subsets in lexicographic order.

use crate::error::{Error, Result};

/// Largest number of subsets any analysis is allowed to enumerate.
pub const MAX_SUBSETS: u128 = 100_000;

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// All `k`-subsets of `0..n`, each sorted, in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Result<Vec<Vec<usize>>> {
    let count = binomial(n, k);
    if count > MAX_SUBSETS {
        return Err(Error::Precondition(format!(
            "{count} subsets of size {k} out of {n} exceed the cap of {MAX_SUBSETS}"
        )));
    }
    let mut out = Vec::with_capacity(count as usize);
    if k > n {
        return Ok(out);
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let Some(pos) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return Ok(out);
        };
        idx[pos] += 1;
        for j in pos + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Indices of `0..n` missing from the sorted subset.
pub fn complement(n: usize, subset: &[usize]) -> Vec<usize> {
    (0..n).filter(|i| !subset.contains(i)).collect()
}
