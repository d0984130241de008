//! Lexicographic enumeration of `c`-subsets of `{1..K}` with combinatorial ranking.

use crate::error::{Error, Result};

/// `C(n, k)`; zero when `k > n`.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc = 1usize;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// All `c`-subsets of `{1..=k}` in lexicographic order, each sorted ascending.
pub fn enumerate(k: usize, c: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(binomial(k, c));
    if c > k {
        return out;
    }
    let mut cur: Vec<usize> = (1..=c).collect();
    loop {
        out.push(cur.clone());
        // rightmost position that can still advance
        let Some(i) = (0..c).rev().find(|&i| cur[i] < k - (c - 1 - i)) else {
            return out;
        };
        cur[i] += 1;
        for j in i + 1..c {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

/// Lexicographic rank of a sorted subset of `{1..=k}` among subsets of the same size.
pub fn rank(k: usize, subset: &[usize]) -> Result<usize> {
    let c = subset.len();
    let mut r = 0;
    let mut prev = 0;
    for (i, &s) in subset.iter().enumerate() {
        if s <= prev || s > k {
            return Err(Error::arg(format!(
                "subset {subset:?} is not strictly increasing within 1..={k}"
            )));
        }
        for skipped in prev + 1..s {
            r += binomial(k - skipped, c - i - 1);
        }
        prev = s;
    }
    Ok(r)
}

/// Inverse of [`rank`].
pub fn unrank(k: usize, c: usize, mut r: usize) -> Result<Vec<usize>> {
    if r >= binomial(k, c) {
        return Err(Error::arg(format!("rank {r} out of range for C({k},{c})")));
    }
    let mut out = Vec::with_capacity(c);
    let mut next = 1;
    for i in 0..c {
        loop {
            let block = binomial(k - next, c - i - 1);
            if r < block {
                break;
            }
            r -= block;
            next += 1;
        }
        out.push(next);
        next += 1;
    }
    Ok(out)
}
