//! Small exact-combinatorics helpers shared across modules.
//!
//! All values stay far below 2^53 at the supported sizes, so f64 arithmetic
//! on them is exact.

/// Falling factorial `n (n-1) ... (n-k+1)`; zero once the factors run out.
pub(crate) fn falling(n: usize, k: usize) -> f64 {
    let mut acc: f64 = 1.0;
    for i in 0..k {
        if i >= n {
            return 0.0;
        }
        acc *= (n - i) as f64;
    }
    acc
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc: f64 = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

pub(crate) fn binomial_u128(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i as u128 + 1);
    }
    acc
}

pub(crate) fn factorial(k: usize) -> f64 {
    falling(k, k)
}

/// Calls `f` with each `s`-subset of `[d]` in lexicographic order.
pub(crate) fn for_each_subset(d: usize, s: usize, mut f: impl FnMut(&[usize])) {
    assert!(s >= 1 && s <= d);
    let mut idx: Vec<usize> = (0..s).collect();
    loop {
        f(&idx);
        let mut pos = s;
        loop {
            if pos == 0 {
                return;
            }
            pos -= 1;
            if idx[pos] != pos + d - s {
                idx[pos] += 1;
                for j in (pos + 1)..s {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Lexicographic rank of a sorted `k`-subset of `[d]`.
pub(crate) fn subset_rank(d: usize, subset: &[usize]) -> usize {
    let k = subset.len();
    let mut rank = 0u128;
    let mut prev = 0usize;
    for (pos, &v) in subset.iter().enumerate() {
        for skipped in prev..v {
            rank += binomial_u128(d - skipped - 1, k - pos - 1);
        }
        prev = v + 1;
    }
    rank as usize
}

/// Inverse of [`subset_rank`].
pub(crate) fn subset_unrank(d: usize, k: usize, mut rank: usize) -> Vec<usize> {
    let mut subset = Vec::with_capacity(k);
    let mut next = 0usize;
    for pos in 0..k {
        let mut v = next;
        loop {
            let block = binomial_u128(d - v - 1, k - pos - 1) as usize;
            if rank < block {
                break;
            }
            rank -= block;
            v += 1;
        }
        subset.push(v);
        next = v + 1;
    }
    subset
}
