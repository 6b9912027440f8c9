//! Brute-force enumeration of forecast pairs, written independently of the
//! windowing code: every window of `l` consecutive rows whose last row plus
//! `f` is still a row of the dataset is a pair, targeting that row.

#![allow(dead_code)]

use std::ops::Range;

#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub rows: Range<usize>,
    pub target_row: usize,
}

pub fn enumerate_pairs(n: usize, l: usize, f: usize) -> Vec<Pair> {
    let mut out = Vec::new();
    for start in 0..n {
        let rows = start..start + l;
        let last = rows.end - 1;
        let target_row = last + f;
        if rows.end <= n && target_row < n {
            out.push(Pair { rows, target_row });
        }
    }
    out
}
