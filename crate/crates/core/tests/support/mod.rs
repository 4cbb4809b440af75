//! Independent reference implementations used as test oracles.

#![allow(dead_code)]

use std::collections::{HashMap, VecDeque};

/// Full-table Levenshtein distance, written independently of the library.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

/// Exact minimum of (number of block moves + residual edit distance) over
/// every sequence of unconstrained block moves, by breadth-first search over
/// all reachable rearrangements of `hyp`.
pub fn optimal_ter_edits(hyp: &[u8], reference: &[u8]) -> usize {
    let mut depth: HashMap<Vec<u8>, usize> = HashMap::new();
    let mut queue = VecDeque::new();
    depth.insert(hyp.to_vec(), 0);
    queue.push_back(hyp.to_vec());
    let mut best = usize::MAX;
    while let Some(cur) = queue.pop_front() {
        let d = depth[&cur];
        best = best.min(d + levenshtein(&cur, reference));
        if d + 1 >= best {
            continue;
        }
        let n = cur.len();
        for start in 0..n {
            for end in start + 1..=n {
                let block = &cur[start..end];
                let mut rest: Vec<u8> = cur[..start].to_vec();
                rest.extend_from_slice(&cur[end..]);
                for pos in 0..=rest.len() {
                    let mut next = rest[..pos].to_vec();
                    next.extend_from_slice(block);
                    next.extend_from_slice(&rest[pos..]);
                    if !depth.contains_key(&next) {
                        depth.insert(next.clone(), d + 1);
                        queue.push_back(next);
                    }
                }
            }
        }
    }
    best
}
