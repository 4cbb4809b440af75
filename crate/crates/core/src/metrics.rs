//! Word-level edit distance, TER with block shifts, and corpus BLEU.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::corpus::{Sentence, Triplet};
use crate::error::{Error, Result};

/// Longest block a single TER shift may move.
pub const MAX_SHIFT_BLOCK: usize = 10;

/// Cost and operation counts of one optimal Levenshtein alignment.
///
/// `insertions` are reference words missing from the hypothesis,
/// `deletions` are surplus hypothesis words.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EditCounts {
    pub cost: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub substitutions: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Match,
    Sub,
    /// Hypothesis word without a reference counterpart.
    Del,
    /// Reference word without a hypothesis counterpart.
    Ins,
}

fn dp_table<T: PartialEq>(hyp: &[T], r: &[T]) -> Vec<u32> {
    let w = r.len() + 1;
    let mut d = vec![0u32; (hyp.len() + 1) * w];
    for j in 0..w {
        d[j] = j as u32;
    }
    for i in 1..=hyp.len() {
        d[i * w] = i as u32;
        for j in 1..w {
            let diag = d[(i - 1) * w + j - 1] + u32::from(hyp[i - 1] != r[j - 1]);
            let up = d[(i - 1) * w + j] + 1;
            let left = d[i * w + j - 1] + 1;
            d[i * w + j] = diag.min(up).min(left);
        }
    }
    d
}

/// Optimal alignment; traceback prefers diagonal moves, then deletions.
fn align<T: PartialEq>(hyp: &[T], r: &[T]) -> (EditCounts, Vec<Op>) {
    let d = dp_table(hyp, r);
    let w = r.len() + 1;
    let (mut i, mut j) = (hyp.len(), r.len());
    let mut ops = Vec::with_capacity(i.max(j));
    let mut counts = EditCounts {
        cost: d[i * w + j] as usize,
        ..Default::default()
    };
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let same = hyp[i - 1] == r[j - 1];
            if d[(i - 1) * w + j - 1] + u32::from(!same) == here {
                if same {
                    ops.push(Op::Match);
                } else {
                    ops.push(Op::Sub);
                    counts.substitutions += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[(i - 1) * w + j] + 1 == here {
            ops.push(Op::Del);
            counts.deletions += 1;
            i -= 1;
        } else {
            ops.push(Op::Ins);
            counts.insertions += 1;
            j -= 1;
        }
    }
    ops.reverse();
    (counts, ops)
}

/// Two-row cost-only Levenshtein.
fn edit_cost(hyp: &[u32], r: &[u32], row: &mut Vec<u32>) -> usize {
    row.clear();
    row.extend(0..=r.len() as u32);
    for (i, h) in hyp.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i as u32 + 1;
        for j in 1..=r.len() {
            let up = row[j];
            let sub = diag + u32::from(*h != r[j - 1]);
            row[j] = sub.min(up + 1).min(row[j - 1] + 1);
            diag = up;
        }
    }
    row[r.len()] as usize
}

pub fn edit_distance(hyp: &Sentence, r: &Sentence) -> EditCounts {
    align(hyp.tokens(), r.tokens()).0
}

/// TER edit statistics for one hypothesis/reference pair.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TerAlignment {
    pub insertions: usize,
    pub deletions: usize,
    pub substitutions: usize,
    pub shifts: usize,
    pub ref_len: usize,
    /// Percentage.
    pub ter: f64,
    /// Set when the reference was empty but the hypothesis was not; the score
    /// is then computed against a reference length of one.
    pub degenerate_reference: bool,
}

impl TerAlignment {
    pub fn edits(&self) -> usize {
        self.insertions + self.deletions + self.substitutions + self.shifts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TerOptions {
    pub shifts: bool,
    pub max_block: usize,
}

impl Default for TerOptions {
    fn default() -> Self {
        TerOptions {
            shifts: true,
            max_block: MAX_SHIFT_BLOCK,
        }
    }
}

fn intern<'a>(hyp: &'a Sentence, r: &'a Sentence) -> (Vec<u32>, Vec<u32>) {
    let mut ids: HashMap<&'a str, u32> = HashMap::new();
    let mut map = |s: &'a Sentence| -> Vec<u32> {
        s.iter()
            .map(|t| {
                let n = ids.len() as u32;
                *ids.entry(t.as_str()).or_insert(n)
            })
            .collect()
    };
    let h = map(hyp);
    let rr = map(r);
    (h, rr)
}

pub fn ter(hyp: &Sentence, r: &Sentence) -> TerAlignment {
    ter_with(hyp, r, TerOptions::default())
}

pub fn ter_with(hyp: &Sentence, r: &Sentence, opts: TerOptions) -> TerAlignment {
    let (h, rr) = intern(hyp, r);
    ter_ids(&h, &rr, opts)
}

/// Moves `cur[start..start+len]` so it follows original position `after`
/// (`-1` = sentence front).
fn perform_shift(cur: &[u32], start: usize, len: usize, after: isize) -> Vec<u32> {
    let end = start + len;
    let mut out = Vec::with_capacity(cur.len());
    if after < start as isize {
        let cut = (after + 1) as usize;
        out.extend_from_slice(&cur[..cut]);
        out.extend_from_slice(&cur[start..end]);
        out.extend_from_slice(&cur[cut..start]);
        out.extend_from_slice(&cur[end..]);
    } else {
        let cut = after as usize + 1;
        out.extend_from_slice(&cur[..start]);
        out.extend_from_slice(&cur[end..cut]);
        out.extend_from_slice(&cur[start..end]);
        out.extend_from_slice(&cur[cut..]);
    }
    out
}

struct Shift {
    gain: usize,
    start: usize,
    len: usize,
    after: isize,
    result: Vec<u32>,
}

/// Greedy tercom-style shift search on interned sequences.
pub(crate) fn ter_ids(hyp: &[u32], r: &[u32], opts: TerOptions) -> TerAlignment {
    if r.is_empty() {
        let n = hyp.len();
        return TerAlignment {
            deletions: n,
            ter: 100.0 * n as f64,
            degenerate_reference: n > 0,
            ..Default::default()
        };
    }

    let mut cur = hyp.to_vec();
    let mut shifts = 0;
    let mut row = Vec::new();
    let final_counts = loop {
        let (counts, ops) = align(&cur, r);
        if !opts.shifts || counts.cost == 0 {
            break counts;
        }
        match best_shift(&cur, r, &ops, counts.cost, opts.max_block, &mut row) {
            Some(s) => {
                cur = s.result;
                shifts += 1;
            }
            None => break counts,
        }
    };

    let edits = final_counts.cost + shifts;
    TerAlignment {
        insertions: final_counts.insertions,
        deletions: final_counts.deletions,
        substitutions: final_counts.substitutions,
        shifts,
        ref_len: r.len(),
        ter: 100.0 * edits as f64 / r.len() as f64,
        degenerate_reference: false,
    }
}

fn best_shift(
    cur: &[u32],
    r: &[u32],
    ops: &[Op],
    cost: usize,
    max_block: usize,
    row: &mut Vec<u32>,
) -> Option<Shift> {
    let n = cur.len();
    let mut herr = vec![false; n];
    let mut rerr = vec![false; r.len()];
    // Hypothesis position each reference word is aligned to (or follows).
    let mut ralign = vec![0isize; r.len()];
    let (mut hi, mut ri) = (0usize, 0usize);
    for op in ops {
        match op {
            Op::Match | Op::Sub => {
                if *op == Op::Sub {
                    herr[hi] = true;
                    rerr[ri] = true;
                }
                ralign[ri] = hi as isize;
                hi += 1;
                ri += 1;
            }
            Op::Del => {
                herr[hi] = true;
                hi += 1;
            }
            Op::Ins => {
                rerr[ri] = true;
                ralign[ri] = hi as isize - 1;
                ri += 1;
            }
        }
    }

    let mut best: Option<Shift> = None;
    let mut targets = Vec::new();
    for start in 0..n {
        let mut matches: Vec<usize> = (0..r.len()).filter(|&j| r[j] == cur[start]).collect();
        for len in 1..=max_block.min(n - start) {
            if len > 1 {
                let last = cur[start + len - 1];
                matches.retain(|&j| j + len <= r.len() && r[j + len - 1] == last);
            }
            if matches.is_empty() {
                break;
            }
            if !herr[start..start + len].iter().any(|&e| e) {
                continue;
            }
            targets.clear();
            for &j in &matches {
                if !rerr[j..j + len].iter().any(|&e| e) {
                    continue;
                }
                if j == 0 {
                    targets.push(-1);
                } else {
                    targets.push(ralign[j - 1]);
                }
                for off in 0..len {
                    targets.push(ralign[j + off]);
                    targets.push(ralign[j + off] - 1);
                }
            }
            targets.sort_unstable();
            targets.dedup();
            for &after in &targets {
                let after = after.clamp(-1, n as isize - 1);
                // No-ops and moves into the block itself.
                if after >= start as isize - 1 && after < (start + len) as isize {
                    continue;
                }
                let result = perform_shift(cur, start, len, after);
                let new_cost = edit_cost(&result, r, row);
                if new_cost + 1 >= cost {
                    continue;
                }
                let gain = cost - new_cost - 1;
                let better = match &best {
                    None => true,
                    Some(b) => {
                        gain > b.gain
                            || (gain == b.gain && (start, len, after) < (b.start, b.len, b.after))
                    }
                };
                if better {
                    best = Some(Shift {
                        gain,
                        start,
                        len,
                        after,
                        result,
                    });
                }
            }
        }
    }
    best
}

/// Corpus-level TER aggregate.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CorpusTer {
    pub edits: usize,
    pub ref_len: usize,
}

impl CorpusTer {
    pub fn add(&mut self, a: &TerAlignment) {
        self.edits += a.edits();
        self.ref_len += a.ref_len.max(usize::from(a.degenerate_reference));
    }

    /// Percentage; zero for an empty aggregate.
    pub fn score(&self) -> f64 {
        if self.ref_len == 0 {
            0.0
        } else {
            100.0 * self.edits as f64 / self.ref_len as f64
        }
    }
}

pub fn sentence_ters(hyps: &[Sentence], refs: &[Sentence]) -> Result<Vec<TerAlignment>> {
    if hyps.len() != refs.len() {
        return Err(Error::Input(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    Ok(hyps.par_iter().zip(refs).map(|(h, r)| ter(h, r)).collect())
}

pub fn corpus_ter(hyps: &[Sentence], refs: &[Sentence]) -> Result<CorpusTer> {
    let mut agg = CorpusTer::default();
    for a in sentence_ters(hyps, refs)? {
        agg.add(&a);
    }
    Ok(agg)
}

/// Per-triplet TER statistics of the MT output against its post-edit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletStats {
    pub num_words_pe: usize,
    pub num_words_mt: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub substitutions: usize,
    pub shifts: usize,
    /// Insertions + deletions + substitutions + shifts.
    pub num_errors: usize,
    pub ter: f64,
}

pub fn triplet_stats(t: &Triplet) -> TripletStats {
    let a = ter(&t.mt, &t.pe);
    TripletStats {
        num_words_pe: t.pe.len(),
        num_words_mt: t.mt.len(),
        insertions: a.insertions,
        deletions: a.deletions,
        substitutions: a.substitutions,
        shifts: a.shifts,
        num_errors: a.edits(),
        ter: a.ter,
    }
}

/// Corpus BLEU-4 components.
#[derive(Debug, Clone, PartialEq)]
pub struct BleuStats {
    pub matches: [usize; 4],
    pub totals: [usize; 4],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn precisions(&self) -> [f64; 4] {
        std::array::from_fn(|n| {
            if self.totals[n] == 0 {
                0.0
            } else {
                self.matches[n] as f64 / self.totals[n] as f64
            }
        })
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        (1.0 - self.ref_len as f64 / self.hyp_len as f64).min(0.0).exp()
    }

    /// Percentage; zero whenever some n-gram precision is zero.
    pub fn score(&self) -> f64 {
        let p = self.precisions();
        if p.iter().any(|&x| x == 0.0) {
            return 0.0;
        }
        let log_mean = p.iter().map(|x| x.ln()).sum::<f64>() / 4.0;
        100.0 * self.brevity_penalty() * log_mean.exp()
    }

    /// Add-one smoothed score for n > 1, for per-sentence reporting.
    pub fn smoothed_score(&self) -> f64 {
        if self.hyp_len == 0 || self.matches[0] == 0 {
            return 0.0;
        }
        let log_mean = (0..4)
            .map(|n| {
                let (m, t) = if n == 0 {
                    (self.matches[0] as f64, self.totals[0] as f64)
                } else {
                    (self.matches[n] as f64 + 1.0, self.totals[n] as f64 + 1.0)
                };
                (m / t).ln()
            })
            .sum::<f64>()
            / 4.0;
        100.0 * self.brevity_penalty() * log_mean.exp()
    }

    fn accumulate(&mut self, hyp: &Sentence, r: &Sentence) {
        self.hyp_len += hyp.len();
        self.ref_len += r.len();
        for n in 1..=4 {
            let mut ref_counts: HashMap<&[String], usize> = HashMap::new();
            for g in r.tokens().windows(n) {
                *ref_counts.entry(g).or_insert(0) += 1;
            }
            let mut hyp_counts: HashMap<&[String], usize> = HashMap::new();
            for g in hyp.tokens().windows(n) {
                *hyp_counts.entry(g).or_insert(0) += 1;
            }
            for (g, c) in hyp_counts {
                self.matches[n - 1] += c.min(ref_counts.get(g).copied().unwrap_or(0));
            }
            self.totals[n - 1] += hyp.len().saturating_sub(n - 1);
        }
    }
}

pub fn bleu_stats(hyps: &[Sentence], refs: &[Sentence]) -> Result<BleuStats> {
    if hyps.is_empty() {
        return Err(Error::Input("BLEU needs at least one sentence pair".into()));
    }
    if hyps.len() != refs.len() {
        return Err(Error::Input(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let mut stats = BleuStats {
        matches: [0; 4],
        totals: [0; 4],
        hyp_len: 0,
        ref_len: 0,
    };
    for (h, r) in hyps.iter().zip(refs) {
        stats.accumulate(h, r);
    }
    Ok(stats)
}

pub fn bleu(hyps: &[Sentence], refs: &[Sentence]) -> Result<f64> {
    Ok(bleu_stats(hyps, refs)?.score())
}

pub fn sentence_bleu(hyp: &Sentence, r: &Sentence) -> f64 {
    let mut stats = BleuStats {
        matches: [0; 4],
        totals: [0; 4],
        hyp_len: 0,
        ref_len: 0,
    };
    stats.accumulate(hyp, r);
    stats.smoothed_score()
}
