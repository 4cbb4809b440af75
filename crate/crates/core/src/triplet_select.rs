//! Selecting artificial triplets whose TER statistics resemble a reference
//! set: box-bound outlier removal followed by greedy nearest-neighbour
//! selection with exclusion.

use std::cmp::Ordering;
use std::fmt;

use rayon::prelude::*;

use crate::corpus::Triplet;
use crate::metrics::{triplet_stats, CorpusTer, TerAlignment};

pub const STAT_DIM: usize = 7;
pub const STAT_NAMES: [&str; STAT_DIM] = ["NumWdPe", "NumWdMt", "Ins", "Del", "Sub", "WdSh", "TER"];

/// `[num_words_pe, num_words_mt, insertions, deletions, substitutions,
/// shifts, ter]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StatVector(pub [f64; STAT_DIM]);

impl StatVector {
    pub fn num_errors(&self) -> f64 {
        self.0[2] + self.0[3] + self.0[4] + self.0[5]
    }

    fn distance(&self, other: &StatVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

pub fn stat_vector(t: &Triplet) -> StatVector {
    let s = triplet_stats(t);
    StatVector([
        s.num_words_pe as f64,
        s.num_words_mt as f64,
        s.insertions as f64,
        s.deletions as f64,
        s.substitutions as f64,
        s.shifts as f64,
        s.ter,
    ])
}

pub fn stat_vectors(ts: &[Triplet]) -> Vec<StatVector> {
    ts.par_iter().map(stat_vector).collect()
}

/// How the per-reference traversal cap is counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CapMode {
    /// Every examined candidate counts, selected or skipped.
    #[default]
    Examined,
    /// Only candidates skipped because an earlier reference took them count.
    SkippedOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionConfig {
    pub n: usize,
    pub traversal_cap: usize,
    pub outlier_margin: f64,
    pub normalize: bool,
    pub cap_mode: CapMode,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            n: 1,
            traversal_cap: 100,
            outlier_margin: 0.10,
            normalize: true,
            cap_mode: CapMode::Examined,
        }
    }
}

pub const SIMILARITY_EPS: f64 = 1e-9;

pub fn similarity(a: &StatVector, b: &StatVector) -> f64 {
    1.0 / (SIMILARITY_EPS + a.distance(b))
}

/// Which pool vectors fall inside the reference min/max box widened by
/// `margin` on both sides.
pub fn outlier_mask(pool: &[StatVector], reference: &[StatVector], margin: f64) -> Vec<bool> {
    if reference.is_empty() || margin.is_infinite() {
        return vec![true; pool.len()];
    }
    let mut lo = [f64::INFINITY; STAT_DIM];
    let mut hi = [f64::NEG_INFINITY; STAT_DIM];
    for v in reference {
        for c in 0..STAT_DIM {
            lo[c] = lo[c].min(v.0[c]);
            hi[c] = hi[c].max(v.0[c]);
        }
    }
    for c in 0..STAT_DIM {
        lo[c] = if lo[c] == 0.0 { 0.0 } else { lo[c] * (1.0 - margin) };
        hi[c] *= 1.0 + margin;
    }
    pool.iter()
        .map(|v| (0..STAT_DIM).all(|c| v.0[c] >= lo[c] && v.0[c] <= hi[c]))
        .collect()
}

pub fn outlier_filter(pool: &[Triplet], reference: &[Triplet], margin: f64) -> Vec<Triplet> {
    let mask = outlier_mask(&stat_vectors(pool), &stat_vectors(reference), margin);
    pool.iter().zip(mask).filter(|(_, keep)| *keep).map(|(t, _)| t.clone()).collect()
}

/// Per-component reference mean and standard deviation (1 when constant).
fn zscore_params(reference: &[StatVector]) -> ([f64; STAT_DIM], [f64; STAT_DIM]) {
    let n = reference.len() as f64;
    let mut mean = [0.0; STAT_DIM];
    for v in reference {
        for c in 0..STAT_DIM {
            mean[c] += v.0[c] / n;
        }
    }
    let mut sd = [0.0; STAT_DIM];
    for v in reference {
        for c in 0..STAT_DIM {
            sd[c] += (v.0[c] - mean[c]).powi(2) / n;
        }
    }
    for s in &mut sd {
        *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
    }
    (mean, sd)
}

fn normalized(vs: &[StatVector], mean: &[f64; STAT_DIM], sd: &[f64; STAT_DIM]) -> Vec<StatVector> {
    vs.iter()
        .map(|v| StatVector(std::array::from_fn(|c| (v.0[c] - mean[c]) / sd[c])))
        .collect()
}

/// Picks up to `cfg.n` pool entries per reference entry, walking candidates
/// by decreasing similarity and skipping entries taken by earlier
/// references. Returns pool indices in selection order.
pub fn knn_select(pool: &[StatVector], reference: &[StatVector], cfg: &SelectionConfig) -> Vec<usize> {
    if pool.is_empty() || reference.is_empty() || cfg.n == 0 {
        return Vec::new();
    }
    let (pool, reference) = if cfg.normalize {
        let (mean, sd) = zscore_params(reference);
        (normalized(pool, &mean, &sd), normalized(reference, &mean, &sd))
    } else {
        (pool.to_vec(), reference.to_vec())
    };

    let horizon = match cfg.cap_mode {
        CapMode::Examined => cfg.traversal_cap,
        CapMode::SkippedOnly => cfg.traversal_cap + cfg.n,
    }
    .min(pool.len());
    if horizon == 0 {
        return Vec::new();
    }

    let by_similarity = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
        b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
    };

    let mut taken = vec![false; pool.len()];
    let mut selected = Vec::new();
    let mut scored: Vec<(f64, usize)> = Vec::with_capacity(pool.len());
    for r in &reference {
        scored.clear();
        scored.par_extend(pool.par_iter().enumerate().map(|(i, p)| (similarity(r, p), i)));
        if horizon < scored.len() {
            scored.select_nth_unstable_by(horizon - 1, by_similarity);
            scored.truncate(horizon);
        }
        scored.sort_unstable_by(by_similarity);

        let mut got = 0;
        let mut skipped = 0;
        for &(_, i) in scored.iter() {
            if got == cfg.n {
                break;
            }
            if taken[i] {
                skipped += 1;
                if cfg.cap_mode == CapMode::SkippedOnly && skipped > cfg.traversal_cap {
                    break;
                }
                continue;
            }
            taken[i] = true;
            selected.push(i);
            got += 1;
        }
    }
    selected
}

/// Full two-step filter on triplets: outlier removal, then neighbour
/// selection. Returns indices into `pool`.
pub fn select_triplets(pool: &[Triplet], reference: &[Triplet], cfg: &SelectionConfig) -> Vec<usize> {
    let pool_stats = stat_vectors(pool);
    let ref_stats = stat_vectors(reference);
    let mask = outlier_mask(&pool_stats, &ref_stats, cfg.outlier_margin);
    let kept: Vec<usize> = (0..pool.len()).filter(|&i| mask[i]).collect();
    let kept_stats: Vec<StatVector> = kept.iter().map(|&i| pool_stats[i]).collect();
    knn_select(&kept_stats, &ref_stats, cfg).into_iter().map(|j| kept[j]).collect()
}

/// Aggregate statistics of a triplet set.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsReport {
    pub count: usize,
    pub means: StatVector,
    pub mean_num_errors: f64,
    pub corpus_ter: f64,
}

pub fn report_from_vectors(vs: &[StatVector]) -> StatsReport {
    let n = vs.len().max(1) as f64;
    let mut means = [0.0; STAT_DIM];
    let mut corpus = CorpusTer::default();
    for v in vs {
        for c in 0..STAT_DIM {
            means[c] += v.0[c] / n;
        }
        corpus.add(&TerAlignment {
            insertions: v.0[2] as usize,
            deletions: v.0[3] as usize,
            substitutions: v.0[4] as usize,
            shifts: v.0[5] as usize,
            ref_len: v.0[0] as usize,
            ter: v.0[6],
            degenerate_reference: false,
        });
    }
    let means = StatVector(means);
    StatsReport {
        count: vs.len(),
        mean_num_errors: means.num_errors(),
        means,
        corpus_ter: corpus.score(),
    }
}

pub fn report_stats(set: &[Triplet]) -> StatsReport {
    report_from_vectors(&stat_vectors(set))
}

impl fmt::Display for StatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "triplets\t{}", self.count)?;
        for (name, v) in STAT_NAMES.iter().zip(self.means.0) {
            writeln!(f, "{name}\t{v:.2}")?;
        }
        writeln!(f, "NumEr\t{:.2}", self.mean_num_errors)?;
        writeln!(f, "CorpusTER\t{:.2}", self.corpus_ter)
    }
}
