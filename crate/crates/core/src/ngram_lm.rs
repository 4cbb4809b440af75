//! Interpolated modified Kneser–Ney n-gram language models and
//! cross-entropy-difference data selection.
//!
//! Models are held in backoff form (log10 probability and log10 backoff per
//! n-gram), which is exactly what the ARPA format stores. For interpolated
//! Kneser–Ney the stored probability of a seen n-gram is the fully
//! interpolated value and the backoff weight of a context is its
//! interpolation weight, so lookup with backoff reproduces the interpolated
//! distribution.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::corpus::Sentence;
use crate::error::{Error, Result};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

/// log10 value written for impossible events.
const LOG_ZERO: f64 = -99.0;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    log_prob: f64,
    log_backoff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NgramLm {
    order: usize,
    words: Vec<String>,
    ids: HashMap<String, u32>,
    /// `tables[n - 1]` holds the n-grams.
    tables: Vec<HashMap<Vec<u32>, Entry>>,
}

impl NgramLm {
    fn with_vocab(order: usize, words: Vec<String>) -> Self {
        let ids = words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        NgramLm {
            order,
            words,
            ids,
            tables: vec![HashMap::new(); order],
        }
    }

    /// A unigram model assigning equal probability to `units`, `</s>` and
    /// `<unk>`.
    pub fn uniform<I, S>(units: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut words = vec![BOS.to_owned(), EOS.to_owned(), UNK.to_owned()];
        let mut seen: HashSet<String> = words.iter().cloned().collect();
        for u in units {
            let u = u.into();
            if seen.insert(u.clone()) {
                words.push(u);
            }
        }
        let mut lm = NgramLm::with_vocab(1, words);
        let v = (lm.words.len() - 1) as f64;
        for id in 0..lm.words.len() as u32 {
            let log_prob = if id == 0 { LOG_ZERO } else { -v.log10() };
            lm.tables[0].insert(vec![id], Entry { log_prob, log_backoff: 0.0 });
        }
        lm
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of predictable units (everything but `<s>`).
    pub fn vocab_size(&self) -> usize {
        self.words.len() - 1
    }

    pub fn ngram_count(&self, n: usize) -> usize {
        self.tables[n - 1].len()
    }

    fn id(&self, w: &str) -> u32 {
        self.ids.get(w).copied().unwrap_or(self.ids[UNK])
    }

    /// Units the model can predict, in id order.
    pub fn predictable(&self) -> impl Iterator<Item = &str> {
        self.words.iter().skip(1).map(String::as_str)
    }

    fn log10_prob_ids(&self, history: &[u32], w: u32) -> f64 {
        let keep = history.len().min(self.order - 1);
        let mut h = &history[history.len() - keep..];
        let mut backoff = 0.0;
        loop {
            let mut key = h.to_vec();
            key.push(w);
            if let Some(e) = self.tables[h.len()].get(&key) {
                return backoff + e.log_prob;
            }
            if h.is_empty() {
                // Unreachable for ids inside the vocabulary.
                return LOG_ZERO;
            }
            if let Some(e) = self.tables[h.len() - 1].get(h) {
                backoff += e.log_backoff;
            }
            h = &h[1..];
        }
    }

    /// log10 p(w | history), mapping unknown units to `<unk>`.
    pub fn log10_prob(&self, history: &[&str], w: &str) -> f64 {
        let h: Vec<u32> = history.iter().map(|t| self.id(t)).collect();
        self.log10_prob_ids(&h, self.id(w))
    }

    pub fn prob(&self, history: &[&str], w: &str) -> f64 {
        10f64.powf(self.log10_prob(history, w))
    }

    /// Average negative log2 probability per predicted unit, including the
    /// end-of-sentence marker.
    pub fn cross_entropy(&self, s: &Sentence) -> f64 {
        let mut hist = vec![self.ids[BOS]];
        let mut total = 0.0;
        for t in s.iter().map(|t| self.id(t)).chain(std::iter::once(self.ids[EOS])) {
            total += self.log10_prob_ids(&hist, t);
            hist.push(t);
        }
        -total * std::f64::consts::LOG2_10 / (s.len() + 1) as f64
    }

    pub fn perplexity(&self, corpus: &[Sentence]) -> f64 {
        let (bits, n) = corpus.iter().fold((0.0, 0usize), |(b, n), s| {
            (b + self.cross_entropy(s) * (s.len() + 1) as f64, n + s.len() + 1)
        });
        2f64.powf(bits / n as f64)
    }

    pub fn to_arpa(&self) -> String {
        let mut out = String::from("\n\\data\\\n");
        for n in 1..=self.order {
            writeln!(out, "ngram {}={}", n, self.tables[n - 1].len()).unwrap();
        }
        for n in 1..=self.order {
            writeln!(out, "\n\\{n}-grams:").unwrap();
            let mut rows: Vec<(Vec<&str>, &Entry)> = self.tables[n - 1]
                .iter()
                .map(|(k, e)| (k.iter().map(|&i| self.words[i as usize].as_str()).collect(), e))
                .collect();
            rows.sort_by(|a, b| a.0.cmp(&b.0));
            for (words, e) in rows {
                write!(out, "{}\t{}", e.log_prob, words.join(" ")).unwrap();
                if n < self.order {
                    write!(out, "\t{}", e.log_backoff).unwrap();
                }
                out.push('\n');
            }
        }
        out.push_str("\n\\end\\\n");
        out
    }

    pub fn from_arpa(text: &str) -> Result<Self> {
        let loc = "arpa";
        let mut counts: Vec<usize> = Vec::new();
        let mut section: Option<usize> = None;
        let mut rows: Vec<Vec<(Vec<String>, Entry)>> = Vec::new();
        let mut ended = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if line == "\\data\\" {
                section = Some(0);
                continue;
            }
            if line == "\\end\\" {
                ended = true;
                break;
            }
            if let Some(n) = line.strip_prefix('\\').and_then(|l| l.strip_suffix("-grams:")) {
                let n: usize = n.parse().map_err(|_| Error::parse(loc, i + 1, "bad section"))?;
                if n == 0 || n > counts.len() {
                    return Err(Error::parse(loc, i + 1, "section order out of range"));
                }
                section = Some(n);
                continue;
            }
            match section {
                Some(0) => {
                    let rest = line
                        .strip_prefix("ngram ")
                        .ok_or_else(|| Error::parse(loc, i + 1, "expected `ngram N=count`"))?;
                    let (_, c) = rest
                        .split_once('=')
                        .ok_or_else(|| Error::parse(loc, i + 1, "expected `ngram N=count`"))?;
                    counts.push(c.trim().parse().map_err(|_| Error::parse(loc, i + 1, "bad count"))?);
                    rows.push(Vec::new());
                }
                Some(n) => {
                    let fields: Vec<&str> = line.split('\t').collect();
                    if fields.len() < 2 || fields.len() > 3 {
                        return Err(Error::parse(loc, i + 1, "expected `logp<TAB>ngram[<TAB>backoff]`"));
                    }
                    let num = |s: &str| {
                        s.trim().parse::<f64>().map_err(|_| Error::parse(loc, i + 1, "bad number"))
                    };
                    let words: Vec<String> = fields[1].split(' ').map(str::to_owned).collect();
                    if words.len() != n {
                        return Err(Error::parse(loc, i + 1, "n-gram length does not match section"));
                    }
                    let log_backoff = if fields.len() == 3 { num(fields[2])? } else { 0.0 };
                    rows[n - 1].push((words, Entry { log_prob: num(fields[0])?, log_backoff }));
                }
                None => return Err(Error::parse(loc, i + 1, "content before \\data\\")),
            }
        }
        if !ended || counts.is_empty() {
            return Err(Error::parse(loc, 0, "truncated ARPA file"));
        }
        for (n, (c, r)) in counts.iter().zip(&rows).enumerate() {
            if *c != r.len() {
                return Err(Error::parse(loc, 0, format!("{}-gram count mismatch", n + 1)));
            }
        }

        let mut words = vec![BOS.to_owned(), EOS.to_owned(), UNK.to_owned()];
        let mut known: HashSet<String> = words.iter().cloned().collect();
        for (w, _) in &rows[0] {
            if known.insert(w[0].clone()) {
                words.push(w[0].clone());
            }
        }
        let mut lm = NgramLm::with_vocab(counts.len(), words);
        for (n, table) in rows.into_iter().enumerate() {
            for (w, e) in table {
                let key = w
                    .iter()
                    .map(|t| {
                        lm.ids
                            .get(t)
                            .copied()
                            .ok_or_else(|| Error::parse(loc, 0, format!("`{t}` missing from unigrams")))
                    })
                    .collect::<Result<Vec<u32>>>()?;
                lm.tables[n].insert(key, e);
            }
        }
        Ok(lm)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_arpa()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_arpa(&text)
    }
}

/// Modified Kneser–Ney discounts for counts 1, 2 and 3+.
fn discounts(adjusted: impl Iterator<Item = u64>) -> [f64; 3] {
    let mut t = [0u64; 4];
    for c in adjusted {
        if (1..=4).contains(&c) {
            t[c as usize - 1] += 1;
        }
    }
    let fallback = [0.5, 1.0, 1.5];
    if t.iter().any(|&x| x == 0) {
        return fallback;
    }
    let t = t.map(|x| x as f64);
    let y = t[0] / (t[0] + 2.0 * t[1]);
    let d = [
        1.0 - 2.0 * y * t[1] / t[0],
        2.0 - 3.0 * y * t[2] / t[1],
        3.0 - 4.0 * y * t[3] / t[2],
    ];
    if d.iter().enumerate().all(|(k, &dk)| dk > 0.0 && dk < (k + 1) as f64) {
        d
    } else {
        fallback
    }
}

fn discount_for(d: &[f64; 3], c: u64) -> f64 {
    match c {
        0 => 0.0,
        1 => d[0],
        2 => d[1],
        _ => d[2],
    }
}

/// Estimates an interpolated modified Kneser–Ney model of the given order.
pub fn train_lm_order(corpus: &[Sentence], order: usize) -> Result<NgramLm> {
    if order == 0 {
        return Err(Error::Estimation("order must be >= 1".into()));
    }
    let tokens: usize = corpus.iter().map(Sentence::len).sum();
    if tokens == 0 {
        return Err(Error::Estimation("the training corpus has no tokens".into()));
    }

    let mut words = vec![BOS.to_owned(), EOS.to_owned(), UNK.to_owned()];
    let mut ids: HashMap<&str, u32> = HashMap::new();
    ids.insert(BOS, 0);
    ids.insert(EOS, 1);
    ids.insert(UNK, 2);
    let mut texts = Vec::with_capacity(corpus.len());
    for s in corpus {
        let mut t = vec![0u32];
        for w in s {
            let next = words.len() as u32;
            let id = *ids.entry(w.as_str()).or_insert_with(|| {
                words.push(w.clone());
                next
            });
            t.push(id);
        }
        t.push(1);
        texts.push(t);
    }

    // Raw counts of every order.
    let mut raw: Vec<HashMap<Vec<u32>, u64>> = vec![HashMap::new(); order];
    for t in &texts {
        for n in 1..=order {
            for g in t.windows(n) {
                *raw[n - 1].entry(g.to_vec()).or_insert(0) += 1;
            }
        }
    }

    // Adjusted counts: continuation counts below the top order, except for
    // n-grams anchored at the sentence start.
    let mut adjusted: Vec<BTreeMap<Vec<u32>, u64>> = vec![BTreeMap::new(); order];
    adjusted[order - 1] = raw[order - 1].iter().map(|(k, &c)| (k.clone(), c)).collect();
    for n in (1..order).rev() {
        let mut cont: HashMap<&[u32], u64> = HashMap::new();
        for g in raw[n].keys() {
            *cont.entry(&g[1..]).or_insert(0) += 1;
        }
        for (g, &c) in &raw[n - 1] {
            let a = if g[0] == 0 {
                c
            } else {
                cont.get(g.as_slice()).copied().unwrap_or(0)
            };
            adjusted[n - 1].insert(g.clone(), a);
        }
    }
    // `<s>` is never predicted.
    adjusted[0].remove(&vec![0u32]);

    let mut lm = NgramLm::with_vocab(order, words);
    let vocab = lm.words.len() as u32;

    // Unigrams, interpolated with the uniform distribution over all
    // predictable units (which includes `<unk>`).
    let d1 = discounts(adjusted[0].values().copied());
    let total: u64 = adjusted[0].values().sum();
    let gamma: f64 = adjusted[0].values().map(|&c| discount_for(&d1, c)).sum::<f64>() / total as f64;
    let uniform = 1.0 / (vocab - 1) as f64;
    lm.tables[0].insert(vec![0], Entry { log_prob: LOG_ZERO, log_backoff: 0.0 });
    for w in 1..vocab {
        let c = adjusted[0].get(&vec![w]).copied().unwrap_or(0);
        let p = (c as f64 - discount_for(&d1, c)).max(0.0) / total as f64 + gamma * uniform;
        lm.tables[0].insert(vec![w], Entry { log_prob: p.log10(), log_backoff: 0.0 });
    }

    for n in 2..=order {
        let d = discounts(adjusted[n - 1].values().copied());
        // Group by context; BTreeMap order keeps each context contiguous.
        let mut by_ctx: BTreeMap<&[u32], Vec<(u32, u64)>> = BTreeMap::new();
        for (g, &c) in &adjusted[n - 1] {
            by_ctx.entry(&g[..n - 1]).or_default().push((g[n - 1], c));
        }
        let mut new_entries = Vec::new();
        let mut backoffs = Vec::new();
        for (ctx, conts) in by_ctx {
            let denom: u64 = conts.iter().map(|(_, c)| c).sum();
            if denom == 0 {
                continue;
            }
            let gamma = conts.iter().map(|&(_, c)| discount_for(&d, c)).sum::<f64>() / denom as f64;
            for &(w, c) in &conts {
                let lower = 10f64.powf(lm.log10_prob_ids(&ctx[1..], w));
                let p = (c as f64 - discount_for(&d, c)).max(0.0) / denom as f64 + gamma * lower;
                let mut key = ctx.to_vec();
                key.push(w);
                new_entries.push((key, p.log10()));
            }
            backoffs.push((ctx.to_vec(), gamma.log10()));
        }
        for (ctx, bo) in backoffs {
            if let Some(e) = lm.tables[n - 2].get_mut(&ctx) {
                e.log_backoff = bo;
            }
        }
        for (key, lp) in new_entries {
            lm.tables[n - 1].insert(key, Entry { log_prob: lp, log_backoff: 0.0 });
        }
    }
    Ok(lm)
}

/// Trigram model.
/// Leading sentences of `corpus` holding at most `max_tokens` tokens; used to
/// equalize training sizes of in- and out-of-domain models.
pub fn token_prefix(corpus: &[Sentence], max_tokens: usize) -> &[Sentence] {
    let mut total = 0;
    for (i, s) in corpus.iter().enumerate() {
        total += s.len();
        if total > max_tokens {
            return &corpus[..i];
        }
    }
    corpus
}

pub fn train_lm(corpus: &[Sentence]) -> Result<NgramLm> {
    train_lm_order(corpus, 3)
}

pub fn cross_entropy(lm: &NgramLm, s: &Sentence) -> f64 {
    lm.cross_entropy(s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionScore {
    pub line_index: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Keep {
    Count(usize),
    Fraction(f64),
}

impl Keep {
    fn resolve(self, total: usize) -> usize {
        match self {
            Keep::Count(n) => n.min(total),
            Keep::Fraction(f) => ((f.clamp(0.0, 1.0) * total as f64).round() as usize).min(total),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelectionCriterion {
    /// In-domain minus out-of-domain cross-entropy.
    #[default]
    Difference,
    /// In-domain cross-entropy only.
    InDomainOnly,
}

/// Scores every line and sorts ascending, stable on the original index.
pub fn score_by_xent(
    in_lm: &NgramLm,
    out_lm: &NgramLm,
    corpus: &[Sentence],
    criterion: SelectionCriterion,
) -> Vec<SelectionScore> {
    let mut scores: Vec<SelectionScore> = corpus
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let score = match criterion {
                SelectionCriterion::Difference => in_lm.cross_entropy(s) - out_lm.cross_entropy(s),
                SelectionCriterion::InDomainOnly => in_lm.cross_entropy(s),
            };
            SelectionScore { line_index: i, score }
        })
        .collect();
    scores.sort_by(|a, b| a.score.total_cmp(&b.score).then(a.line_index.cmp(&b.line_index)));
    scores
}

/// Indices of the `keep` lines with the lowest cross-entropy difference.
pub fn select_by_xent(in_lm: &NgramLm, out_lm: &NgramLm, corpus: &[Sentence], keep: Keep) -> Vec<usize> {
    select_by_xent_with(in_lm, out_lm, corpus, keep, SelectionCriterion::Difference)
}

pub fn select_by_xent_with(
    in_lm: &NgramLm,
    out_lm: &NgramLm,
    corpus: &[Sentence],
    keep: Keep,
    criterion: SelectionCriterion,
) -> Vec<usize> {
    let n = keep.resolve(corpus.len());
    score_by_xent(in_lm, out_lm, corpus, criterion)
        .into_iter()
        .take(n)
        .map(|s| s.line_index)
        .collect()
}
