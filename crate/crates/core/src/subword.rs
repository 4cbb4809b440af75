//! Byte-pair-encoding subword segmentation.
//!
//! Words are split into characters plus a word-final marker, and the most
//! frequent adjacent symbol pair is merged repeatedly. Segmented output marks
//! every unit except the last of a word with a trailing `@@`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::corpus::Sentence;
use crate::error::{Error, Result};

pub const END_MARKER: &str = "</w>";
pub const CONTINUATION: &str = "@@";
const HEADER: &str = "#version: apeforge-bpe 1";
const BASE_PREFIX: &str = "#base: ";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    base_symbols: BTreeSet<String>,
    target_merge_count: usize,
    ranks: HashMap<(String, String), usize>,
}

/// Result of segmenting one sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmented {
    pub units: Sentence,
    /// Characters not covered by the model's base symbols.
    pub unknown_chars: usize,
}

impl BpeModel {
    pub fn new(
        merges: Vec<(String, String)>,
        base_symbols: BTreeSet<String>,
        target_merge_count: usize,
    ) -> Result<Self> {
        let mut ranks = HashMap::with_capacity(merges.len());
        for (i, pair) in merges.iter().enumerate() {
            if ranks.insert(pair.clone(), i).is_some() {
                return Err(Error::Input(format!("duplicate merge {} {}", pair.0, pair.1)));
            }
        }
        Ok(BpeModel {
            merges,
            base_symbols,
            target_merge_count,
            ranks,
        })
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn base_symbols(&self) -> &BTreeSet<String> {
        &self.base_symbols
    }

    pub fn target_merge_count(&self) -> usize {
        self.target_merge_count
    }

    /// Every symbol the model can produce: base symbols plus one new symbol
    /// per merge.
    pub fn vocabulary(&self) -> BTreeSet<String> {
        let mut v = self.base_symbols.clone();
        for (l, r) in &self.merges {
            v.insert(format!("{l}{r}"));
        }
        v
    }

    /// A model holding only the first `n` merges.
    pub fn truncated(&self, n: usize) -> BpeModel {
        let merges = self.merges[..n.min(self.merges.len())].to_vec();
        BpeModel::new(merges, self.base_symbols.clone(), n).expect("prefix of a valid merge list")
    }

    pub fn segment_word(&self, word: &str) -> (Vec<String>, usize) {
        let mut unknown = 0;
        let mut symbols: Vec<String> = word
            .chars()
            .map(|c| {
                let s = c.to_string();
                if !self.base_symbols.contains(&s) {
                    unknown += 1;
                }
                s
            })
            .collect();
        symbols.push(END_MARKER.to_owned());

        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())).copied())
                .min();
            let Some(rank) = best else { break };
            let (left, right) = &self.merges[rank];
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && &symbols[i] == left && &symbols[i + 1] == right {
                    merged.push(format!("{left}{right}"));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut symbols[i]));
                    i += 1;
                }
            }
            symbols = merged;
        }

        if symbols.last().map(String::as_str) == Some(END_MARKER) {
            symbols.pop();
        } else if let Some(last) = symbols.last_mut() {
            last.truncate(last.len() - END_MARKER.len());
        }
        (symbols, unknown)
    }

    pub fn apply(&self, s: &Sentence) -> Segmented {
        let mut units = Vec::new();
        let mut unknown_chars = 0;
        for token in s {
            let (symbols, unk) = self.segment_word(token);
            unknown_chars += unk;
            let n = symbols.len();
            for (i, sym) in symbols.into_iter().enumerate() {
                if i + 1 < n {
                    units.push(format!("{sym}{CONTINUATION}"));
                } else {
                    units.push(sym);
                }
            }
        }
        Segmented {
            units: Sentence::new(units).expect("segmentation never yields empty units"),
            unknown_chars,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        writeln!(out, "{HEADER}").unwrap();
        let base: Vec<&str> = self.base_symbols.iter().map(String::as_str).collect();
        writeln!(out, "{BASE_PREFIX}{}", base.join(" ")).unwrap();
        for (l, r) in &self.merges {
            writeln!(out, "{l} {r}").unwrap();
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, location: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, HEADER)) => {}
            _ => return Err(Error::parse(location, 1, format!("expected `{HEADER}`"))),
        }
        let mut base = BTreeSet::new();
        let mut merges = Vec::new();
        for (i, line) in lines {
            if let Some(symbols) = line.strip_prefix(BASE_PREFIX) {
                base.extend(symbols.split(' ').filter(|s| !s.is_empty()).map(str::to_owned));
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                    merges.push((l.to_owned(), r.to_owned()))
                }
                _ => return Err(Error::parse(location, i + 1, "expected `left right`")),
            }
        }
        if base.is_empty() {
            // Files without a base line: recover the inventory from the merges.
            base.insert(END_MARKER.to_owned());
            for (l, r) in &merges {
                for sym in [l, r] {
                    for c in sym.replace(END_MARKER, "").chars() {
                        base.insert(c.to_string());
                    }
                }
            }
        }
        let n = merges.len();
        BpeModel::new(merges, base, n)
    }
}

#[derive(PartialEq, Eq)]
struct Candidate {
    count: i64,
    left: String,
    right: String,
    pair: (u32, u32),
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        // Max-heap: higher count first, then lexicographically smaller pair.
        self.count
            .cmp(&other.count)
            .then_with(|| other.left.cmp(&self.left))
            .then_with(|| other.right.cmp(&self.right))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Learner {
    symbols: Vec<String>,
    symbol_ids: HashMap<String, u32>,
    words: Vec<(Vec<u32>, i64)>,
    pair_counts: HashMap<(u32, u32), i64>,
    pair_words: HashMap<(u32, u32), BTreeSet<usize>>,
    heap: BinaryHeap<Candidate>,
}

impl Learner {
    fn intern(&mut self, s: &str) -> u32 {
        if let Some(&id) = self.symbol_ids.get(s) {
            return id;
        }
        let id = self.symbols.len() as u32;
        self.symbols.push(s.to_owned());
        self.symbol_ids.insert(s.to_owned(), id);
        id
    }

    fn push(&mut self, pair: (u32, u32)) {
        let count = self.pair_counts.get(&pair).copied().unwrap_or(0);
        if count > 0 {
            self.heap.push(Candidate {
                count,
                left: self.symbols[pair.0 as usize].clone(),
                right: self.symbols[pair.1 as usize].clone(),
                pair,
            });
        }
    }

    fn add_word_pairs(&mut self, w: usize, sign: i64, touched: &mut HashSet<(u32, u32)>) {
        let (syms, freq) = &self.words[w];
        let freq = *freq;
        let pairs: Vec<(u32, u32)> = syms.windows(2).map(|p| (p[0], p[1])).collect();
        for pair in pairs {
            *self.pair_counts.entry(pair).or_insert(0) += sign * freq;
            if sign > 0 {
                self.pair_words.entry(pair).or_default().insert(w);
            }
            touched.insert(pair);
        }
    }

    /// Pops the best live pair, discarding stale heap entries.
    fn best(&mut self, excluded: &HashSet<(u32, u32)>) -> Option<Candidate> {
        while let Some(top) = self.heap.pop() {
            let live = self.pair_counts.get(&top.pair).copied().unwrap_or(0);
            if live == top.count && !excluded.contains(&top.pair) {
                return Some(top);
            }
        }
        None
    }
}

/// Learns up to `merge_count` merges from word-type frequencies.
///
/// Ties between equally frequent pairs go to the lexicographically smallest
/// `(left, right)`. Learning stops early once no pair occurs at least twice.
/// Pairs whose concatenation already exists as a symbol are never merged, so
/// every merge contributes exactly one new vocabulary entry.
pub fn learn_bpe(corpus: &[Sentence], merge_count: usize) -> BpeModel {
    let mut freqs: BTreeMap<&str, i64> = BTreeMap::new();
    for s in corpus {
        for t in s {
            *freqs.entry(t.as_str()).or_insert(0) += 1;
        }
    }

    let mut learner = Learner {
        symbols: Vec::new(),
        symbol_ids: HashMap::new(),
        words: Vec::with_capacity(freqs.len()),
        pair_counts: HashMap::new(),
        pair_words: HashMap::new(),
        heap: BinaryHeap::new(),
    };
    let mut base = BTreeSet::new();
    base.insert(END_MARKER.to_owned());
    let end = learner.intern(END_MARKER);
    for (word, freq) in freqs {
        let mut syms = Vec::with_capacity(word.len() + 1);
        for c in word.chars() {
            let s = c.to_string();
            syms.push(learner.intern(&s));
            base.insert(s);
        }
        syms.push(end);
        learner.words.push((syms, freq));
    }

    let mut touched = HashSet::new();
    for w in 0..learner.words.len() {
        learner.add_word_pairs(w, 1, &mut touched);
    }
    let mut initial: Vec<_> = touched.drain().collect();
    initial.sort_unstable();
    for pair in initial {
        learner.push(pair);
    }

    let mut merges = Vec::new();
    let mut excluded = HashSet::new();
    while merges.len() < merge_count {
        let Some(best) = learner.best(&excluded) else { break };
        if best.count < 2 {
            break;
        }
        let joined = format!("{}{}", best.left, best.right);
        if learner.symbol_ids.contains_key(&joined) {
            excluded.insert(best.pair);
            continue;
        }
        let new_id = learner.intern(&joined);
        let (a, b) = best.pair;
        let affected: Vec<usize> = learner
            .pair_words
            .remove(&best.pair)
            .map(|s| s.into_iter().collect())
            .unwrap_or_default();
        let mut touched = HashSet::new();
        for w in affected {
            if !learner.words[w].0.windows(2).any(|p| p[0] == a && p[1] == b) {
                continue;
            }
            learner.add_word_pairs(w, -1, &mut touched);
            let old = std::mem::take(&mut learner.words[w].0);
            let mut merged = Vec::with_capacity(old.len());
            let mut i = 0;
            while i < old.len() {
                if i + 1 < old.len() && old[i] == a && old[i + 1] == b {
                    merged.push(new_id);
                    i += 2;
                } else {
                    merged.push(old[i]);
                    i += 1;
                }
            }
            learner.words[w].0 = merged;
            learner.add_word_pairs(w, 1, &mut touched);
        }
        let mut touched: Vec<_> = touched.into_iter().collect();
        touched.sort_unstable();
        for pair in touched {
            learner.push(pair);
        }
        merges.push((best.left, best.right));
    }

    BpeModel::new(merges, base, merge_count).expect("learned merges are unique")
}

/// Joins `@@`-continued units back into words.
pub fn revert_bpe(s: &Sentence) -> Result<Sentence> {
    let mut words = Vec::with_capacity(s.len());
    let mut pending = String::new();
    for unit in s {
        match unit.strip_suffix(CONTINUATION) {
            Some(stem) => pending.push_str(stem),
            None => {
                pending.push_str(unit);
                words.push(std::mem::take(&mut pending));
            }
        }
    }
    if !pending.is_empty() || s.tokens().last().is_some_and(|u| u.ends_with(CONTINUATION)) {
        return Err(Error::MalformedSegmentation(format!(
            "trailing `{CONTINUATION}` in `{s}`"
        )));
    }
    Sentence::new(words).map_err(|_| Error::MalformedSegmentation(format!("empty word in `{s}`")))
}

/// Like [`revert_bpe`] but closes a dangling continuation instead of
/// failing. Model output is not guaranteed to be well formed.
pub fn revert_bpe_lenient(s: &Sentence) -> Sentence {
    let mut words = Vec::with_capacity(s.len());
    let mut pending = String::new();
    for unit in s {
        match unit.strip_suffix(CONTINUATION) {
            Some(stem) => pending.push_str(stem),
            None => {
                pending.push_str(unit);
                words.push(std::mem::take(&mut pending));
            }
        }
    }
    words.push(pending);
    words.retain(|w| !w.is_empty());
    Sentence::new(words).expect("joined units contain no whitespace")
}

/// Whether any unit carries the continuation marker, i.e. the sentence
/// already looks segmented.
pub fn looks_segmented(s: &Sentence) -> bool {
    s.iter().any(|u| u.ends_with(CONTINUATION))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(text: &str) -> Sentence {
        Sentence::parse(text)
    }

    fn model(merges: &[(&str, &str)], chars: &str) -> BpeModel {
        let mut base: BTreeSet<String> = chars.chars().map(|c| c.to_string()).collect();
        base.insert(END_MARKER.into());
        let merges = merges.iter().map(|(l, r)| (l.to_string(), r.to_string())).collect();
        BpeModel::new(merges, base, 0).unwrap()
    }

    /// Brute-force adjacent pair counts over word types.
    fn count_pairs(words: &[(Vec<String>, i64)]) -> BTreeMap<(String, String), i64> {
        let mut counts = BTreeMap::new();
        for (syms, f) in words {
            for w in syms.windows(2) {
                *counts.entry((w[0].clone(), w[1].clone())).or_insert(0) += f;
            }
        }
        counts
    }

    #[test]
    fn first_merge_on_repeated_word() {
        let corpus = vec![s("abab"); 5];
        let words = vec![(vec!["a", "b", "a", "b", END_MARKER].iter().map(|x| x.to_string()).collect(), 5)];
        let counts = count_pairs(&words);
        assert_eq!(counts[&("a".into(), "b".into())], 10);
        assert_eq!(counts[&("b".into(), "a".into())], 5);

        let m = learn_bpe(&corpus, 1);
        assert_eq!(m.merges(), &[("a".to_string(), "b".to_string())]);
    }

    #[test]
    fn zero_merges_splits_into_characters() {
        let m = learn_bpe(&[s("ab ba")], 0);
        assert!(m.merges().is_empty());
        assert_eq!(m.apply(&s("ab")).units, s("a@@ b"));
    }

    #[test]
    fn apply_single_merge() {
        let m = model(&[("a", "b")], "abc");
        let seg = m.apply(&s("abc"));
        assert_eq!(seg.units, s("ab@@ c"));
        assert_eq!(seg.unknown_chars, 0);
    }

    #[test]
    fn apply_reports_unknown_characters() {
        let m = model(&[("a", "b")], "ab");
        let seg = m.apply(&s("abz"));
        assert_eq!(seg.units, s("ab@@ z"));
        assert_eq!(seg.unknown_chars, 1);
        assert_eq!(revert_bpe(&seg.units).unwrap(), s("abz"));
    }

    #[test]
    fn word_final_merges_absorb_marker() {
        let m = model(&[("b", END_MARKER), ("a", "b</w>")], "ab");
        assert_eq!(m.apply(&s("ab bab")).units, s("ab b@@ ab"));
    }

    #[test]
    fn revert_cases() {
        assert_eq!(revert_bpe(&s("x")).unwrap(), s("x"));
        assert!(matches!(revert_bpe(&s("ab@@")), Err(Error::MalformedSegmentation(_))));
        assert_eq!(revert_bpe(&s("ab@@ c d")).unwrap(), s("abc d"));
        assert!(looks_segmented(&s("ab@@ c")));
        assert!(!looks_segmented(&s("ab c")));
    }

    #[test]
    fn learning_stops_without_repeated_pairs() {
        let m = learn_bpe(&[s("abc")], 10);
        assert!(m.merges().is_empty());
        assert_eq!(m.target_merge_count(), 10);
    }

    #[test]
    fn ties_break_lexicographically() {
        // (c,d) and (a,b) both occur twice.
        let m = learn_bpe(&[s("cd ab cd ab")], 1);
        assert_eq!(m.merges()[0], ("a".to_string(), "b".to_string()));
    }

    #[test]
    fn save_load_round_trip() {
        let corpus = vec![s("low lower lowest newer wider"), s("new newest low")];
        let m = learn_bpe(&corpus, 8);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bpe.model");
        m.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("#version: apeforge-bpe 1\n"));
        let loaded = BpeModel::load(&path).unwrap();
        assert_eq!(loaded.merges(), m.merges());
        assert_eq!(loaded.base_symbols(), m.base_symbols());
        assert!(BpeModel::parse("garbage\n", "x").is_err());
        assert!(BpeModel::parse("#version: apeforge-bpe 1\na b c\n", "x").is_err());
    }

    #[test]
    fn incremental_learner_matches_naive_recount() {
        let corpus = vec![
            s("the lower newest widest low low lowest"),
            s("newer wider the the then there"),
        ];
        let m = learn_bpe(&corpus, 12);

        // Naive reference: recount all pairs after every merge.
        let mut freqs: BTreeMap<String, i64> = BTreeMap::new();
        for sent in &corpus {
            for t in sent {
                *freqs.entry(t.clone()).or_insert(0) += 1;
            }
        }
        let mut words: Vec<(Vec<String>, i64)> = freqs
            .into_iter()
            .map(|(w, f)| {
                let mut syms: Vec<String> = w.chars().map(|c| c.to_string()).collect();
                syms.push(END_MARKER.into());
                (syms, f)
            })
            .collect();
        let mut symbols: HashSet<String> = words.iter().flat_map(|(w, _)| w.clone()).collect();
        let mut naive = Vec::new();
        while naive.len() < 12 {
            let counts = count_pairs(&words);
            let best = counts
                .iter()
                .filter(|((l, r), _)| !symbols.contains(&format!("{l}{r}")))
                .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)));
            let Some(((l, r), &c)) = best else { break };
            if c < 2 {
                break;
            }
            let (l, r) = (l.clone(), r.clone());
            for (syms, _) in &mut words {
                let mut out = Vec::new();
                let mut i = 0;
                while i < syms.len() {
                    if i + 1 < syms.len() && syms[i] == l && syms[i + 1] == r {
                        out.push(format!("{l}{r}"));
                        i += 2;
                    } else {
                        out.push(syms[i].clone());
                        i += 1;
                    }
                }
                *syms = out;
            }
            symbols.insert(format!("{l}{r}"));
            naive.push((l, r));
        }
        assert_eq!(m.merges(), &naive[..]);
    }

    proptest! {
        #[test]
        fn revert_inverts_apply(words in proptest::collection::vec("[a-e]{1,7}", 1..8), merges in 0usize..20) {
            let sent = Sentence::new(words).unwrap();
            let m = learn_bpe(&[sent.clone(), s("abc abd bcd cde eab")], merges);
            let seg = m.apply(&sent);
            prop_assert_eq!(seg.unknown_chars, 0);
            prop_assert_eq!(revert_bpe(&seg.units).unwrap(), sent);
        }

        #[test]
        fn vocabulary_counts_base_plus_merges(words in proptest::collection::vec("[a-d]{1,6}", 1..20), merges in 0usize..30) {
            let m = learn_bpe(&[Sentence::new(words).unwrap()], merges);
            prop_assert_eq!(m.vocabulary().len(), m.base_symbols().len() + m.merges().len());
        }
    }
}
