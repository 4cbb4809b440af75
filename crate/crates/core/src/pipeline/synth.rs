//! Synthetic data: a toy sentence grammar and controlled corruption of
//! post-edits into (src, mt, pe) triplets.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::corpus::{Sentence, Triplet};
use crate::error::{Error, Result};

const DETERMINERS: &[&str] = &["der", "die", "das", "ein", "eine", "dieser", "jede"];
const ADJECTIVES: &[&str] = &["kleine", "große", "alte", "neue", "rote", "schnelle", "müde", "kluge"];
const NOUNS: &[&str] = &[
    "Haus", "Hund", "Katze", "Mann", "Frau", "Kind", "Auto", "Buch", "Baum", "Stadt", "Tisch", "Garten",
    "Lehrer", "Vogel", "Zug", "Brief",
];
const VERBS: &[&str] = &["sieht", "findet", "kauft", "liest", "trägt", "hört", "baut", "malt", "sucht", "liebt"];
const ADVERBS: &[&str] = &["heute", "morgen", "oft", "gern", "schnell", "langsam", "nie"];
const PREPOSITIONS: &[&str] = &["im", "am", "vor", "hinter", "neben", "unter"];
const CONJUNCTIONS: &[&str] = &["und", "aber"];
const PUNCTUATION: &[&str] = &[".", "!"];
const FILLERS: &[&str] = &["äh", "ja", "so", "eben", "halt", "mal", "wohl", "doch"];

const CLASSES: &[&[&str]] = &[
    DETERMINERS,
    ADJECTIVES,
    NOUNS,
    VERBS,
    ADVERBS,
    PREPOSITIONS,
    CONJUNCTIONS,
    PUNCTUATION,
];

/// Small generative grammar of German-like declarative sentences.
#[derive(Debug, Clone, Copy, Default)]
pub struct ToyGrammar;

impl ToyGrammar {
    pub fn words(&self) -> Vec<&'static str> {
        CLASSES.iter().flat_map(|c| c.iter().copied()).collect()
    }

    /// Tokens used for spurious insertions; disjoint from [`ToyGrammar::words`].
    pub fn fillers(&self) -> Vec<String> {
        FILLERS.iter().map(|s| s.to_string()).collect()
    }

    fn noun_phrase<R: Rng>(&self, rng: &mut R, out: &mut Vec<&'static str>) {
        out.push(DETERMINERS.choose(rng).unwrap());
        if rng.gen_bool(0.4) {
            out.push(ADJECTIVES.choose(rng).unwrap());
        }
        out.push(NOUNS.choose(rng).unwrap());
    }

    fn clause<R: Rng>(&self, rng: &mut R, out: &mut Vec<&'static str>) {
        self.noun_phrase(rng, out);
        out.push(VERBS.choose(rng).unwrap());
        self.noun_phrase(rng, out);
        if rng.gen_bool(0.3) {
            out.push(ADVERBS.choose(rng).unwrap());
        }
        if rng.gen_bool(0.3) {
            out.push(PREPOSITIONS.choose(rng).unwrap());
            out.push(NOUNS.choose(rng).unwrap());
        }
    }

    pub fn sentence<R: Rng>(&self, rng: &mut R) -> Sentence {
        let mut words = Vec::new();
        self.clause(rng, &mut words);
        if rng.gen_bool(0.15) {
            words.push(CONJUNCTIONS.choose(rng).unwrap());
            self.clause(rng, &mut words);
        }
        words.push(if rng.gen_bool(0.9) { "." } else { "!" });
        Sentence::new(words).expect("grammar words are valid tokens")
    }

    pub fn sentences(&self, n: usize, seed: u64) -> Vec<Sentence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.sentence(&mut rng)).collect()
    }

    /// Each word maps to its successor within its class (a plausible
    /// real-word error) and to a misspelling.
    pub fn confusions(&self) -> ConfusionTable {
        let all = self.words();
        let mut table = BTreeMap::new();
        for class in CLASSES {
            for (i, w) in class.iter().enumerate() {
                let sibling = class[(i + 1) % class.len()].to_string();
                let mut typo = format!("{w}{}", w.chars().last().unwrap());
                while all.contains(&typo.as_str()) {
                    typo.push('x');
                }
                table.insert(w.to_string(), vec![sibling, typo]);
            }
        }
        ConfusionTable(table)
    }
}

/// Substitution candidates per word.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfusionTable(pub BTreeMap<String, Vec<String>>);

impl ConfusionTable {
    /// `word<TAB>alt1 alt2 ...` lines.
    pub fn parse(text: &str, location: &str) -> Result<Self> {
        let mut table = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (w, alts) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(location, i + 1, "expected word<TAB>alternatives"))?;
            let alts: Vec<String> = alts.split_whitespace().map(str::to_owned).collect();
            if alts.is_empty() {
                return Err(Error::parse(location, i + 1, "no alternatives"));
            }
            table.insert(w.trim().to_owned(), alts);
        }
        Ok(ConfusionTable(table))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}

/// Per-token corruption probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseSpec {
    pub substitution: f64,
    pub deletion: f64,
    pub insertion: f64,
    /// Probability that a position starts a swap with its right neighbour.
    pub swap: f64,
}

impl NoiseSpec {
    /// Splits a total rate 40/20/20/20 over substitution, deletion,
    /// insertion and swap.
    pub fn total(rate: f64) -> Self {
        NoiseSpec {
            substitution: 0.4 * rate,
            deletion: 0.2 * rate,
            insertion: 0.2 * rate,
            swap: 0.2 * rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("substitution", self.substitution),
            ("deletion", self.deletion),
            ("insertion", self.insertion),
            ("swap", self.swap),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Deterministic stand-in for a source-language token. With `buckets`, the
/// hash is folded so distinct words can collide.
pub fn cipher_token(token: &str, buckets: Option<u64>) -> String {
    let h = Sha256::digest(token.as_bytes());
    let v = u64::from_le_bytes(h[..8].try_into().unwrap());
    match buckets {
        Some(b) => format!("s{}", v % b.max(1)),
        None => format!("s{:08x}", v as u32),
    }
}

pub fn cipher(s: &Sentence, buckets: Option<u64>) -> Sentence {
    Sentence::new(s.iter().map(|t| cipher_token(t, buckets))).expect("cipher tokens are valid")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corruptor {
    pub noise: NoiseSpec,
    pub confusions: ConfusionTable,
    pub fillers: Vec<String>,
    pub cipher_buckets: Option<u64>,
}

impl Corruptor {
    /// Toy-grammar confusions and fillers with the given noise.
    pub fn toy(noise: NoiseSpec) -> Self {
        Corruptor {
            noise,
            confusions: ToyGrammar.confusions(),
            fillers: ToyGrammar.fillers(),
            cipher_buckets: None,
        }
    }

    fn corrupt<R: Rng>(&self, pe: &Sentence, rng: &mut R) -> Vec<String> {
        let n = &self.noise;
        let mut out = Vec::with_capacity(pe.len() + 2);
        for tok in pe {
            let del = rng.gen::<f64>() < n.deletion;
            let sub = rng.gen::<f64>() < n.substitution;
            let ins = rng.gen::<f64>() < n.insertion;
            if !del {
                let alts = self.confusions.0.get(tok).filter(|_| sub);
                out.push(match alts {
                    Some(a) => a.choose(rng).unwrap().clone(),
                    None => tok.clone(),
                });
            }
            if ins && !self.fillers.is_empty() {
                out.push(self.fillers.choose(rng).unwrap().clone());
            }
        }
        let mut i = 0;
        while i + 1 < out.len() {
            if rng.gen::<f64>() < n.swap {
                out.swap(i, i + 1);
                i += 2;
            } else {
                i += 1;
            }
        }
        if out.is_empty() {
            out.push(pe.tokens()[0].clone());
        }
        out
    }
}

/// Builds triplets from post-edits: `mt` is `pe` corrupted per the noise
/// spec and `src` a token-wise cipher of `pe`.
pub fn synth_corrupt(pe_corpus: &[Sentence], corruptor: &Corruptor, seed: u64) -> Result<Vec<Triplet>> {
    corruptor.noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pe_corpus
        .iter()
        .filter(|pe| !pe.is_empty())
        .map(|pe| {
            let mt = Sentence::new(corruptor.corrupt(pe, &mut rng))?;
            Triplet::new(cipher(pe, corruptor.cipher_buckets), mt, pe.clone())
        })
        .collect()
}
