//! Log-linear weight tuning toward lower TER with hope/fear MIRA updates
//! over accumulated n-best lists.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Sentence, Triplet};
use crate::decoder::{DecodeInput, DecodeOptions, Decoder, NBestList};
use crate::error::{Error, Result};
use crate::metrics::ter;
use crate::subword::revert_bpe_lenient;

/// Named log-linear weights.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWeights {
    names: Vec<String>,
    values: Vec<f64>,
}

impl FeatureWeights {
    pub fn new(names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if names.len() != values.len() || names.is_empty() {
            return Err(Error::Config("need one weight per feature".into()));
        }
        if values.iter().any(|v| !v.is_finite()) || values.iter().all(|&v| v == 0.0) {
            return Err(Error::Config("weights must be finite and not all zero".into()));
        }
        let unique: HashSet<&String> = names.iter().collect();
        if unique.len() != names.len() {
            return Err(Error::Config("duplicate feature name".into()));
        }
        Ok(FeatureWeights { names, values })
    }

    pub fn uniform(names: Vec<String>) -> Result<Self> {
        let v = 1.0 / names.len().max(1) as f64;
        let values = vec![v; names.len()];
        Self::new(names, values)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }

    /// Values reordered to `names`; every name must be present.
    pub fn aligned_to(&self, names: &[String]) -> Result<Vec<f64>> {
        if names.len() != self.names.len() {
            return Err(Error::Config(format!(
                "weights cover {:?} but features are {names:?}",
                self.names
            )));
        }
        names
            .iter()
            .map(|n| {
                self.get(n)
                    .ok_or_else(|| Error::Config(format!("no weight for feature `{n}`")))
            })
            .collect()
    }

    /// `name<TAB>value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (n, v) in self.names.iter().zip(&self.values) {
            let _ = writeln!(out, "{n}\t{v}");
        }
        out
    }

    pub fn parse(text: &str, location: &str) -> Result<Self> {
        let mut names = Vec::new();
        let mut values = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (n, v) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(location, i + 1, "expected name<TAB>value"))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::parse(location, i + 1, format!("invalid weight `{v}`")))?;
            names.push(n.trim().to_owned());
            values.push(v);
        }
        Self::new(names, values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneConfig {
    pub outer_iterations: usize,
    /// MIRA step cap.
    pub mira_c: f64,
    pub inner_epochs: usize,
    pub seed: u64,
    pub accumulate_nbest: bool,
    /// Join subword units into words before computing TER.
    pub score_on_words: bool,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            outer_iterations: 2,
            mira_c: 0.01,
            inner_epochs: 15,
            seed: 1,
            accumulate_nbest: true,
            score_on_words: true,
        }
    }
}

/// One candidate with its features and TER statistics against the reference.
#[derive(Debug, Clone, PartialEq)]
pub struct TuneHyp {
    pub text: Sentence,
    pub features: Vec<f64>,
    pub edits: f64,
    pub ref_len: f64,
}

impl TuneHyp {
    /// Sentence TER as a fraction.
    pub fn loss(&self) -> f64 {
        self.edits / self.ref_len
    }
}

/// Candidates for one dev sentence, in decoder rank order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TuneSentence {
    pub hyps: Vec<TuneHyp>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn argmax_by(hyps: &[TuneHyp], key: impl Fn(&TuneHyp) -> f64) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, h) in hyps.iter().enumerate() {
        let v = key(h);
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Index of the highest-scoring hypothesis per sentence; ties keep the
/// earlier one.
pub fn rerank_indices(sentences: &[TuneSentence], weights: &[f64]) -> Vec<usize> {
    sentences
        .iter()
        .map(|s| argmax_by(&s.hyps, |h| dot(weights, &h.features)))
        .collect()
}

/// Corpus TER (percent) of the 1-best selections under `weights`.
pub fn reranked_ter(sentences: &[TuneSentence], weights: &[f64]) -> f64 {
    let (mut edits, mut len) = (0.0, 0.0);
    for (s, i) in sentences.iter().zip(rerank_indices(sentences, weights)) {
        if let Some(h) = s.hyps.get(i) {
            edits += h.edits;
            len += h.ref_len;
        }
    }
    if len == 0.0 {
        0.0
    } else {
        100.0 * edits / len
    }
}

/// Best entry of every list under `weights`; ties keep the original rank.
pub fn rerank(lists: &[NBestList], weights: &[f64]) -> Vec<Sentence> {
    lists
        .iter()
        .map(|l| {
            let mut best: Option<(&Sentence, f64)> = None;
            for e in &l.entries {
                let s = dot(weights, &e.features);
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((&e.tokens, s));
                }
            }
            best.map(|(t, _)| t.clone()).unwrap_or_default()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiraOutcome {
    pub weights: Vec<f64>,
    pub ter: f64,
    pub initial_ter: f64,
}

/// Runs `inner_epochs` of online hope/fear MIRA from `init` and returns
/// whichever of `init` and the running-average weights after each epoch
/// gives the lowest re-ranked corpus TER.
pub fn mira(sentences: &[TuneSentence], init: &[f64], cfg: &TuneConfig) -> MiraOutcome {
    let initial_ter = reranked_ter(sentences, init);
    let mut best = (init.to_vec(), initial_ter);
    let mut w = init.to_vec();
    let mut sum = vec![0.0; w.len()];
    let mut count = 0usize;
    let mut order: Vec<usize> = (0..sentences.len()).filter(|&i| !sentences[i].hyps.is_empty()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.inner_epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let hyps = &sentences[i].hyps;
            let hope = &hyps[argmax_by(hyps, |h| dot(&w, &h.features) - h.loss())];
            let fear = &hyps[argmax_by(hyps, |h| dot(&w, &h.features) + h.loss())];
            let diff: Vec<f64> = hope.features.iter().zip(&fear.features).map(|(a, b)| a - b).collect();
            let margin = fear.loss() - hope.loss() - dot(&w, &diff);
            let norm2 = dot(&diff, &diff);
            if margin > 0.0 && norm2 > 0.0 {
                let eta = cfg.mira_c.min(margin / norm2);
                for (wk, dk) in w.iter_mut().zip(&diff) {
                    *wk += eta * dk;
                }
            }
            for (s, wk) in sum.iter_mut().zip(&w) {
                *s += wk;
            }
            count += 1;
        }
        if count > 0 {
            let avg: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
            let t = reranked_ter(sentences, &avg);
            if t < best.1 {
                best = (avg, t);
            }
        }
    }
    MiraOutcome {
        weights: best.0,
        ter: best.1,
        initial_ter,
    }
}

fn words(s: &Sentence, on_words: bool) -> Sentence {
    if on_words {
        revert_bpe_lenient(s)
    } else {
        s.clone()
    }
}

/// Adds the entries of `lists` to `acc`, skipping hypotheses already seen.
pub fn accumulate(
    acc: &mut [TuneSentence],
    lists: &[NBestList],
    refs: &[Sentence],
    feature_names: &[String],
    on_words: bool,
) -> Result<()> {
    for l in lists {
        if l.feature_names != feature_names {
            return Err(Error::Config(format!(
                "n-best features {:?} do not match {feature_names:?}",
                l.feature_names
            )));
        }
        let (Some(slot), Some(r)) = (acc.get_mut(l.id), refs.get(l.id)) else {
            return Err(Error::Input(format!("n-best id {} out of range", l.id)));
        };
        let r = words(r, on_words);
        for e in &l.entries {
            if slot.hyps.iter().any(|h| h.text == e.tokens) {
                continue;
            }
            let a = ter(&words(&e.tokens, on_words), &r);
            slot.hyps.push(TuneHyp {
                text: e.tokens.clone(),
                features: e.features.clone(),
                edits: a.edits() as f64,
                ref_len: a.ref_len.max(1) as f64,
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneOutcome {
    pub weights: FeatureWeights,
    /// Re-ranked corpus TER after each outer iteration.
    pub history: Vec<f64>,
}

/// Decode inputs for dev triplets.
pub fn decode_inputs(dev: &[Triplet]) -> Vec<DecodeInput> {
    dev.iter()
        .map(|t| DecodeInput {
            mt: t.mt.clone(),
            src: Some(t.src.clone()),
        })
        .collect()
}

/// Alternates decoding the dev set with the current weights and MIRA over
/// the accumulated lists, starting from uniform weights.
pub fn tune(dev: &[Triplet], decoder: &Decoder, opts: &DecodeOptions, cfg: &TuneConfig) -> Result<TuneOutcome> {
    if dev.is_empty() {
        return Err(Error::Input("empty dev set".into()));
    }
    if cfg.outer_iterations == 0 {
        return Err(Error::Config("outer_iterations must be at least 1".into()));
    }
    let names = decoder.feature_names();
    let mut weights = FeatureWeights::uniform(names.clone())?.values().to_vec();
    let mut dec = decoder.clone();
    let inputs = decode_inputs(dev);
    let refs: Vec<Sentence> = dev.iter().map(|t| t.pe.clone()).collect();
    let mut acc = vec![TuneSentence::default(); dev.len()];
    let mut history = Vec::new();
    for it in 0..cfg.outer_iterations {
        dec.set_weights(&weights)?;
        let lists = dec.decode_all(&inputs, opts)?;
        if !cfg.accumulate_nbest {
            acc.iter_mut().for_each(|s| s.hyps.clear());
        }
        accumulate(&mut acc, &lists, &refs, &names, cfg.score_on_words)?;
        let out = mira(&acc, &weights, cfg);
        log::info!(
            "tuning iteration {}: TER {:.2} -> {:.2}",
            it + 1,
            out.initial_ter,
            out.ter
        );
        history.push(out.ter);
        weights = out.weights;
    }
    Ok(TuneOutcome {
        weights: FeatureWeights::new(names, weights)?,
        history,
    })
}
