//! Log-linear ensemble beam search with the post-editing penalty.

use std::any::Any;
use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::nmt::vocab::{Vocab, BOS, EOS, PAD};
use crate::nmt::{Encoded, Seq2SeqModel};

/// Opaque per-hypothesis scorer state.
pub type ScorerState = Arc<dyn Any + Send + Sync>;

/// A left-to-right model over a target vocabulary, conditioned on one input
/// sentence. Both methods return log-scores for the *next* token.
pub trait Scorer: Send + Sync {
    fn target_vocab(&self) -> &Vocab;

    fn start(&self, input: &Sentence) -> Result<(Vec<f64>, ScorerState)>;

    fn step(&self, state: &ScorerState, token: u32) -> (Vec<f64>, ScorerState);
}

struct NmtState {
    enc: Arc<Encoded>,
    hidden: Vec<f64>,
}

/// [`Scorer`] backed by an attentional encoder-decoder.
#[derive(Debug, Clone)]
pub struct NmtScorer {
    model: Arc<Seq2SeqModel>,
}

impl NmtScorer {
    pub fn new(model: Arc<Seq2SeqModel>) -> Self {
        NmtScorer { model }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::new(Arc::new(Seq2SeqModel::load(path)?)))
    }

    pub fn model(&self) -> &Seq2SeqModel {
        &self.model
    }

    fn advance(&self, enc: Arc<Encoded>, hidden: &[f64], token: u32) -> (Vec<f64>, ScorerState) {
        let out = self.model.step(&enc, hidden, token);
        (
            out.log_probs,
            Arc::new(NmtState {
                enc,
                hidden: out.state,
            }),
        )
    }
}

impl Scorer for NmtScorer {
    fn target_vocab(&self) -> &Vocab {
        &self.model.tgt_vocab
    }

    fn start(&self, input: &Sentence) -> Result<(Vec<f64>, ScorerState)> {
        let enc = Arc::new(self.model.encode(&self.model.src_vocab.encode(input))?);
        let s0 = self.model.initial_state(&enc);
        Ok(self.advance(enc, &s0, BOS))
    }

    fn step(&self, state: &ScorerState, token: u32) -> (Vec<f64>, ScorerState) {
        let st = state
            .downcast_ref::<NmtState>()
            .expect("state produced by another scorer");
        self.advance(st.enc.clone(), &st.hidden, token)
    }
}

/// Which sentence of a decoding input a scorer conditions on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputSide {
    Mt,
    Src,
}

impl std::str::FromStr for InputSide {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mt" => Ok(InputSide::Mt),
            "src" => Ok(InputSide::Src),
            _ => Err(Error::Config(format!("unknown input `{s}` (expected mt or src)"))),
        }
    }
}

/// Inputs for one sentence to decode.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeInput {
    pub mt: Sentence,
    pub src: Option<Sentence>,
}

impl DecodeInput {
    pub fn get(&self, side: InputSide) -> Result<&Sentence> {
        match side {
            InputSide::Mt => Ok(&self.mt),
            InputSide::Src => self
                .src
                .as_ref()
                .ok_or_else(|| Error::Input("a scorer needs the source sentence but none was given".into())),
        }
    }
}

#[derive(Clone)]
pub struct ScorerBinding {
    pub name: String,
    pub scorer: Arc<dyn Scorer>,
    pub input: InputSide,
    pub weight: f64,
}

impl std::fmt::Debug for ScorerBinding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScorerBinding")
            .field("name", &self.name)
            .field("input", &self.input)
            .field("weight", &self.weight)
            .finish_non_exhaustive()
    }
}

/// Sentences whose units the post-editing penalty treats as allowed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PepInput {
    Mt,
    /// Union over the inputs of all bindings.
    Union,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PepFeature {
    pub input: PepInput,
    pub weight: f64,
}

pub const PEP_NAME: &str = "pep";

/// 0 for every vocabulary entry present in `input` and for `</s>`, −1 for
/// everything else.
pub fn pep_vector<'a, I>(input: I, vocab: &Vocab) -> Vec<f64>
where
    I: IntoIterator<Item = &'a Sentence>,
{
    let allowed: HashSet<&str> = input.into_iter().flat_map(|s| s.iter().map(String::as_str)).collect();
    vocab
        .tokens()
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if i as u32 == EOS || allowed.contains(t.as_str()) {
                0.0
            } else {
                -1.0
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeOptions {
    pub beam: usize,
    pub length_norm: bool,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            beam: 12,
            length_norm: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NBestEntry {
    pub tokens: Sentence,
    /// One value per feature, in [`Decoder::feature_names`] order.
    pub features: Vec<f64>,
    pub combined: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NBestList {
    pub id: usize,
    pub feature_names: Vec<String>,
    pub entries: Vec<NBestEntry>,
    /// No hypothesis reached `</s>` within the length cap.
    pub truncated: bool,
}

impl NBestList {
    pub fn best(&self) -> Option<&NBestEntry> {
        self.entries.first()
    }
}

struct Hyp {
    tokens: Vec<u32>,
    feats: Vec<f64>,
    score: f64,
    states: Vec<ScorerState>,
    next: Vec<Vec<f64>>,
}

/// An assembled ensemble: bindings sharing one target vocabulary plus an
/// optional PEP feature.
#[derive(Debug, Clone)]
pub struct Decoder {
    bindings: Vec<ScorerBinding>,
    pep: Option<PepFeature>,
}

impl Decoder {
    pub fn new(bindings: Vec<ScorerBinding>, pep: Option<PepFeature>) -> Result<Self> {
        let first = bindings
            .first()
            .ok_or_else(|| Error::Assembly("at least one scorer is required".into()))?;
        for b in &bindings[1..] {
            if b.scorer.target_vocab() != first.scorer.target_vocab() {
                return Err(Error::Assembly(format!(
                    "scorer `{}` has a different target vocabulary than `{}`",
                    b.name, first.name
                )));
            }
        }
        let mut seen = HashSet::new();
        for b in &bindings {
            if b.name == PEP_NAME || !seen.insert(b.name.as_str()) {
                return Err(Error::Assembly(format!("duplicate feature name `{}`", b.name)));
            }
        }
        Ok(Decoder { bindings, pep })
    }

    pub fn bindings(&self) -> &[ScorerBinding] {
        &self.bindings
    }

    pub fn vocab(&self) -> &Vocab {
        self.bindings[0].scorer.target_vocab()
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.bindings.iter().map(|b| b.name.clone()).collect();
        if self.pep.is_some() {
            names.push(PEP_NAME.to_owned());
        }
        names
    }

    pub fn weights(&self) -> Vec<f64> {
        let mut w: Vec<f64> = self.bindings.iter().map(|b| b.weight).collect();
        if let Some(p) = &self.pep {
            w.push(p.weight);
        }
        w
    }

    /// Replaces the feature weights, given in [`Decoder::feature_names`] order.
    pub fn set_weights(&mut self, weights: &[f64]) -> Result<()> {
        if weights.len() != self.feature_names().len() {
            return Err(Error::Config(format!(
                "expected {} weights, got {}",
                self.feature_names().len(),
                weights.len()
            )));
        }
        for (b, &w) in self.bindings.iter_mut().zip(weights) {
            b.weight = w;
        }
        if let Some(p) = &mut self.pep {
            p.weight = weights[weights.len() - 1];
        }
        Ok(())
    }

    /// Beam search for one sentence. Candidates are ranked by raw combined
    /// score during search (ties by hypothesis rank then token id); finished
    /// hypotheses leave the beam, which shrinks accordingly. The length cap
    /// is three times the longest bound input.
    pub fn decode(&self, id: usize, input: &DecodeInput, opts: &DecodeOptions) -> Result<NBestList> {
        if opts.beam == 0 {
            return Err(Error::Config("beam size must be at least 1".into()));
        }
        let weights = self.weights();
        let nb = self.bindings.len();
        let vocab_len = self.vocab().len();
        let mut inputs = Vec::with_capacity(nb);
        for b in &self.bindings {
            inputs.push(input.get(b.input)?);
        }
        let pep = self.pep.map(|p| match p.input {
            PepInput::Mt => pep_vector([&input.mt], self.vocab()),
            PepInput::Union => pep_vector(inputs.iter().copied(), self.vocab()),
        });
        let cap = 3 * inputs.iter().map(|s| s.len()).max().unwrap_or(0).max(1);
        let monotone = !opts.length_norm && weights.iter().all(|&w| w >= 0.0);

        let mut states = Vec::with_capacity(nb);
        let mut next = Vec::with_capacity(nb);
        for (b, inp) in self.bindings.iter().zip(&inputs) {
            let (lp, st) = b.scorer.start(inp)?;
            next.push(lp);
            states.push(st);
        }
        let mut live = vec![Hyp {
            tokens: Vec::new(),
            feats: vec![0.0; weights.len()],
            score: 0.0,
            states,
            next,
        }];
        let mut done: Vec<Hyp> = Vec::new();
        for _ in 0..cap {
            let width = opts.beam - done.len();
            let mut cands: Vec<(f64, usize, u32)> = Vec::with_capacity(live.len() * vocab_len);
            for (hi, h) in live.iter().enumerate() {
                for w in 0..vocab_len {
                    if w as u32 == PAD || w as u32 == BOS {
                        continue;
                    }
                    let mut s = h.score;
                    for (i, lp) in h.next.iter().enumerate() {
                        s += weights[i] * lp[w];
                    }
                    if let Some(p) = &pep {
                        s += weights[nb] * p[w];
                    }
                    cands.push((s, hi, w as u32));
                }
            }
            cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            cands.truncate(width);
            let mut new_live = Vec::with_capacity(width);
            for (score, hi, w) in cands {
                let h = &live[hi];
                let mut feats = h.feats.clone();
                for (i, lp) in h.next.iter().enumerate() {
                    feats[i] += lp[w as usize];
                }
                if let Some(p) = &pep {
                    feats[nb] += p[w as usize];
                }
                let mut tokens = h.tokens.clone();
                tokens.push(w);
                if w == EOS {
                    done.push(Hyp {
                        tokens,
                        feats,
                        score,
                        states: Vec::new(),
                        next: Vec::new(),
                    });
                    continue;
                }
                let (next, states) = self
                    .bindings
                    .iter()
                    .zip(&h.states)
                    .map(|(b, st)| b.scorer.step(st, w))
                    .unzip();
                new_live.push(Hyp {
                    tokens,
                    feats,
                    score,
                    states,
                    next,
                });
            }
            live = new_live;
            if done.len() >= opts.beam || live.is_empty() {
                break;
            }
            if monotone {
                let worst_done = done.iter().map(|h| h.score).fold(f64::INFINITY, f64::min);
                if !done.is_empty() && live[0].score < worst_done {
                    break;
                }
            }
        }
        let truncated = done.is_empty();
        let pool = if truncated {
            live.truncate(1);
            live
        } else {
            done
        };
        let vocab = self.vocab();
        let mut entries: Vec<NBestEntry> = pool
            .into_iter()
            .map(|h| {
                let mut features = h.feats;
                if opts.length_norm {
                    let n = h.tokens.len().max(1) as f64;
                    features.iter_mut().for_each(|f| *f /= n);
                }
                let combined = features.iter().zip(&weights).map(|(f, w)| f * w).sum();
                NBestEntry {
                    tokens: vocab.decode(&h.tokens),
                    features,
                    combined,
                }
            })
            .collect();
        entries.sort_by(|a, b| b.combined.total_cmp(&a.combined));
        Ok(NBestList {
            id,
            feature_names: self.feature_names(),
            entries,
            truncated,
        })
    }

    /// Decodes every input independently, in parallel.
    pub fn decode_all(&self, inputs: &[DecodeInput], opts: &DecodeOptions) -> Result<Vec<NBestList>> {
        inputs
            .par_iter()
            .enumerate()
            .map(|(i, inp)| self.decode(i, inp, opts))
            .collect()
    }
}

/// Pairs MT lines with optional source lines.
pub fn pair_inputs(mt: Vec<Sentence>, src: Option<Vec<Sentence>>) -> Result<Vec<DecodeInput>> {
    match src {
        Some(src) if src.len() != mt.len() => Err(Error::Input(format!(
            "source has {} lines but MT has {}",
            src.len(),
            mt.len()
        ))),
        Some(src) => Ok(mt
            .into_iter()
            .zip(src)
            .map(|(mt, src)| DecodeInput { mt, src: Some(src) })
            .collect()),
        None => Ok(mt.into_iter().map(|mt| DecodeInput { mt, src: None }).collect()),
    }
}

/// Writes lists as `id ||| tokens ||| name1= s1 ... ||| combined`.
pub fn format_nbest(lists: &[NBestList]) -> String {
    let mut out = String::new();
    for l in lists {
        for e in &l.entries {
            let _ = write!(out, "{} ||| {} |||", l.id, e.tokens);
            for (n, f) in l.feature_names.iter().zip(&e.features) {
                let _ = write!(out, " {n}= {f:.6}");
            }
            let _ = writeln!(out, " ||| {:.6}", e.combined);
        }
    }
    out
}

pub fn write_nbest(lists: &[NBestList], path: &Path) -> Result<()> {
    std::fs::write(path, format_nbest(lists)).map_err(|e| Error::io(path, e))
}

fn parse_f64(s: &str, loc: &str, line: usize) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::parse(loc, line, format!("invalid number `{s}`")))
}

/// Parses n-best text; consecutive lines with the same id form one list.
pub fn parse_nbest(text: &str, location: &str) -> Result<Vec<NBestList>> {
    let mut lists: Vec<NBestList> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let ln = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split("|||").map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::parse(location, ln, "expected four `|||`-separated fields"));
        }
        let id: usize = fields[0]
            .parse()
            .map_err(|_| Error::parse(location, ln, format!("invalid id `{}`", fields[0])))?;
        let mut names = Vec::new();
        let mut features = Vec::new();
        let mut parts = fields[2].split_whitespace();
        while let Some(name) = parts.next() {
            let name = name
                .strip_suffix('=')
                .ok_or_else(|| Error::parse(location, ln, format!("expected `name=`, found `{name}`")))?;
            let v = parts
                .next()
                .ok_or_else(|| Error::parse(location, ln, format!("missing value for `{name}`")))?;
            names.push(name.to_owned());
            features.push(parse_f64(v, location, ln)?);
        }
        let entry = NBestEntry {
            tokens: Sentence::parse(fields[1]),
            features,
            combined: parse_f64(fields[3], location, ln)?,
        };
        match lists.last_mut() {
            Some(l) if l.id == id => {
                if l.feature_names != names {
                    return Err(Error::parse(location, ln, "feature names differ within a list"));
                }
                l.entries.push(entry);
            }
            _ => lists.push(NBestList {
                id,
                feature_names: names,
                entries: vec![entry],
                truncated: false,
            }),
        }
    }
    Ok(lists)
}

pub fn read_nbest(path: &Path) -> Result<Vec<NBestList>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_nbest(&text, &path.display().to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScorerSpec {
    pub name: String,
    pub model: PathBuf,
    pub input: InputSide,
    pub weight: f64,
}

/// Decoder configuration, one declaration per line:
///
/// ```text
/// scorer mt2pe model=mt2pe.bin input=mt weight=0.8
/// scorer src2pe model=src2pe.bin input=src weight=0.2
/// feature pep input=mt weight=1
/// beam 12
/// length-norm on
/// ```
///
/// Relative model paths resolve against the config file's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    pub scorers: Vec<ScorerSpec>,
    pub pep: Option<PepFeature>,
    pub options: DecodeOptions,
}

fn key_values<'a>(
    words: impl Iterator<Item = &'a str>,
    loc: &str,
    ln: usize,
) -> Result<Vec<(&'a str, &'a str)>> {
    words
        .map(|w| {
            w.split_once('=')
                .ok_or_else(|| Error::parse(loc, ln, format!("expected key=value, found `{w}`")))
        })
        .collect()
}

impl DecoderConfig {
    pub fn parse(text: &str, location: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg = DecoderConfig {
            scorers: Vec::new(),
            pep: None,
            options: DecodeOptions::default(),
        };
        for (i, raw) in text.lines().enumerate() {
            let ln = i + 1;
            let line = raw.split('#').next().unwrap().trim();
            let mut words = line.split_whitespace();
            let Some(kind) = words.next() else { continue };
            let err = |m: String| Error::parse(location, ln, m);
            match kind {
                "scorer" => {
                    let name = words.next().ok_or_else(|| err("scorer needs a name".into()))?;
                    let (mut model, mut input, mut weight) = (None, InputSide::Mt, 1.0);
                    for (k, v) in key_values(words, location, ln)? {
                        match k {
                            "model" => model = Some(base_dir.join(v)),
                            "input" => input = v.parse().map_err(|e: Error| err(e.to_string()))?,
                            "weight" => weight = parse_f64(v, location, ln)?,
                            _ => return Err(err(format!("unknown scorer key `{k}`"))),
                        }
                    }
                    cfg.scorers.push(ScorerSpec {
                        name: name.to_owned(),
                        model: model.ok_or_else(|| err("scorer needs model=".into()))?,
                        input,
                        weight,
                    });
                }
                "feature" => {
                    if words.next() != Some(PEP_NAME) {
                        return Err(err("only `feature pep` is supported".into()));
                    }
                    let mut pep = PepFeature {
                        input: PepInput::Mt,
                        weight: 1.0,
                    };
                    for (k, v) in key_values(words, location, ln)? {
                        match (k, v) {
                            ("input", "mt") => pep.input = PepInput::Mt,
                            ("input", "union") => pep.input = PepInput::Union,
                            ("weight", v) => pep.weight = parse_f64(v, location, ln)?,
                            _ => return Err(err(format!("bad pep setting `{k}={v}`"))),
                        }
                    }
                    cfg.pep = Some(pep);
                }
                "beam" => {
                    cfg.options.beam = words
                        .next()
                        .and_then(|v| v.parse().ok())
                        .filter(|&b| b >= 1)
                        .ok_or_else(|| err("beam needs a positive integer".into()))?;
                }
                "length-norm" => {
                    cfg.options.length_norm = match words.next() {
                        Some("on") | None => true,
                        Some("off") => false,
                        Some(v) => return Err(err(format!("length-norm expects on|off, found `{v}`"))),
                    };
                }
                _ => return Err(err(format!("unknown declaration `{kind}`"))),
            }
        }
        if cfg.scorers.is_empty() {
            return Err(Error::Config(format!("{location}: no scorer declared")));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, &path.display().to_string(), base)
    }

    pub fn needs_src(&self) -> bool {
        self.scorers.iter().any(|s| s.input == InputSide::Src)
    }

    /// Loads the models and assembles the decoder.
    pub fn assemble(&self) -> Result<Decoder> {
        let mut bindings = Vec::with_capacity(self.scorers.len());
        for s in &self.scorers {
            bindings.push(ScorerBinding {
                name: s.name.clone(),
                scorer: Arc::new(NmtScorer::load(&s.model)?),
                input: s.input,
                weight: s.weight,
            });
        }
        Decoder::new(bindings, self.pep)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Fixed next-token table keyed by the previous token, ignoring input.
    struct Table {
        vocab: Vocab,
        rows: Vec<Vec<f64>>,
    }

    impl Scorer for Table {
        fn target_vocab(&self) -> &Vocab {
            &self.vocab
        }
        fn start(&self, _: &Sentence) -> Result<(Vec<f64>, ScorerState)> {
            Ok((self.rows[BOS as usize].clone(), Arc::new(BOS)))
        }
        fn step(&self, _: &ScorerState, token: u32) -> (Vec<f64>, ScorerState) {
            (self.rows[token as usize].clone(), Arc::new(token))
        }
    }

    fn vocab() -> Vocab {
        Vocab::from_tokens(["der", "das", "Haus", "ist"].map(String::from))
    }

    fn table() -> Arc<dyn Scorer> {
        let v = vocab();
        let n = v.len();
        let ln = |ps: &[(u32, f64)]| {
            let mut row = vec![(1e-6f64).ln(); n];
            for &(i, p) in ps {
                row[i as usize] = p.ln();
            }
            row
        };
        let mut rows = vec![ln(&[(EOS, 1.0)]); n];
        rows[BOS as usize] = ln(&[(4, 0.6), (5, 0.4)]);
        rows[4] = ln(&[(6, 0.5), (EOS, 0.5)]);
        rows[5] = ln(&[(6, 0.9), (EOS, 0.1)]);
        rows[6] = ln(&[(EOS, 0.7), (7, 0.3)]);
        Arc::new(Table { vocab: v, rows })
    }

    fn bind(name: &str, w: f64) -> ScorerBinding {
        ScorerBinding {
            name: name.into(),
            scorer: table(),
            input: InputSide::Mt,
            weight: w,
        }
    }

    fn input(s: &str) -> DecodeInput {
        DecodeInput {
            mt: Sentence::parse(s),
            src: None,
        }
    }

    #[test]
    fn pep_vector_rule() {
        let v = Vocab::from_tokens(["der", "das", "Haus", "ist"].map(String::from));
        let p = pep_vector([&Sentence::parse("der Haus")], &v);
        assert_eq!(&p[4..], &[0.0, -1.0, 0.0, -1.0]);
        assert_eq!(p[EOS as usize], 0.0);
        let empty = pep_vector([&Sentence::parse("")], &v);
        assert_eq!(empty.iter().filter(|&&x| x == 0.0).count(), 1);
        let all = pep_vector([&Sentence::parse("<pad> <s> <unk> der das Haus ist")], &v);
        assert!(all.iter().all(|&x| x == 0.0));
    }

    fn random_table(logits: &[f64]) -> Arc<dyn Scorer> {
        let v = vocab();
        let n = v.len();
        let rows = logits
            .chunks(n)
            .map(|c| {
                let z = c.iter().map(|x| x.exp()).sum::<f64>().ln();
                c.iter().map(|x| x - z).collect()
            })
            .collect();
        Arc::new(Table { vocab: v, rows })
    }

    proptest::proptest! {
        #[test]
        fn nbest_is_sorted_and_bounded(
            logits in proptest::collection::vec(-3.0f64..3.0, 64),
            w in -2.0f64..2.0,
            beam in 1usize..6,
            length_norm: bool,
        ) {
            let b = ScorerBinding { name: "t".into(), scorer: random_table(&logits), input: InputSide::Mt, weight: w };
            let d = Decoder::new(vec![b], None).unwrap();
            let l = d.decode(0, &input("der das"), &DecodeOptions { beam, length_norm }).unwrap();
            proptest::prop_assert!(!l.entries.is_empty());
            proptest::prop_assert!(l.entries.len() <= beam);
            proptest::prop_assert!(l.entries.windows(2).all(|p| p[0].combined >= p[1].combined));
            for e in &l.entries {
                proptest::prop_assert!((e.combined - w * e.features[0]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn beam_finds_best_and_sorts() {
        let d = Decoder::new(vec![bind("a", 1.0)], None).unwrap();
        let opts = DecodeOptions {
            beam: 4,
            length_norm: false,
        };
        let l = d.decode(0, &input("der"), &opts).unwrap();
        // der </s> = .3, der Haus </s> = .21, das Haus </s> = .252
        assert_eq!(l.entries[0].tokens, Sentence::parse("der"));
        assert_eq!(l.entries[1].tokens, Sentence::parse("das Haus"));
        assert!(l.entries.windows(2).all(|w| w[0].combined >= w[1].combined));
        assert!(l.entries.len() <= 4);
        assert!(!l.truncated);
    }

    #[test]
    fn duplicated_binding_matches_single() {
        let opts = DecodeOptions::default();
        let single = Decoder::new(vec![bind("a", 1.0)], None).unwrap();
        let double = Decoder::new(vec![bind("a", 0.5), bind("b", 0.5)], None).unwrap();
        let s = single.decode(0, &input("x"), &opts).unwrap();
        let d = double.decode(0, &input("x"), &opts).unwrap();
        let toks = |l: &NBestList| l.entries.iter().map(|e| e.tokens.clone()).collect::<Vec<_>>();
        assert_eq!(toks(&s), toks(&d));
        for (a, b) in s.entries.iter().zip(&d.entries) {
            assert_eq!(a.combined, b.combined);
        }
    }

    #[test]
    fn pep_restricts_output() {
        let pep = PepFeature {
            input: PepInput::Mt,
            weight: 1e6,
        };
        let d = Decoder::new(vec![bind("a", 1.0)], Some(pep)).unwrap();
        let l = d.decode(0, &input("das ist"), &DecodeOptions::default()).unwrap();
        assert_eq!(l.entries[0].tokens, Sentence::parse("das"));
        assert_eq!(d.feature_names(), vec!["a", "pep"]);
    }

    #[test]
    fn vocabulary_mismatch_is_rejected() {
        let mut other = bind("b", 1.0);
        other.scorer = Arc::new(Table {
            vocab: Vocab::from_tokens(["x".to_string()]),
            rows: vec![vec![0.0; 5]; 5],
        });
        assert!(matches!(Decoder::new(vec![bind("a", 1.0), other], None), Err(Error::Assembly(_))));
        assert!(Decoder::new(vec![], None).is_err());
        assert!(Decoder::new(vec![bind("a", 1.0), bind("a", 1.0)], None).is_err());
    }

    #[test]
    fn missing_src_is_an_error() {
        let mut b = bind("a", 1.0);
        b.input = InputSide::Src;
        let d = Decoder::new(vec![b], None).unwrap();
        assert!(d.decode(0, &input("der"), &DecodeOptions::default()).is_err());
    }

    #[test]
    fn truncation_is_flagged() {
        let v = vocab();
        let mut rows = vec![vec![-10.0; v.len()]; v.len()];
        for r in &mut rows {
            r[7] = 0.0;
        }
        let s: Arc<dyn Scorer> = Arc::new(Table { vocab: v, rows });
        let b = ScorerBinding {
            name: "loop".into(),
            scorer: s,
            input: InputSide::Mt,
            weight: 1.0,
        };
        let d = Decoder::new(vec![b], None).unwrap();
        let opts = DecodeOptions {
            beam: 1,
            length_norm: false,
        };
        let l = d.decode(3, &input("a b"), &opts).unwrap();
        assert!(l.truncated);
        assert_eq!(l.entries[0].tokens.len(), 6);
    }

    #[test]
    fn nbest_round_trip_and_format() {
        let d = Decoder::new(vec![bind("a", 0.7), bind("b", 0.3)], None).unwrap();
        let lists = d.decode_all(&[input("x"), input("y")], &DecodeOptions::default()).unwrap();
        let text = format_nbest(&lists);
        let back = parse_nbest(&text, "t").unwrap();
        assert_eq!(format_nbest(&back), text);
        assert_eq!(back.len(), 2);
        let one = NBestList {
            id: 7,
            feature_names: vec!["f".into(), "pep".into()],
            entries: vec![NBestEntry {
                tokens: Sentence::parse("a b"),
                features: vec![-1.5, -2.0],
                combined: -3.5,
            }],
            truncated: false,
        };
        assert_eq!(format_nbest(&[one]), "7 ||| a b ||| f= -1.500000 pep= -2.000000 ||| -3.500000\n");
        let err = parse_nbest("0 ||| a b f= 1 ||| 2\n", "t").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn config_parsing() {
        let text = "# ensemble\nscorer m model=a.bin input=mt weight=0.8\nscorer s model=/abs/b.bin input=src weight=0.2\nfeature pep input=union weight=1.5\nbeam 5\nlength-norm off\n";
        let c = DecoderConfig::parse(text, "cfg", Path::new("/dir")).unwrap();
        assert_eq!(c.scorers[0].model, PathBuf::from("/dir/a.bin"));
        assert_eq!(c.scorers[1].model, PathBuf::from("/abs/b.bin"));
        assert_eq!(c.scorers[1].input, InputSide::Src);
        assert_eq!(c.pep, Some(PepFeature { input: PepInput::Union, weight: 1.5 }));
        assert_eq!(c.options, DecodeOptions { beam: 5, length_norm: false });
        assert!(c.needs_src());
        assert!(DecoderConfig::parse("scorer m input=mt", "cfg", Path::new(".")).is_err());
        assert!(DecoderConfig::parse("beam 0\nscorer m model=x", "cfg", Path::new(".")).is_err());
        assert!(DecoderConfig::parse("", "cfg", Path::new(".")).is_err());
    }
}
