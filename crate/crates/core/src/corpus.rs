//! Sentences, APE triplets and the corpus-level plumbing around them.
//!
//! Text is assumed to be tokenized upstream; a [`Sentence`] is simply the
//! whitespace-split token sequence of one line. Triplets live on disk as
//! three line-aligned files sharing a prefix (`PREFIX.src`, `PREFIX.mt`,
//! `PREFIX.pe`).

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// A whitespace-tokenized sentence. Tokens are never empty and never contain
/// whitespace.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sentence(Vec<String>);

impl Sentence {
    pub fn new<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        for t in &tokens {
            if t.is_empty() {
                return Err(Error::InvalidSentence("empty token".into()));
            }
            if t.chars().any(char::is_whitespace) {
                return Err(Error::InvalidSentence(format!("token `{t}` contains whitespace")));
            }
        }
        Ok(Sentence(tokens))
    }

    /// Splits a line on runs of whitespace. Cannot fail.
    pub fn parse(line: &str) -> Self {
        Sentence(line.split_whitespace().map(str::to_owned).collect())
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn into_tokens(self) -> Vec<String> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, String> {
        self.0.iter()
    }

    /// Number of Unicode letter characters across all tokens.
    pub fn letter_count(&self) -> usize {
        self.0.iter().flat_map(|t| t.chars()).filter(|c| c.is_alphabetic()).count()
    }
}

impl fmt::Display for Sentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            f.write_str(t)?;
        }
        Ok(())
    }
}

impl<'a> IntoIterator for &'a Sentence {
    type Item = &'a String;
    type IntoIter = std::slice::Iter<'a, String>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// One APE training example.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub src: Sentence,
    pub mt: Sentence,
    pub pe: Sentence,
}

impl Triplet {
    pub fn new(src: Sentence, mt: Sentence, pe: Sentence) -> Result<Self> {
        if src.is_empty() || mt.is_empty() || pe.is_empty() {
            return Err(Error::InvalidSentence("triplet fields must be non-empty".into()));
        }
        Ok(Triplet { src, mt, pe })
    }
}

/// The three file paths belonging to a triplet corpus prefix.
pub fn triplet_paths(prefix: impl AsRef<Path>) -> [PathBuf; 3] {
    let p = prefix.as_ref().as_os_str();
    let with = |ext: &str| {
        let mut s = p.to_owned();
        s.push(ext);
        PathBuf::from(s)
    };
    [with(".src"), with(".mt"), with(".pe")]
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(path, e))
}

/// Reads a monolingual corpus, one sentence per line. Empty lines become
/// empty sentences.
pub fn read_sentences(path: impl AsRef<Path>) -> Result<Vec<Sentence>> {
    Ok(read_lines(path.as_ref())?.iter().map(|l| Sentence::parse(l)).collect())
}

pub fn write_sentences<'a, I>(path: impl AsRef<Path>, sentences: I) -> Result<()>
where
    I: IntoIterator<Item = &'a Sentence>,
{
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in sentences {
        writeln!(w, "{s}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads three line-aligned files into triplets.
pub fn read_triplets(src: &Path, mt: &Path, pe: &Path) -> Result<Vec<Triplet>> {
    let src_lines = read_lines(src)?;
    let mt_lines = read_lines(mt)?;
    let pe_lines = read_lines(pe)?;
    for (path, lines) in [(mt, &mt_lines), (pe, &pe_lines)] {
        if lines.len() != src_lines.len() {
            return Err(Error::Alignment {
                path: path.to_path_buf(),
                expected: src_lines.len(),
                found: lines.len(),
            });
        }
    }
    let mut out = Vec::with_capacity(src_lines.len());
    for (i, ((s, m), p)) in src_lines.iter().zip(&mt_lines).zip(&pe_lines).enumerate() {
        let mut parts = Vec::with_capacity(3);
        for (path, line) in [(src, s), (mt, m), (pe, p)] {
            let sent = Sentence::parse(line);
            if sent.is_empty() {
                return Err(Error::parse(path.display().to_string(), i + 1, "empty line"));
            }
            parts.push(sent);
        }
        let pe = parts.pop().unwrap();
        let mt = parts.pop().unwrap();
        let src = parts.pop().unwrap();
        out.push(Triplet { src, mt, pe });
    }
    Ok(out)
}

pub fn read_triplet_corpus(prefix: impl AsRef<Path>) -> Result<Vec<Triplet>> {
    let [s, m, p] = triplet_paths(prefix);
    read_triplets(&s, &m, &p)
}

pub fn write_triplet_corpus(prefix: impl AsRef<Path>, triplets: &[Triplet]) -> Result<()> {
    let [s, m, p] = triplet_paths(prefix);
    write_sentences(s, triplets.iter().map(|t| &t.src))?;
    write_sentences(m, triplets.iter().map(|t| &t.mt))?;
    write_sentences(p, triplets.iter().map(|t| &t.pe))
}

const SENTENCE_END: [char; 3] = ['.', '!', '?'];
const MIN_LETTERS: usize = 30;

pub fn is_wellformed(s: &Sentence) -> bool {
    let first = s.tokens().first().and_then(|t| t.chars().next());
    let last = s.tokens().last().and_then(|t| t.chars().last());
    match (first, last) {
        (Some(f), Some(l)) => {
            f.is_uppercase() && SENTENCE_END.contains(&l) && s.letter_count() >= MIN_LETTERS
        }
        _ => false,
    }
}

/// Keeps lines that start with an uppercase letter, end in `.`, `!` or `?`
/// and hold at least 30 letters.
pub fn wellformed_filter(corpus: &[Sentence]) -> Vec<Sentence> {
    corpus.iter().filter(|s| is_wellformed(s)).cloned().collect()
}

/// A concatenation recipe: each named corpus repeated `factor` times.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetMix {
    parts: Vec<(String, usize)>,
}

impl DatasetMix {
    pub fn new(parts: Vec<(String, usize)>) -> Result<Self> {
        if let Some((id, _)) = parts.iter().find(|(_, f)| *f == 0) {
            return Err(Error::Config(format!("oversample factor for `{id}` must be >= 1")));
        }
        Ok(DatasetMix { parts })
    }

    /// Parses `<corpus-id> <factor>` lines; blank lines and `#` comments are
    /// ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut parts = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [id, factor] = fields[..] else {
                return Err(Error::parse("mix file", i + 1, "expected `<corpus> <factor>`"));
            };
            let factor = factor
                .parse::<usize>()
                .map_err(|e| Error::parse("mix file", i + 1, e.to_string()))?;
            parts.push((id.to_owned(), factor));
        }
        Self::new(parts)
    }

    pub fn parts(&self) -> &[(String, usize)] {
        &self.parts
    }
}

/// Concatenates the referenced corpora, each repeated by its factor, in
/// declaration order.
pub fn mix(recipe: &DatasetMix, corpora: &HashMap<String, Vec<Triplet>>) -> Result<Vec<Triplet>> {
    let mut total = 0;
    for (id, factor) in recipe.parts() {
        let c = corpora.get(id).ok_or_else(|| Error::UnknownCorpus(id.clone()))?;
        total += factor * c.len();
    }
    let mut out = Vec::with_capacity(total);
    for (id, factor) in recipe.parts() {
        let c = &corpora[id];
        for _ in 0..*factor {
            out.extend_from_slice(c);
        }
    }
    Ok(out)
}

// `&` must stay first so already produced entities are not escaped twice.
const ESCAPES: [(char, &str); 8] = [
    ('&', "&amp;"),
    ('|', "&#124;"),
    ('<', "&lt;"),
    ('>', "&gt;"),
    ('\'', "&apos;"),
    ('"', "&quot;"),
    ('[', "&#91;"),
    (']', "&#93;"),
];

pub fn escape_token(token: &str) -> String {
    let mut out = String::with_capacity(token.len());
    for c in token.chars() {
        match ESCAPES.iter().find(|(from, _)| *from == c) {
            Some((_, to)) => out.push_str(to),
            None => out.push(c),
        }
    }
    out
}

pub fn unescape_token(token: &str) -> String {
    let mut out = String::with_capacity(token.len());
    let mut rest = token;
    while let Some(pos) = rest.find('&') {
        out.push_str(&rest[..pos]);
        rest = &rest[pos..];
        match ESCAPES.iter().find(|(_, ent)| rest.starts_with(ent)) {
            Some((c, ent)) => {
                out.push(*c);
                rest = &rest[ent.len()..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

pub fn escape(s: &Sentence) -> Sentence {
    Sentence(s.iter().map(|t| escape_token(t)).collect())
}

pub fn unescape(s: &Sentence) -> Sentence {
    Sentence(s.iter().map(|t| unescape_token(t)).collect())
}
