//! Stage kinds: declared inputs/outputs and execution.

use std::path::{Component, Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use super::roundtrip::roundtrip_generate;
use super::synth::{synth_corrupt, ConfusionTable, Corruptor, NoiseSpec, ToyGrammar};
use super::StageDecl;
use crate::corpus::{
    read_sentences, read_triplet_corpus, triplet_paths, wellformed_filter, write_sentences, write_triplet_corpus,
    Sentence,
};
use crate::decoder::{pair_inputs, write_nbest, DecoderConfig};
use crate::error::{Error, Result};
use crate::metrics::{bleu, corpus_ter};
use crate::ngram_lm::{select_by_xent_with, train_lm_order, Keep, NgramLm, SelectionCriterion};
use crate::nmt::{encode_pairs, init_model, train_to_dir, Seq2SeqModel, TrainConfig};
use crate::report::evaluate_system_files;
use crate::subword::{learn_bpe, revert_bpe_lenient, BpeModel};
use crate::triplet_select::{report_stats, select_triplets, SelectionConfig};
use crate::tuner::{tune, FeatureWeights, TuneConfig};

pub const STAGE_KINDS: &[&str] = &[
    "generate",
    "corrupt",
    "split",
    "filter",
    "bpe-learn",
    "bpe-apply",
    "bpe-revert",
    "lm-train",
    "select-xent",
    "select-ter",
    "train",
    "decode",
    "tune",
    "roundtrip",
    "eval",
    "report",
];

const TRAIN_KEYS: &[&str] = &["src", "tgt", "out", "dev-src", "dev-tgt", "fine-tune-from"];

fn allowed_keys(kind: &str) -> Option<&'static [&'static str]> {
    Some(match kind {
        "generate" => &["out", "count", "seed"],
        "corrupt" => &["in", "out", "noise", "sub", "del", "ins", "swap", "seed", "buckets", "confusions"],
        "split" => &["in", "parts"],
        "filter" | "bpe-revert" => &["in", "out"],
        "bpe-learn" => &["in", "out", "merges"],
        "bpe-apply" => &["in", "out", "model"],
        "lm-train" => &["in", "out", "order"],
        "select-xent" => &["in-domain", "out-domain", "corpus", "keep", "criterion", "out"],
        "select-ter" => &["pool", "reference", "n", "normalize", "margin", "cap", "out", "report"],
        "decode" => &["config", "mt", "src", "weights", "out", "nbest", "beam"],
        "tune" => &["config", "dev", "out", "iterations", "seed", "c", "epochs", "words"],
        "roundtrip" => &["mono", "reverse", "forward", "out", "beam"],
        "eval" => &["metric", "hyp", "ref", "out", "words"],
        "report" => &["ref", "mt", "systems", "out", "tsv"],
        // Remaining train keys are hyperparameters checked by TrainConfig.
        "train" => return None,
        _ => return Some(&[]),
    })
}

fn req<'a>(s: &'a StageDecl, key: &str) -> Result<&'a str> {
    s.params
        .get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::Config(format!("missing `{key}=`")))
}

fn opt<'a>(s: &'a StageDecl, key: &str) -> Option<&'a str> {
    s.params.get(key).map(String::as_str)
}

fn num<T: FromStr>(s: &StageDecl, key: &str, default: T) -> Result<T> {
    match opt(s, key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`"))),
    }
}

fn flag(s: &StageDecl, key: &str, default: bool) -> Result<bool> {
    match opt(s, key) {
        None => Ok(default),
        Some("true" | "on" | "yes") => Ok(true),
        Some("false" | "off" | "no") => Ok(false),
        Some(v) => Err(Error::Config(format!("`{key}` expects true|false, found `{v}`"))),
    }
}

/// Lexically normalized path relative to the workspace when inside it.
/// Lexically resolves `.` and `..`; leading `..` components are kept.
pub(crate) fn normalize(p: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in p.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                if !matches!(out.components().next_back(), None | Some(Component::ParentDir)) {
                    out.pop();
                } else if !out.has_root() {
                    out.push("..");
                }
            }
            c => out.push(c),
        }
    }
    out
}

fn rel(ws: &Path, p: &Path) -> String {
    let (ws, out) = (normalize(ws), normalize(p));
    let out = out.strip_prefix(&ws).map(Path::to_path_buf).unwrap_or(out);
    out.to_string_lossy().replace('\\', "/")
}

fn path_of(s: &StageDecl, key: &str, ws: &Path) -> Result<String> {
    Ok(rel(ws, &ws.join(req(s, key)?)))
}

fn prefix_files(prefix: &str) -> Vec<String> {
    triplet_paths(prefix)
        .iter()
        .map(|p| p.to_string_lossy().into_owned())
        .collect()
}

fn parse_parts(spec: &str) -> Result<Vec<(String, Option<usize>)>> {
    spec.split(',')
        .map(|part| {
            let (name, count) = part
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("split part `{part}` is not name:count")))?;
            let count = if count == "*" {
                None
            } else {
                Some(
                    count
                        .parse()
                        .map_err(|_| Error::Config(format!("invalid count in `{part}`")))?,
                )
            };
            Ok((name.to_owned(), count))
        })
        .collect()
}

fn parse_systems(spec: &str) -> Result<Vec<(String, String)>> {
    spec.split(',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.split_once(':')
                .map(|(n, p)| (n.to_owned(), p.to_owned()))
                .ok_or_else(|| Error::Config(format!("system `{s}` is not name:path")))
        })
        .collect()
}

/// Model files referenced by a decoder config, when it already exists.
fn decoder_models(config: &str, ws: &Path) -> Vec<String> {
    match DecoderConfig::load(&ws.join(config)) {
        Ok(c) => c.scorers.iter().map(|sc| rel(ws, &sc.model)).collect(),
        Err(_) => Vec::new(),
    }
}

/// Workspace-relative inputs and outputs of a stage.
pub(super) fn io(s: &StageDecl, ws: &Path) -> Result<(Vec<String>, Vec<String>)> {
    if let Some(keys) = allowed_keys(&s.kind) {
        if let Some(k) = s.params.keys().find(|k| !keys.contains(&k.as_str())) {
            return Err(Error::Config(format!("stage kind `{}` has no parameter `{k}`", s.kind)));
        }
    }
    let p = |k: &str| path_of(s, k, ws);
    let optp = |k: &str| opt(s, k).map(|_| p(k)).transpose();
    let (mut ins, mut outs) = (Vec::new(), Vec::new());
    match s.kind.as_str() {
        "generate" => outs.push(p("out")?),
        "corrupt" => {
            ins.push(p("in")?);
            ins.extend(optp("confusions")?);
            outs.extend(prefix_files(&p("out")?));
        }
        "split" => {
            ins.extend(prefix_files(&p("in")?));
            for (name, _) in parse_parts(req(s, "parts")?)? {
                outs.extend(prefix_files(&rel(ws, &ws.join(name))));
            }
        }
        "filter" | "bpe-revert" | "lm-train" | "bpe-learn" => {
            ins.push(p("in")?);
            outs.push(p("out")?);
        }
        "bpe-apply" => {
            ins.extend([p("model")?, p("in")?]);
            outs.push(p("out")?);
        }
        "select-xent" => {
            ins.extend([p("in-domain")?, p("out-domain")?, p("corpus")?]);
            outs.push(p("out")?);
        }
        "select-ter" => {
            ins.extend(prefix_files(&p("pool")?));
            ins.extend(prefix_files(&p("reference")?));
            outs.extend(prefix_files(&p("out")?));
            outs.extend(optp("report")?);
        }
        "train" => {
            for k in TRAIN_KEYS.iter().filter(|&&k| k != "out") {
                ins.extend(optp(k)?);
            }
            req(s, "src")?;
            req(s, "tgt")?;
            let dir = p("out")?;
            outs.extend([format!("{dir}/model.bin"), format!("{dir}/train.log")]);
        }
        "decode" => {
            ins.push(p("config")?);
            ins.extend(decoder_models(req(s, "config")?, ws));
            ins.push(p("mt")?);
            ins.extend(optp("src")?);
            ins.extend(optp("weights")?);
            outs.push(p("out")?);
            outs.extend(optp("nbest")?);
        }
        "tune" => {
            ins.push(p("config")?);
            ins.extend(decoder_models(req(s, "config")?, ws));
            ins.extend(prefix_files(&p("dev")?));
            outs.push(p("out")?);
        }
        "roundtrip" => {
            ins.extend([p("mono")?, p("reverse")?, p("forward")?]);
            outs.extend(prefix_files(&p("out")?));
        }
        "eval" => {
            ins.extend([p("hyp")?, p("ref")?]);
            outs.push(p("out")?);
        }
        "report" => {
            ins.extend([p("ref")?, p("mt")?]);
            for (_, f) in parse_systems(req(s, "systems")?)? {
                ins.push(rel(ws, &ws.join(f)));
            }
            outs.push(p("out")?);
            outs.extend(optp("tsv")?);
        }
        k => return Err(Error::Config(format!("unknown stage kind `{k}`"))),
    }
    Ok((ins, outs))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => std::fs::create_dir_all(d).map_err(|e| Error::io(d, e)),
        _ => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_lines(path: &Path, lines: &[Sentence]) -> Result<()> {
    ensure_parent(path)?;
    write_sentences(path, lines)
}

fn noise_of(s: &StageDecl) -> Result<NoiseSpec> {
    let mut n = match opt(s, "noise") {
        Some(_) => NoiseSpec::total(num(s, "noise", 0.0)?),
        None => NoiseSpec::default(),
    };
    n.substitution = num(s, "sub", n.substitution)?;
    n.deletion = num(s, "del", n.deletion)?;
    n.insertion = num(s, "ins", n.insertion)?;
    n.swap = num(s, "swap", n.swap)?;
    Ok(n)
}

/// Builds a TrainConfig from the stage's hyperparameter keys.
fn train_config(s: &StageDecl) -> Result<TrainConfig> {
    let mut toml = String::new();
    for (k, v) in s.params.iter().filter(|(k, _)| !TRAIN_KEYS.contains(&k.as_str())) {
        let key = k.replace('-', "_");
        if v.parse::<f64>().is_ok() || v == "true" || v == "false" {
            toml.push_str(&format!("{key} = {v}\n"));
        } else {
            toml.push_str(&format!("{key} = {v:?}\n"));
        }
    }
    TrainConfig::parse(&toml)
}

pub(super) fn execute(s: &StageDecl, ws: &Path) -> Result<()> {
    let p = |k: &str| -> Result<PathBuf> { Ok(ws.join(req(s, k)?)) };
    let optp = |k: &str| opt(s, k).map(|v| ws.join(v));
    match s.kind.as_str() {
        "generate" => {
            let n = num(s, "count", 1000usize)?;
            write_lines(&p("out")?, &ToyGrammar.sentences(n, num(s, "seed", 1)?))?;
        }
        "corrupt" => {
            let mut c = Corruptor::toy(noise_of(s)?);
            if let Some(path) = optp("confusions") {
                c.confusions = ConfusionTable::load(&path)?;
            }
            c.cipher_buckets = opt(s, "buckets").map(|_| num(s, "buckets", 0u64)).transpose()?;
            let pe = read_sentences(p("in")?)?;
            let ts = synth_corrupt(&pe, &c, num(s, "seed", 1)?)?;
            let out = p("out")?;
            ensure_parent(&out)?;
            write_triplet_corpus(&out, &ts)?;
        }
        "split" => {
            let all = read_triplet_corpus(p("in")?)?;
            let mut rest = all.as_slice();
            for (name, count) in parse_parts(req(s, "parts")?)? {
                let n = count.unwrap_or(rest.len());
                if n > rest.len() {
                    return Err(Error::Input(format!("not enough triplets for part `{name}`")));
                }
                let (head, tail) = rest.split_at(n);
                let out = ws.join(&name);
                ensure_parent(&out)?;
                write_triplet_corpus(&out, head)?;
                rest = tail;
            }
        }
        "filter" => write_lines(&p("out")?, &wellformed_filter(&read_sentences(p("in")?)?))?,
        "bpe-learn" => {
            let corpus = read_sentences(p("in")?)?;
            let out = p("out")?;
            ensure_parent(&out)?;
            learn_bpe(&corpus, num(s, "merges", 1000usize)?).save(&out)?;
        }
        "bpe-apply" => {
            let model = BpeModel::load(p("model")?)?;
            let out: Vec<Sentence> = read_sentences(p("in")?)?.iter().map(|x| model.apply(x).units).collect();
            write_lines(&p("out")?, &out)?;
        }
        "bpe-revert" => {
            let out: Vec<Sentence> = read_sentences(p("in")?)?.iter().map(revert_bpe_lenient).collect();
            write_lines(&p("out")?, &out)?;
        }
        "lm-train" => {
            let lm = train_lm_order(&read_sentences(p("in")?)?, num(s, "order", 3usize)?)?;
            let out = p("out")?;
            ensure_parent(&out)?;
            lm.save(&out)?;
        }
        "select-xent" => {
            let in_lm = NgramLm::load(p("in-domain")?)?;
            let out_lm = NgramLm::load(p("out-domain")?)?;
            let corpus = read_sentences(p("corpus")?)?;
            let keep = parse_keep(req(s, "keep")?)?;
            let criterion = match opt(s, "criterion").unwrap_or("difference") {
                "difference" => SelectionCriterion::Difference,
                "in-domain" => SelectionCriterion::InDomainOnly,
                c => return Err(Error::Config(format!("unknown criterion `{c}`"))),
            };
            let mut idx = select_by_xent_with(&in_lm, &out_lm, &corpus, keep, criterion);
            idx.sort_unstable();
            let kept: Vec<Sentence> = idx.into_iter().map(|i| corpus[i].clone()).collect();
            write_lines(&p("out")?, &kept)?;
        }
        "select-ter" => {
            let pool = read_triplet_corpus(p("pool")?)?;
            let reference = read_triplet_corpus(p("reference")?)?;
            let defaults = SelectionConfig::default();
            let cfg = SelectionConfig {
                n: num(s, "n", 1usize)?,
                normalize: flag(s, "normalize", true)?,
                outlier_margin: num(s, "margin", defaults.outlier_margin)?,
                traversal_cap: num(s, "cap", defaults.traversal_cap)?,
                ..defaults
            };
            let chosen: Vec<_> = select_triplets(&pool, &reference, &cfg)
                .into_iter()
                .map(|i| pool[i].clone())
                .collect();
            let out = p("out")?;
            ensure_parent(&out)?;
            write_triplet_corpus(&out, &chosen)?;
            if let Some(r) = optp("report") {
                write_text(&r, &report_stats(&chosen).to_string())?;
            }
        }
        "train" => {
            let cfg = train_config(s)?;
            let src = read_sentences(p("src")?)?;
            let tgt = read_sentences(p("tgt")?)?;
            let mut model = match optp("fine-tune-from") {
                Some(path) => Seq2SeqModel::load(&path)?,
                None => init_model(&src, &tgt, &cfg),
            };
            let pairs = encode_pairs(&model, &src, &tgt)?;
            let dev = match (optp("dev-src"), optp("dev-tgt")) {
                (Some(a), Some(b)) => Some(encode_pairs(&model, &read_sentences(a)?, &read_sentences(b)?)?),
                (None, None) => None,
                _ => return Err(Error::Config("dev-src and dev-tgt go together".into())),
            };
            train_to_dir(&mut model, &pairs, &cfg, dev.as_deref(), &p("out")?)?;
        }
        "decode" => {
            let cfg = DecoderConfig::load(&p("config")?)?;
            let mut decoder = cfg.assemble()?;
            if let Some(w) = optp("weights") {
                let w = FeatureWeights::load(&w)?.aligned_to(&decoder.feature_names())?;
                decoder.set_weights(&w)?;
            }
            let mut opts = cfg.options;
            opts.beam = num(s, "beam", opts.beam)?;
            let mt = read_sentences(p("mt")?)?;
            let src = optp("src").map(read_sentences).transpose()?;
            let inputs = pair_inputs(mt, src)?;
            let lists = decoder.decode_all(&inputs, &opts)?;
            let best: Vec<Sentence> = lists
                .iter()
                .map(|l| l.best().map(|e| e.tokens.clone()).unwrap_or_default())
                .collect();
            write_lines(&p("out")?, &best)?;
            if let Some(nb) = optp("nbest") {
                ensure_parent(&nb)?;
                write_nbest(&lists, &nb)?;
            }
        }
        "tune" => {
            let cfg = DecoderConfig::load(&p("config")?)?;
            let decoder = cfg.assemble()?;
            let dev = read_triplet_corpus(p("dev")?)?;
            let defaults = TuneConfig::default();
            let tcfg = TuneConfig {
                outer_iterations: num(s, "iterations", defaults.outer_iterations)?,
                seed: num(s, "seed", defaults.seed)?,
                mira_c: num(s, "c", defaults.mira_c)?,
                inner_epochs: num(s, "epochs", defaults.inner_epochs)?,
                score_on_words: flag(s, "words", defaults.score_on_words)?,
                ..defaults
            };
            let out = tune(&dev, &decoder, &cfg.options, &tcfg)?;
            write_text(&p("out")?, &out.weights.to_text())?;
        }
        "roundtrip" => {
            let mono = read_sentences(p("mono")?)?;
            let rev = Arc::new(Seq2SeqModel::load(&p("reverse")?)?);
            let fwd = Arc::new(Seq2SeqModel::load(&p("forward")?)?);
            let rt = roundtrip_generate(&mono, rev, fwd, num(s, "beam", 1usize)?)?;
            if rt.dropped > 0 {
                log::warn!("round trip dropped {} sentences", rt.dropped);
            }
            let out = p("out")?;
            ensure_parent(&out)?;
            write_triplet_corpus(&out, &rt.triplets)?;
        }
        "eval" => {
            let words = flag(s, "words", false)?;
            let load = |k: &str| -> Result<Vec<Sentence>> {
                let v = read_sentences(p(k)?)?;
                Ok(if words { v.iter().map(revert_bpe_lenient).collect() } else { v })
            };
            let (hyp, r) = (load("hyp")?, load("ref")?);
            let line = match req(s, "metric")? {
                "ter" => format!("TER\t{:.2}\n", corpus_ter(&hyp, &r)?.score()),
                "bleu" => format!("BLEU\t{:.2}\n", bleu(&hyp, &r)?),
                m => return Err(Error::Config(format!("unknown metric `{m}`"))),
            };
            write_text(&p("out")?, &line)?;
        }
        "report" => {
            let systems: Vec<(String, PathBuf)> = parse_systems(req(s, "systems")?)?
                .into_iter()
                .map(|(n, f)| (n, ws.join(f)))
                .collect();
            let r = evaluate_system_files(&systems, &p("mt")?, &p("ref")?)?;
            write_text(&p("out")?, &r.to_text())?;
            if let Some(t) = optp("tsv") {
                write_text(&t, &r.to_tsv())?;
            }
        }
        k => return Err(Error::Config(format!("unknown stage kind `{k}`"))),
    }
    Ok(())
}

/// `N` keeps a count, `0.5` or `50%` a fraction.
pub fn parse_keep(v: &str) -> Result<Keep> {
    let bad = || Error::Config(format!("invalid keep `{v}`"));
    if let Some(pct) = v.strip_suffix('%') {
        return Ok(Keep::Fraction(pct.parse::<f64>().map_err(|_| bad())? / 100.0));
    }
    if v.contains('.') {
        return Ok(Keep::Fraction(v.parse().map_err(|_| bad())?));
    }
    Ok(Keep::Count(v.parse().map_err(|_| bad())?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_keeps_leading_parents() {
        assert_eq!(normalize(Path::new("a/../b/./c")), PathBuf::from("b/c"));
        assert_eq!(normalize(Path::new("../x/../../y")), PathBuf::from("../../y"));
        assert_eq!(normalize(Path::new("/../a")), PathBuf::from("/a"));
    }

    #[test]
    fn rel_strips_an_unnormalized_workspace() {
        let ws = Path::new("configs/../work");
        assert_eq!(rel(ws, &ws.join("pe.txt")), "pe.txt");
        assert_eq!(rel(Path::new("../w"), Path::new("../w/sub/f")), "sub/f");
    }
}
