use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use apeforge::corpus::{
    mix, read_sentences, read_triplet_corpus, wellformed_filter, write_sentences, write_triplet_corpus, DatasetMix,
    Sentence,
};
use apeforge::decoder::{pair_inputs, write_nbest, DecoderConfig};
use apeforge::metrics::{bleu, corpus_ter, sentence_bleu, sentence_ters};
use apeforge::ngram_lm::{select_by_xent_with, token_prefix, train_lm_order, NgramLm, SelectionCriterion};
use apeforge::nmt::{encode_pairs, gradient_check, init_model, train_to_dir, Seq2SeqModel, TrainConfig};
use apeforge::pipeline::{self, parse_keep, synth_corrupt, ConfusionTable, Corruptor, NoiseSpec, ToyGrammar};
use apeforge::report::evaluate_system_files;
use apeforge::subword::{learn_bpe, revert_bpe, revert_bpe_lenient, BpeModel};
use apeforge::triplet_select::{report_stats, select_triplets, SelectionConfig};
use apeforge::tuner::{tune, FeatureWeights, TuneConfig};

#[derive(Parser)]
#[command(name = "apeforge", version, about = "Automatic post-editing toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus cleaning and mixing.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Byte-pair encoding.
    #[command(subcommand)]
    Bpe(BpeCmd),
    /// Score hypotheses against references.
    Eval(EvalArgs),
    /// N-gram language models.
    #[command(subcommand)]
    Lm(LmCmd),
    /// Data selection.
    #[command(subcommand)]
    Select(SelectCmd),
    /// Attentional encoder-decoder models.
    #[command(subcommand)]
    Nmt(NmtCmd),
    /// Log-linear beam search over one or more models.
    Decode(DecodeArgs),
    /// Tune decoder feature weights on a dev triplet corpus.
    Tune(TuneArgs),
    /// Synthetic toy data.
    #[command(subcommand)]
    Synth(SynthCmd),
    /// Run a pipeline configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare systems against the uncorrected MT.
    Report(ReportArgs),
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Keep capitalized lines ending in `.`, `!` or `?` with at least 30 letters.
    FilterWellformed {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Concatenate triplet corpora by `<corpus-prefix> <factor>` lines.
    Mix {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum BpeCmd {
    /// Learn merge operations from a tokenized corpus.
    Learn {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        merges: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment text with a learned model.
    Apply {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Join `@@`-marked units back into words.
    Revert {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Close a dangling continuation marker instead of failing.
        #[arg(long)]
        lenient: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Ter,
    Bleu,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_enum)]
    metric: Metric,
    #[arg(long)]
    hyp: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    /// One line per sentence instead of the corpus score.
    #[arg(long)]
    per_sentence: bool,
}

#[derive(Subcommand)]
enum LmCmd {
    /// Train an interpolated Kneser-Ney model and write it as ARPA.
    Train {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        order: usize,
        /// Train on the leading lines holding at most this many tokens.
        #[arg(long)]
        max_tokens: Option<usize>,
    },
    /// Per-line cross-entropy in bits per token.
    Xent {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Criterion {
    Difference,
    InDomain,
}

#[derive(Subcommand)]
enum SelectCmd {
    /// Cross-entropy difference selection.
    Xent {
        #[arg(long)]
        in_domain: PathBuf,
        #[arg(long)]
        out_domain: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Line count, fraction (`0.5`) or percentage (`50%`).
        #[arg(long)]
        keep: String,
        #[arg(long, value_enum, default_value_t = Criterion::Difference)]
        criterion: Criterion,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// TER-statistics neighbour selection of triplets.
    Ter {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long)]
        no_normalize: bool,
        #[arg(long, default_value_t = 0.10)]
        margin: f64,
        #[arg(long, default_value_t = 100)]
        cap: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum NmtCmd {
    /// Train a model and write checkpoints into a directory.
    Train {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        tgt: PathBuf,
        /// TOML hyperparameters.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, requires = "dev_tgt")]
        dev_src: Option<PathBuf>,
        #[arg(long, requires = "dev_src")]
        dev_tgt: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients on a random toy model.
    GradCheck {
        #[arg(long, default_value_t = 8)]
        emb: usize,
        #[arg(long, default_value_t = 8)]
        hidden: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
    },
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    mt: PathBuf,
    #[arg(long)]
    src: Option<PathBuf>,
    /// Entries per sentence written to `--out`; 0 writes 1-best text instead.
    #[arg(long, default_value_t = 0)]
    nbest: usize,
    #[arg(long)]
    out: PathBuf,
    /// Tuned weights overriding the config.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    beam: Option<usize>,
}

#[derive(Args)]
struct TuneArgs {
    #[arg(long)]
    dev: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 2)]
    iterations: usize,
    #[arg(long, default_value_t = 15)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    c: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Score TER on BPE units rather than joined words.
    #[arg(long)]
    units: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum SynthCmd {
    /// Sentences from the built-in toy grammar.
    Generate {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Corrupt post-edits into `.src/.mt/.pe` triplets.
    Corrupt {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Total edit rate, split over substitution, deletion, insertion and swap.
        #[arg(long, default_value_t = 0.15)]
        noise: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        buckets: Option<u64>,
        #[arg(long)]
        confusions: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    mt: PathBuf,
    /// `name=FILE`, repeatable.
    #[arg(long = "system", value_parser = parse_system)]
    systems: Vec<(String, PathBuf)>,
    #[arg(long)]
    tsv: Option<PathBuf>,
}

fn parse_system(v: &str) -> Result<(String, PathBuf), String> {
    match v.split_once('=') {
        Some((n, f)) if !n.is_empty() && !f.is_empty() => Ok((n.to_owned(), PathBuf::from(f))),
        _ => Err(format!("expected name=FILE, found `{v}`")),
    }
}

fn read(path: &Path) -> Result<Vec<Sentence>> {
    read_sentences(path).with_context(|| format!("reading {}", path.display()))
}

fn corpus(cmd: CorpusCmd) -> Result<()> {
    match cmd {
        CorpusCmd::FilterWellformed { input, out } => {
            let all = read(&input)?;
            let kept = wellformed_filter(&all);
            log::info!("kept {} of {} lines", kept.len(), all.len());
            write_sentences(&out, &kept)?;
        }
        CorpusCmd::Mix { spec, out } => {
            let text = fs::read_to_string(&spec).with_context(|| format!("reading {}", spec.display()))?;
            let recipe = DatasetMix::parse(&text)?;
            let mut corpora = HashMap::new();
            for (id, _) in recipe.parts() {
                if !corpora.contains_key(id) {
                    corpora.insert(id.clone(), read_triplet_corpus(id)?);
                }
            }
            let mixed = mix(&recipe, &corpora)?;
            log::info!("mixed {} triplets", mixed.len());
            write_triplet_corpus(&out, &mixed)?;
        }
    }
    Ok(())
}

fn bpe(cmd: BpeCmd) -> Result<()> {
    match cmd {
        BpeCmd::Learn { input, merges, out } => {
            let model = learn_bpe(&read(&input)?, merges);
            if model.merges().len() < merges {
                log::warn!("stopped after {} merges: no pair occurs twice", model.merges().len());
            }
            model.save(&out)?;
        }
        BpeCmd::Apply { model, input, out } => {
            let model = BpeModel::load(&model)?;
            let mut unknown = 0;
            let units: Vec<Sentence> = read(&input)?
                .iter()
                .map(|s| {
                    let seg = model.apply(s);
                    unknown += seg.unknown_chars;
                    seg.units
                })
                .collect();
            if unknown > 0 {
                log::warn!("{unknown} characters outside the model's base symbols");
            }
            write_sentences(&out, &units)?;
        }
        BpeCmd::Revert { input, out, lenient } => {
            let lines = read(&input)?;
            let words = if lenient {
                lines.iter().map(revert_bpe_lenient).collect()
            } else {
                lines.iter().map(revert_bpe).collect::<apeforge::Result<Vec<_>>>()?
            };
            write_sentences(&out, &words)?;
        }
    }
    Ok(())
}

fn eval(a: EvalArgs, out: &mut impl Write) -> Result<()> {
    let (hyp, r) = (read(&a.hyp)?, read(&a.reference)?);
    match (a.metric, a.per_sentence) {
        (Metric::Ter, false) => writeln!(out, "TER\t{:.2}", corpus_ter(&hyp, &r)?.score())?,
        (Metric::Bleu, false) => writeln!(out, "BLEU\t{:.2}", bleu(&hyp, &r)?)?,
        (Metric::Ter, true) => {
            for (i, t) in sentence_ters(&hyp, &r)?.iter().enumerate() {
                writeln!(
                    out,
                    "{i}\t{:.2}\t{},{},{},{}",
                    t.ter, t.insertions, t.deletions, t.substitutions, t.shifts
                )?;
            }
        }
        (Metric::Bleu, true) => {
            if hyp.len() != r.len() {
                bail!("{} hypotheses but {} references", hyp.len(), r.len());
            }
            for (i, (h, x)) in hyp.iter().zip(&r).enumerate() {
                writeln!(out, "{i}\t{:.2}", sentence_bleu(h, x))?;
            }
        }
    }
    Ok(())
}

fn lm(cmd: LmCmd, out: &mut impl Write) -> Result<()> {
    match cmd {
        LmCmd::Train {
            input,
            out: path,
            order,
            max_tokens,
        } => {
            let all = read(&input)?;
            let data = match max_tokens {
                Some(n) => token_prefix(&all, n),
                None => &all[..],
            };
            log::info!("training on {} of {} lines", data.len(), all.len());
            train_lm_order(data, order)?.save(&path)?;
        }
        LmCmd::Xent { model, input } => {
            let lm = NgramLm::load(&model)?;
            for s in read(&input)? {
                writeln!(out, "{:.6}", lm.cross_entropy(&s))?;
            }
        }
    }
    Ok(())
}

fn select(cmd: SelectCmd, stdout: &mut impl Write) -> Result<()> {
    match cmd {
        SelectCmd::Xent {
            in_domain,
            out_domain,
            corpus,
            keep,
            criterion,
            out,
        } => {
            let in_lm = NgramLm::load(&in_domain)?;
            let out_lm = NgramLm::load(&out_domain)?;
            let lines = read(&corpus)?;
            let criterion = match criterion {
                Criterion::Difference => SelectionCriterion::Difference,
                Criterion::InDomain => SelectionCriterion::InDomainOnly,
            };
            let mut idx = select_by_xent_with(&in_lm, &out_lm, &lines, parse_keep(&keep)?, criterion);
            idx.sort_unstable();
            let kept: Vec<&Sentence> = idx.iter().map(|&i| &lines[i]).collect();
            match out {
                Some(p) => write_sentences(&p, kept)?,
                None => {
                    for s in kept {
                        writeln!(stdout, "{s}")?;
                    }
                }
            }
        }
        SelectCmd::Ter {
            pool,
            reference,
            n,
            no_normalize,
            margin,
            cap,
            out,
            report,
        } => {
            let pool = read_triplet_corpus(&pool)?;
            let reference = read_triplet_corpus(&reference)?;
            let cfg = SelectionConfig {
                n,
                normalize: !no_normalize,
                outlier_margin: margin,
                traversal_cap: cap,
                ..Default::default()
            };
            let chosen: Vec<_> = select_triplets(&pool, &reference, &cfg)
                .into_iter()
                .map(|i| pool[i].clone())
                .collect();
            log::info!("selected {} of {} triplets", chosen.len(), pool.len());
            write_triplet_corpus(&out, &chosen)?;
            if let Some(r) = report {
                let text = format!(
                    "# reference\n{}\n# selected\n{}",
                    report_stats(&reference),
                    report_stats(&chosen)
                );
                fs::write(&r, text).with_context(|| format!("writing {}", r.display()))?;
            }
        }
    }
    Ok(())
}

fn nmt(cmd: NmtCmd, out: &mut impl Write) -> Result<()> {
    match cmd {
        NmtCmd::Train {
            src,
            tgt,
            config,
            out: dir,
            dev_src,
            dev_tgt,
        } => {
            let cfg = match config {
                Some(p) => TrainConfig::load(&p)?,
                None => TrainConfig::default(),
            };
            let (s, t) = (read(&src)?, read(&tgt)?);
            let mut model = match &cfg.fine_tune_from {
                Some(p) => Seq2SeqModel::load(p)?,
                None => init_model(&s, &t, &cfg),
            };
            let pairs = encode_pairs(&model, &s, &t)?;
            let dev = match (dev_src, dev_tgt) {
                (Some(a), Some(b)) => Some(encode_pairs(&model, &read(&a)?, &read(&b)?)?),
                _ => None,
            };
            let summary = train_to_dir(&mut model, &pairs, &cfg, dev.as_deref(), &dir)?;
            writeln!(
                out,
                "trained {} iterations ({} pairs skipped as too long)",
                summary.iterations, summary.skipped
            )?;
        }
        NmtCmd::GradCheck {
            emb,
            hidden,
            seed,
            eps,
            tolerance,
        } => {
            let src = [Sentence::parse("a b c d"), Sentence::parse("b d a")];
            let tgt = [Sentence::parse("x y z"), Sentence::parse("z x")];
            let cfg = TrainConfig {
                embedding_dim: emb,
                hidden_dim: hidden,
                init_seed: seed,
                ..Default::default()
            };
            let model = init_model(&src, &tgt, &cfg);
            let pairs = encode_pairs(&model, &src, &tgt)?;
            let report = gradient_check(&model, &pairs[0].0, &pairs[0].1, eps, tolerance)?;
            for t in &report.tensors {
                writeln!(out, "{}\t{:.3e}", t.name, t.max_rel_error)?;
            }
            writeln!(out, "max\t{:.3e}", report.max_rel_error())?;
        }
    }
    Ok(())
}

fn decode(a: DecodeArgs) -> Result<()> {
    let cfg = DecoderConfig::load(&a.config)?;
    let mut decoder = cfg.assemble()?;
    if let Some(w) = &a.weights {
        let w = FeatureWeights::load(w)?.aligned_to(&decoder.feature_names())?;
        decoder.set_weights(&w)?;
    }
    let mut opts = cfg.options;
    opts.beam = a.beam.unwrap_or(opts.beam).max(a.nbest);
    let mt = read(&a.mt)?;
    let src = a.src.as_deref().map(read).transpose()?;
    let mut lists = decoder.decode_all(&pair_inputs(mt, src)?, &opts)?;
    let truncated = lists.iter().filter(|l| l.truncated).count();
    if truncated > 0 {
        log::warn!("{truncated} sentences hit the length cap without finishing");
    }
    if a.nbest == 0 {
        let best: Vec<Sentence> = lists
            .iter()
            .map(|l| l.best().map(|e| e.tokens.clone()).unwrap_or_default())
            .collect();
        write_sentences(&a.out, &best)?;
    } else {
        for l in &mut lists {
            l.entries.truncate(a.nbest);
        }
        write_nbest(&lists, &a.out)?;
    }
    Ok(())
}

fn tune_cmd(a: TuneArgs, out: &mut impl Write) -> Result<()> {
    let cfg = DecoderConfig::load(&a.config)?;
    let decoder = cfg.assemble()?;
    let dev = read_triplet_corpus(&a.dev)?;
    let tcfg = TuneConfig {
        outer_iterations: a.iterations,
        inner_epochs: a.epochs,
        mira_c: a.c,
        seed: a.seed,
        score_on_words: !a.units,
        ..Default::default()
    };
    let outcome = tune(&dev, &decoder, &cfg.options, &tcfg)?;
    for (i, t) in outcome.history.iter().enumerate() {
        writeln!(out, "iteration {}\tdev TER {:.2}", i + 1, t)?;
    }
    outcome.weights.save(&a.out)?;
    Ok(())
}

fn synth(cmd: SynthCmd) -> Result<()> {
    match cmd {
        SynthCmd::Generate { count, seed, out } => write_sentences(&out, &ToyGrammar.sentences(count, seed))?,
        SynthCmd::Corrupt {
            input,
            out,
            noise,
            seed,
            buckets,
            confusions,
        } => {
            let mut c = Corruptor::toy(NoiseSpec::total(noise));
            if let Some(p) = confusions {
                c.confusions = ConfusionTable::load(&p)?;
            }
            c.cipher_buckets = buckets;
            write_triplet_corpus(&out, &synth_corrupt(&read(&input)?, &c, seed)?)?;
        }
    }
    Ok(())
}

fn report(a: ReportArgs, out: &mut impl Write) -> Result<()> {
    let r = evaluate_system_files(&a.systems, &a.mt, &a.reference)?;
    write!(out, "{}", r.to_text())?;
    if let Some(t) = a.tsv {
        fs::write(&t, r.to_tsv()).with_context(|| format!("writing {}", t.display()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Corpus(c) => corpus(c),
        Command::Bpe(c) => bpe(c),
        Command::Eval(a) => eval(a, &mut out),
        Command::Lm(c) => lm(c, &mut out),
        Command::Select(c) => select(c, &mut out),
        Command::Nmt(c) => nmt(c, &mut out),
        Command::Decode(a) => decode(a),
        Command::Tune(a) => tune_cmd(a, &mut out),
        Command::Synth(c) => synth(c),
        Command::Run { config } => {
            let cfg = pipeline::PipelineConfig::load(&config)?.with_env_workspace();
            let summary = pipeline::run(&cfg)?;
            writeln!(
                out,
                "{} stages run, {} up to date",
                summary.executed.len(),
                summary.skipped.len()
            )?;
            Ok(())
        }
        Command::Report(a) => report(a, &mut out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
