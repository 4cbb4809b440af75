use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::model::{Params, Seq2SeqModel};
use super::vocab::Vocab;
use crate::corpus::Sentence;
use crate::error::{Error, Result};

/// Training hyperparameters. Readable from a TOML file; absent keys take
/// their defaults.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    /// Vocabulary caps including the four reserved ids; `None` keeps all.
    pub src_vocab_size: Option<usize>,
    pub tgt_vocab_size: Option<usize>,
    pub batch_size: usize,
    pub max_sentence_length: usize,
    pub rho: f64,
    pub epsilon: f64,
    /// Global gradient-norm clipping threshold.
    pub clip_norm: Option<f64>,
    pub epochs: usize,
    /// Stops early after this many updates.
    pub max_iterations: Option<usize>,
    pub shuffle_seed: u64,
    pub init_seed: u64,
    pub checkpoint_every: usize,
    pub log_every: usize,
    pub fine_tune_from: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            embedding_dim: 500,
            hidden_dim: 1024,
            src_vocab_size: None,
            tgt_vocab_size: None,
            batch_size: 80,
            max_sentence_length: 50,
            rho: 0.95,
            epsilon: 1e-6,
            clip_norm: Some(1.0),
            epochs: 10,
            max_iterations: None,
            shuffle_seed: 1,
            init_seed: 1,
            checkpoint_every: 10_000,
            log_every: 100,
            fine_tune_from: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.max_sentence_length < 2 {
            return bad("max_sentence_length must be at least 2");
        }
        if self.embedding_dim == 0 || self.hidden_dim == 0 {
            return bad("dimensions must be positive");
        }
        if !(0.0..1.0).contains(&self.rho) || self.epsilon <= 0.0 {
            return bad("adadelta needs 0 <= rho < 1 and epsilon > 0");
        }
        if self.checkpoint_every == 0 || self.log_every == 0 {
            return bad("checkpoint_every and log_every must be positive");
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Per-parameter Adadelta accumulators.
#[derive(Debug, Clone)]
pub struct Adadelta {
    rho: f64,
    eps: f64,
    sq_grad: Params,
    sq_delta: Params,
}

impl Adadelta {
    pub fn new(like: &Params, rho: f64, eps: f64) -> Self {
        let mut zero = like.clone();
        zero.fill(0.0);
        Adadelta {
            rho,
            eps,
            sq_grad: zero.clone(),
            sq_delta: zero,
        }
    }

    pub fn update(&mut self, params: &mut Params, grad: &Params) {
        let (rho, eps) = (self.rho, self.eps);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grad.tensors())
            .zip(self.sq_grad.tensors_mut())
            .zip(self.sq_delta.tensors_mut());
        for ((((_, p), (_, g)), (_, eg)), (_, ed)) in tensors {
            for i in 0..p.len() {
                eg[i] = rho * eg[i] + (1.0 - rho) * g[i] * g[i];
                let delta = -((ed[i] + eps).sqrt() / (eg[i] + eps).sqrt()) * g[i];
                ed[i] = rho * ed[i] + (1.0 - rho) * delta * delta;
                p[i] += delta;
            }
        }
    }
}

/// A training pair of id sequences (no `</s>`).
pub type IdPair = (Vec<u32>, Vec<u32>);

/// Progress notifications emitted by [`train`].
#[derive(Debug)]
pub enum TrainEvent<'a> {
    /// Mean per-sentence loss over the last `log_every` batches.
    Log {
        iteration: usize,
        loss: f64,
        dev_loss: Option<f64>,
    },
    Checkpoint {
        iteration: usize,
        model: &'a Seq2SeqModel,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub iterations: usize,
    pub skipped: usize,
    /// Mean per-sentence loss of every batch, in order.
    pub losses: Vec<f64>,
}

/// Builds vocabularies from the corpora and a randomly initialised model.
pub fn init_model(src: &[Sentence], tgt: &[Sentence], cfg: &TrainConfig) -> Seq2SeqModel {
    let sv = Vocab::build(src, cfg.src_vocab_size);
    let tv = Vocab::build(tgt, cfg.tgt_vocab_size);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
    Seq2SeqModel::new(sv, tv, cfg.embedding_dim, cfg.hidden_dim, &mut rng)
}

/// Mean per-sentence loss over `pairs`.
pub fn mean_loss(model: &Seq2SeqModel, pairs: &[IdPair]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs.iter().map(|(s, t)| model.loss(s, t)).sum::<f64>() / pairs.len() as f64
}

/// Minibatch Adadelta on the mean sentence negative log-likelihood. The
/// corpus is reshuffled every epoch from `shuffle_seed`; pairs longer than
/// `max_sentence_length` on either side are skipped.
pub fn train(
    model: &mut Seq2SeqModel,
    corpus: &[IdPair],
    cfg: &TrainConfig,
    dev: Option<&[IdPair]>,
    mut on_event: impl FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<TrainSummary> {
    cfg.validate()?;
    let mut usable = Vec::with_capacity(corpus.len());
    for (i, (s, t)) in corpus.iter().enumerate() {
        model.check_ids(s, t)?;
        if s.len() <= cfg.max_sentence_length && t.len() <= cfg.max_sentence_length {
            usable.push(i);
        }
    }
    let skipped = corpus.len() - usable.len();
    if skipped > 0 {
        info!("skipping {skipped} pairs longer than {}", cfg.max_sentence_length);
    }
    if usable.is_empty() {
        return Err(Error::Input("training corpus is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut opt = Adadelta::new(&model.params, cfg.rho, cfg.epsilon);
    let mut grad = model.params.clone();
    let mut losses = Vec::new();
    let mut iteration = 0;
    let limit = cfg.max_iterations.unwrap_or(usize::MAX);
    'epochs: for _ in 0..cfg.epochs {
        usable.shuffle(&mut rng);
        for batch in usable.chunks(cfg.batch_size) {
            if iteration >= limit {
                break 'epochs;
            }
            grad.fill(0.0);
            let mut loss = 0.0;
            for &i in batch {
                let (s, t) = &corpus[i];
                loss += model.loss_and_grad(s, t, &mut grad);
            }
            let k = 1.0 / batch.len() as f64;
            loss *= k;
            grad.scale(k);
            iteration += 1;
            if !loss.is_finite() || !grad.all_finite() {
                return Err(Error::Divergence {
                    batch: iteration,
                    message: format!("loss {loss}"),
                });
            }
            if let Some(c) = cfg.clip_norm {
                let norm = grad.l2_norm();
                if norm > c {
                    grad.scale(c / norm);
                }
            }
            opt.update(&mut model.params, &grad);
            losses.push(loss);
            if iteration % cfg.log_every == 0 {
                let window = &losses[losses.len() - cfg.log_every..];
                on_event(TrainEvent::Log {
                    iteration,
                    loss: window.iter().sum::<f64>() / window.len() as f64,
                    dev_loss: dev.map(|d| mean_loss(model, d)),
                })?;
            }
            if iteration % cfg.checkpoint_every == 0 {
                on_event(TrainEvent::Checkpoint { iteration, model })?;
            }
        }
    }
    Ok(TrainSummary {
        iterations: iteration,
        skipped,
        losses,
    })
}

/// File name of the checkpoint saved after `iteration` updates.
pub fn checkpoint_name(iteration: usize) -> String {
    format!("model.iter{iteration:08}.bin")
}

/// Runs [`train`] writing checkpoints and `train.log` into `dir`, plus
/// `model.bin` with the final state.
pub fn train_to_dir(
    model: &mut Seq2SeqModel,
    corpus: &[IdPair],
    cfg: &TrainConfig,
    dev: Option<&[IdPair]>,
    dir: &Path,
) -> Result<TrainSummary> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut log = String::new();
    let summary = train(model, corpus, cfg, dev, |ev| match ev {
        TrainEvent::Log {
            iteration,
            loss,
            dev_loss,
        } => {
            log.push_str(&format!("{iteration}\t{loss:.6}"));
            if let Some(d) = dev_loss {
                log.push_str(&format!("\t{d:.6}"));
            }
            log.push('\n');
            info!("iteration {iteration}: loss {loss:.4}");
            Ok(())
        }
        TrainEvent::Checkpoint { iteration, model } => {
            model.save(&dir.join(checkpoint_name(iteration)))
        }
    })?;
    let log_path = dir.join("train.log");
    std::fs::write(&log_path, log).map_err(|e| Error::io(&log_path, e))?;
    model.save(&dir.join("model.bin"))?;
    Ok(summary)
}

/// Encodes parallel sentences with the model's vocabularies.
pub fn encode_pairs(model: &Seq2SeqModel, src: &[Sentence], tgt: &[Sentence]) -> Result<Vec<IdPair>> {
    if src.len() != tgt.len() {
        return Err(Error::Input(format!(
            "parallel corpus sides differ in length: {} vs {}",
            src.len(),
            tgt.len()
        )));
    }
    Ok(src
        .iter()
        .zip(tgt)
        .map(|(s, t)| (model.src_vocab.encode(s), model.tgt_vocab.encode(t)))
        .collect())
}
