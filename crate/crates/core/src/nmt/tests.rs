use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn toy(emb: usize, hidden: usize, seed: u64) -> Seq2SeqModel {
    let sv = Vocab::from_tokens(["a", "b", "c", "d"].map(String::from));
    let tv = Vocab::from_tokens(["x", "y", "z"].map(String::from));
    Seq2SeqModel::new(sv, tv, emb, hidden, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn distributions_normalize() {
    let m = toy(6, 5, 3);
    let (lp, att) = m.forward(&[4, 5, 6], &[4, 5]).unwrap();
    assert_eq!(lp.len(), m.dims.tgt_vocab);
    assert!((lp.iter().map(|x| x.exp()).sum::<f64>() - 1.0).abs() < 1e-9);
    assert_eq!(att.len(), 4);
    assert!((att.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn out_of_range_ids_are_rejected() {
    let m = toy(4, 4, 1);
    assert!(matches!(m.forward(&[99], &[]), Err(Error::Input(_))));
    assert!(matches!(m.forward(&[4], &[99]), Err(Error::Input(_))));
}

#[test]
fn gradients_match_finite_differences() {
    let m = toy(5, 4, 11);
    let report = gradient_check(&m, &[4, 5, 7, 4], &[5, 4, 6], 1e-5, 1e-4).unwrap();
    assert_eq!(report.tensors.len(), Params::NAMES.len());
}

#[test]
fn zero_output_layer_gives_uniform_loss() {
    let mut m = toy(4, 3, 2);
    m.params.out_w.fill(0.0);
    m.params.out_b.fill(0.0);
    let tgt = [4, 5];
    let v = m.dims.tgt_vocab as f64;
    assert!((m.loss(&[4, 5], &tgt) - 3.0 * v.ln()).abs() < 1e-12);
    let mut g = Params::zeros(&m.dims);
    m.loss_and_grad(&[4, 5], &tgt, &mut g);
    // Each step contributes softmax - onehot = 1/V - [y].
    for (k, &gb) in g.out_b.iter().enumerate() {
        let hits = [4u32, 5, vocab::EOS].iter().filter(|&&y| y as usize == k).count() as f64;
        assert!((gb - (3.0 / v - hits)).abs() < 1e-12);
    }
}

#[test]
fn infinite_tolerance_always_passes() {
    let mut m = toy(3, 3, 5);
    m.params.dec_b[0] = 50.0;
    assert!(gradient_check(&m, &[4], &[4], 1e-1, f64::INFINITY).is_ok());
}

#[test]
fn checkpoint_round_trip() {
    let m = toy(5, 4, 8);
    let bytes = m.to_bytes();
    let back = Seq2SeqModel::from_bytes(&bytes).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.forward(&[4, 6], &[5]).unwrap(), m.forward(&[4, 6], &[5]).unwrap());

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Seq2SeqModel::from_bytes(&bad), Err(Error::Checkpoint(_))));
    let mut flipped = bytes.clone();
    let n = flipped.len();
    flipped[n - 12] ^= 1;
    assert!(Seq2SeqModel::from_bytes(&flipped).is_err());
    assert!(Seq2SeqModel::from_bytes(&bytes[..n - 1]).is_err());
}

#[test]
fn config_parses_toml() {
    let cfg = TrainConfig::parse("embedding_dim = 8\nhidden_dim = 8\nbatch_size = 4\n").unwrap();
    assert_eq!(cfg.batch_size, 4);
    assert_eq!(cfg.max_sentence_length, 50);
    assert!(TrainConfig::parse("batch_size = 0").is_err());
    assert!(TrainConfig::parse("bogus = 1").is_err());
}

fn small_cfg() -> TrainConfig {
    TrainConfig {
        embedding_dim: 8,
        hidden_dim: 8,
        batch_size: 4,
        epochs: 3,
        checkpoint_every: 5,
        log_every: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_deterministic_and_checkpoints_on_schedule() {
    let corpus: Vec<IdPair> = (0..12u32).map(|i| (vec![4 + i % 4, 5], vec![4 + i % 3])).collect();
    let run = || {
        let mut m = toy(8, 8, 4);
        let mut snaps = Vec::new();
        let s = train(&mut m, &corpus, &small_cfg(), None, |ev| {
            if let TrainEvent::Checkpoint { iteration, model } = ev {
                snaps.push((iteration, model.to_bytes()));
            }
            Ok(())
        })
        .unwrap();
        (m, s, snaps)
    };
    let (m1, s1, c1) = run();
    let (m2, s2, c2) = run();
    assert_eq!(m1.to_bytes(), m2.to_bytes());
    assert_eq!(s1, s2);
    assert_eq!(s1.iterations, 9);
    assert_eq!(c1, c2);
    assert_eq!(c1.iter().map(|c| c.0).collect::<Vec<_>>(), vec![5]);
}

#[test]
fn training_rejects_empty_and_skips_long() {
    let mut m = toy(4, 4, 1);
    let cfg = TrainConfig {
        max_sentence_length: 2,
        ..small_cfg()
    };
    assert!(train(&mut m, &[], &cfg, None, |_| Ok(())).is_err());
    let corpus = vec![(vec![4, 5, 6], vec![4]), (vec![4], vec![5])];
    let s = train(&mut m, &corpus, &cfg, None, |_| Ok(())).unwrap();
    assert_eq!(s.skipped, 1);
}

#[test]
fn divergence_names_batch() {
    let mut m = toy(4, 4, 1);
    m.params.out_b[4] = f64::NAN;
    let err = train(&mut m, &[(vec![4], vec![4])], &small_cfg(), None, |_| Ok(())).unwrap_err();
    assert!(matches!(err, Error::Divergence { batch: 1, .. }));
}
