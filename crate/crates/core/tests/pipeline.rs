use std::fs;
use std::path::Path;
use std::sync::Arc;

use apeforge::corpus::Sentence;
use apeforge::error::Error;
use apeforge::metrics::corpus_ter;
use apeforge::nmt::{train, IdPair, Seq2SeqModel, TrainConfig, Vocab};
use apeforge::pipeline::{roundtrip_generate, run, schedule, Manifest, PipelineConfig, MANIFEST_FILE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(dir: &Path, text: &str) -> PipelineConfig {
    PipelineConfig::parse(text, "test", dir).unwrap()
}

const CHAIN: &str = "\
workspace ws
stage ter eval metric=ter hyp=all.mt ref=all.pe out=ter.txt
stage data corrupt in=pe.txt out=all noise=0.2 seed=2
stage pe generate out=pe.txt count=30 seed=1
";

#[test]
fn schedule_follows_data_dependencies() {
    let d = tempfile::tempdir().unwrap();
    let cfg = config(d.path(), CHAIN);
    let names: Vec<&str> = schedule(&cfg)
        .unwrap()
        .into_iter()
        .map(|i| cfg.stages[i].name.as_str())
        .collect();
    assert_eq!(names, ["pe", "data", "ter"]);
}

#[test]
fn independent_stages_keep_declaration_order() {
    let d = tempfile::tempdir().unwrap();
    let cfg = config(
        d.path(),
        "stage b generate out=b.txt count=3\nstage a generate out=a.txt count=3\nstage c generate out=c.txt count=3 after=a\n",
    );
    let order: Vec<&str> = schedule(&cfg)
        .unwrap()
        .into_iter()
        .map(|i| cfg.stages[i].name.as_str())
        .collect();
    assert_eq!(order, ["b", "a", "c"]);
}

#[test]
fn cycles_and_bad_declarations_are_config_errors() {
    let d = tempfile::tempdir().unwrap();
    let cyc = config(
        d.path(),
        "stage x filter in=b.txt out=a.txt\nstage y filter in=a.txt out=b.txt\n",
    );
    assert!(matches!(schedule(&cyc), Err(Error::Config(m)) if m.contains("cycle")));
    let unknown_after = config(d.path(), "stage x generate out=a.txt after=nope\n");
    assert!(matches!(schedule(&unknown_after), Err(Error::Config(_))));
    assert!(PipelineConfig::parse("stage x frobnicate out=a\n", "t", d.path())
        .map(|c| schedule(&c))
        .map_or(true, |r| r.is_err()));
    let bad_key = config(d.path(), "stage x generate out=a.txt colour=red\n");
    assert!(schedule(&bad_key).is_err());
}

#[test]
fn rerun_is_a_no_op_and_changes_propagate() {
    let d = tempfile::tempdir().unwrap();
    let first = run(&config(d.path(), CHAIN)).unwrap();
    assert_eq!(first.executed, ["pe", "data", "ter"]);
    let ws = d.path().join("ws");
    let manifest = fs::read_to_string(ws.join(MANIFEST_FILE)).unwrap();
    assert!(manifest.starts_with("#apeforge-manifest 1\n"));
    assert_eq!(Manifest::parse(&manifest).unwrap(), first.manifest);

    let again = run(&config(d.path(), CHAIN)).unwrap();
    assert!(again.executed.is_empty());
    assert_eq!(again.skipped.len(), 3);

    // A parameter change reruns that stage and everything downstream whose
    // inputs changed.
    let changed = CHAIN.replace("noise=0.2", "noise=0.3");
    let third = run(&config(d.path(), &changed)).unwrap();
    assert_eq!(third.executed, ["data", "ter"]);

    // Touching an output by hand invalidates its producer.
    fs::write(ws.join("ter.txt"), "tampered\n").unwrap();
    let fourth = run(&config(d.path(), &changed)).unwrap();
    assert_eq!(fourth.executed, ["ter"]);
    assert!(fs::read_to_string(ws.join("ter.txt")).unwrap().starts_with("TER\t"));
}

#[test]
fn stage_failures_name_the_stage() {
    let d = tempfile::tempdir().unwrap();
    let cfg = config(d.path(), "stage broken filter in=missing.txt out=x.txt\n");
    match run(&cfg) {
        Err(Error::Stage { stage, .. }) => assert_eq!(stage, "broken"),
        other => panic!("expected a stage error, got {other:?}"),
    }
}

#[test]
fn file_blocks_are_written_before_stages() {
    let d = tempfile::tempdir().unwrap();
    let cfg = config(
        d.path(),
        "workspace w\nfile extra/conf.txt\n  hello there\nend\nstage f filter in=extra/conf.txt out=out.txt\n",
    );
    run(&cfg).unwrap();
    assert_eq!(
        fs::read_to_string(d.path().join("w/extra/conf.txt")).unwrap(),
        "hello there\n"
    );
}

fn copy_model(seed: u64, iterations: usize) -> (Seq2SeqModel, Vec<Vec<u32>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let vocab = Vocab::from_tokens((0..8).map(|i| format!("w{i}")));
    let corpus: Vec<IdPair> = (0..50)
        .map(|_| {
            let n = rng.gen_range(2..=5);
            let s: Vec<u32> = (0..n).map(|_| 4 + rng.gen_range(0..8u32)).collect();
            (s.clone(), s)
        })
        .collect();
    let mut model = Seq2SeqModel::new(vocab.clone(), vocab, 16, 16, &mut ChaCha8Rng::seed_from_u64(seed));
    let cfg = TrainConfig {
        embedding_dim: 16,
        hidden_dim: 16,
        batch_size: 10,
        epochs: usize::MAX,
        max_iterations: Some(iterations),
        checkpoint_every: usize::MAX,
        log_every: usize::MAX,
        init_seed: seed,
        ..Default::default()
    };
    train(&mut model, &corpus, &cfg, None, |_| Ok(())).unwrap();
    (model, corpus.into_iter().map(|p| p.0).collect())
}

#[test]
fn round_trip_through_copy_models_is_the_identity() {
    let (model, sents) = copy_model(1, 600);
    let mono: Vec<Sentence> = sents.iter().map(|s| model.tgt_vocab.decode(s)).collect();
    let exact = sents.iter().filter(|s| model.greedy(s, 20).unwrap() == **s).count();
    assert_eq!(exact, sents.len(), "copy model must be perfect on its data");
    let m = Arc::new(model);
    let rt = roundtrip_generate(&mono, m.clone(), m, 1).unwrap();
    assert_eq!(rt.dropped, 0);
    for (t, pe) in rt.triplets.iter().zip(&mono) {
        assert_eq!(&t.pe, pe);
        assert_eq!(&t.mt, pe);
    }
    let mts: Vec<Sentence> = rt.triplets.iter().map(|t| t.mt.clone()).collect();
    assert_eq!(corpus_ter(&mts, &mono).unwrap().score(), 0.0);
}

#[test]
fn round_trip_through_noisy_models_has_errors() {
    let (model, sents) = copy_model(2, 150);
    let mono: Vec<Sentence> = sents.iter().map(|s| model.tgt_vocab.decode(s)).collect();
    let m = Arc::new(model);
    let rt = roundtrip_generate(&mono, m.clone(), m, 2).unwrap();
    assert_eq!(rt.triplets.len() + rt.dropped, mono.len());
    let pe: Vec<Sentence> = rt.triplets.iter().map(|t| t.pe.clone()).collect();
    let mt: Vec<Sentence> = rt.triplets.iter().map(|t| t.mt.clone()).collect();
    assert!(pe.len() * 2 > mono.len());
    let t = corpus_ter(&mt, &pe).unwrap().score();
    assert!(t > 0.0 && t < 100.0, "round-trip TER {t}");
}
