use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn apeforge(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_apeforge"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("APEFORGE_WORKSPACE")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = apeforge(dir, args);
    assert!(
        out.status.success(),
        "apeforge {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

#[test]
fn eval_prints_corpus_and_sentence_scores() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "hyp", "a b c d e\na c b d\n");
    write(d.path(), "ref", "a b c d f\na b c d\n");
    let ter = ok(d.path(), &["eval", "--metric", "ter", "--hyp", "hyp", "--ref", "ref"]);
    assert_eq!(ter, "TER\t22.22\n");
    let per = ok(
        d.path(),
        &["eval", "--metric", "ter", "--hyp", "hyp", "--ref", "ref", "--per-sentence"],
    );
    assert_eq!(per, "0\t20.00\t0,0,1,0\n1\t25.00\t0,0,0,1\n");
    write(d.path(), "h1", "a b c d e\n");
    write(d.path(), "r1", "a b c d f\n");
    let b = ok(d.path(), &["eval", "--metric", "bleu", "--hyp", "h1", "--ref", "r1"]);
    assert_eq!(b, "BLEU\t66.87\n");
}

#[test]
fn misaligned_eval_fails_cleanly() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "hyp", "a\nb\n");
    write(d.path(), "ref", "a\n");
    let out = apeforge(d.path(), &["eval", "--metric", "ter", "--hyp", "hyp", "--ref", "ref"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let missing = apeforge(d.path(), &["eval", "--metric", "ter", "--hyp", "nope", "--ref", "ref"]);
    assert!(!missing.status.success());
}

#[test]
fn bpe_round_trip() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "train", "lower lowest newer newest\nwider wide lower\n");
    ok(d.path(), &["bpe", "learn", "--in", "train", "--merges", "8", "--out", "bpe.model"]);
    assert!(fs::read_to_string(d.path().join("bpe.model"))
        .unwrap()
        .starts_with("#version: apeforge-bpe 1"));
    ok(d.path(), &["bpe", "apply", "--model", "bpe.model", "--in", "train", "--out", "seg"]);
    assert!(fs::read_to_string(d.path().join("seg")).unwrap().contains("@@"));
    ok(d.path(), &["bpe", "revert", "--in", "seg", "--out", "back"]);
    assert_eq!(
        fs::read(d.path().join("back")).unwrap(),
        fs::read(d.path().join("train")).unwrap()
    );
}

#[test]
fn lm_and_cross_entropy_selection() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "in", &"the cat sat on the mat\n".repeat(20));
    write(d.path(), "out", &"stock prices fell sharply today\n".repeat(20));
    write(d.path(), "mixed", "stock prices fell\nthe cat sat\nprices fell today\nthe mat\n");
    ok(d.path(), &["lm", "train", "--in", "in", "--out", "in.arpa"]);
    ok(d.path(), &["lm", "train", "--in", "out", "--out", "out.arpa", "--max-tokens", "50"]);
    let xent = ok(d.path(), &["lm", "xent", "--model", "in.arpa", "--in", "mixed"]);
    let vals: Vec<f64> = xent.lines().map(|l| l.parse().unwrap()).collect();
    assert_eq!(vals.len(), 4);
    assert!(vals[1] < vals[0]);
    let kept = ok(
        d.path(),
        &[
            "select", "xent", "--in-domain", "in.arpa", "--out-domain", "out.arpa", "--corpus", "mixed", "--keep",
            "50%",
        ],
    );
    assert_eq!(kept, "the cat sat\nthe mat\n");
}

#[test]
fn corpus_filter_and_mix() {
    let d = tempfile::tempdir().unwrap();
    write(
        d.path(),
        "lines",
        "Too short.\nThis sentence is long enough to pass the letter threshold .\nno capital letter at the start of this long line .\n",
    );
    ok(d.path(), &["corpus", "filter-wellformed", "--in", "lines", "--out", "kept"]);
    assert_eq!(fs::read_to_string(d.path().join("kept")).unwrap().lines().count(), 1);

    for (p, n) in [("a", 2), ("b", 3)] {
        for side in ["src", "mt", "pe"] {
            write(d.path(), &format!("{p}.{side}"), &format!("{p} {side}\n").repeat(n));
        }
    }
    write(d.path(), "mix.txt", "a 2\nb 1\n");
    ok(d.path(), &["corpus", "mix", "--spec", "mix.txt", "--out", "mixed"]);
    let pe = fs::read_to_string(d.path().join("mixed.pe")).unwrap();
    assert_eq!(pe.lines().count(), 7);
    assert!(pe.starts_with("a pe\n"));
}

#[test]
fn synth_and_ter_selection() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["synth", "generate", "--count", "300", "--seed", "2", "--out", "pe"]);
    ok(d.path(), &["synth", "corrupt", "--in", "pe", "--out", "pool", "--noise", "0.3", "--seed", "3"]);
    ok(d.path(), &["synth", "generate", "--count", "40", "--seed", "4", "--out", "rpe"]);
    ok(d.path(), &["synth", "corrupt", "--in", "rpe", "--out", "ref", "--noise", "0.1", "--seed", "5"]);
    ok(
        d.path(),
        &[
            "select", "ter", "--pool", "pool", "--reference", "ref", "--n", "2", "--out", "sel", "--report",
            "stats.txt",
        ],
    );
    let n = fs::read_to_string(d.path().join("sel.mt")).unwrap().lines().count();
    assert!(n > 0 && n <= 80);
    let stats = fs::read_to_string(d.path().join("stats.txt")).unwrap();
    assert!(stats.contains("# selected") && stats.contains("TER"));
}

#[test]
fn grad_check_reports_every_group() {
    let d = tempfile::tempdir().unwrap();
    let out = ok(d.path(), &["nmt", "grad-check", "--emb", "4", "--hidden", "3"]);
    assert_eq!(out.lines().count(), 20);
    let failing = apeforge(d.path(), &["nmt", "grad-check", "--tolerance", "0"]);
    assert!(!failing.status.success());
}

#[test]
fn train_decode_tune_report() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(p, &["synth", "generate", "--count", "120", "--seed", "1", "--out", "pe"]);
    ok(p, &["synth", "corrupt", "--in", "pe", "--out", "all", "--noise", "0.15", "--buckets", "16"]);
    write(
        p,
        "train.toml",
        "embedding_dim = 8\nhidden_dim = 8\nbatch_size = 10\nmax_iterations = 20\ncheckpoint_every = 10\n",
    );
    ok(p, &["nmt", "train", "--src", "all.mt", "--tgt", "all.pe", "--config", "train.toml", "--out", "mt2pe"]);
    assert!(p.join("mt2pe/model.bin").exists());
    assert!(p.join("mt2pe/model.iter00000010.bin").exists());
    ok(p, &["nmt", "train", "--src", "all.src", "--tgt", "all.pe", "--config", "train.toml", "--out", "src2pe"]);
    write(
        p,
        "dec.cfg",
        "scorer mt2pe model=mt2pe/model.bin input=mt weight=1\n\
         scorer src2pe model=src2pe/model.bin input=src weight=1\n\
         feature pep input=mt weight=1\nbeam 3\n",
    );
    ok(p, &["tune", "--dev", "all", "--config", "dec.cfg", "--iterations", "1", "--epochs", "2", "--out", "w.txt"]);
    let w = fs::read_to_string(p.join("w.txt")).unwrap();
    assert_eq!(
        w.lines().map(|l| l.split('\t').next().unwrap()).collect::<Vec<_>>(),
        ["mt2pe", "src2pe", "pep"]
    );
    ok(
        p,
        &["decode", "--config", "dec.cfg", "--mt", "all.mt", "--src", "all.src", "--weights", "w.txt", "--out", "hyp"],
    );
    assert_eq!(fs::read_to_string(p.join("hyp")).unwrap().lines().count(), 120);
    ok(
        p,
        &["decode", "--config", "dec.cfg", "--mt", "all.mt", "--src", "all.src", "--nbest", "2", "--out", "nbest"],
    );
    let nb = fs::read_to_string(p.join("nbest")).unwrap();
    assert!(nb.lines().count() <= 240 && nb.lines().all(|l| l.split(" ||| ").count() == 4));
    let missing_src = apeforge(p, &["decode", "--config", "dec.cfg", "--mt", "all.mt", "--out", "x"]);
    assert!(!missing_src.status.success());

    let table = ok(
        p,
        &["report", "--ref", "all.pe", "--mt", "all.mt", "--system", "ape=hyp", "--tsv", "r.tsv"],
    );
    assert!(table.contains("Uncorrected MT (baseline)") && table.contains("ape"));
    assert_eq!(fs::read_to_string(p.join("r.tsv")).unwrap().lines().count(), 3);
}

#[test]
fn run_honours_workspace_override() {
    let d = tempfile::tempdir().unwrap();
    write(
        d.path(),
        "p.cfg",
        "workspace ws\nstage pe generate out=pe.txt count=20 seed=1\n\
         stage data corrupt in=pe.txt out=all noise=0.2 seed=2\n\
         stage ter eval metric=ter hyp=all.mt ref=all.pe out=ter.txt\n",
    );
    let first = ok(d.path(), &["run", "--config", "p.cfg"]);
    assert_eq!(first, "3 stages run, 0 up to date\n");
    assert!(fs::read_to_string(d.path().join("ws/ter.txt")).unwrap().starts_with("TER\t"));
    assert_eq!(ok(d.path(), &["run", "--config", "p.cfg"]), "0 stages run, 3 up to date\n");

    let other = d.path().join("elsewhere");
    let out = Command::new(env!("CARGO_BIN_EXE_apeforge"))
        .args(["run", "--config", "p.cfg"])
        .current_dir(d.path())
        .env("APEFORGE_WORKSPACE", &other)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(other.join("ter.txt").exists());
    assert!(other.join("manifest.tsv").exists());
}

#[test]
fn run_from_a_config_in_a_subdirectory() {
    let d = tempfile::tempdir().unwrap();
    fs::create_dir(d.path().join("configs")).unwrap();
    write(
        d.path(),
        "configs/p.cfg",
        "workspace ../work/x\nstage pe generate out=pe.txt count=5 seed=1\n\
         stage data corrupt in=pe.txt out=all noise=0.2 seed=2\n",
    );
    assert_eq!(ok(d.path(), &["run", "--config", "configs/p.cfg"]), "2 stages run, 0 up to date\n");
    assert!(d.path().join("work/x/all.mt").exists());
    assert_eq!(ok(d.path(), &["run", "--config", "configs/p.cfg"]), "0 stages run, 2 up to date\n");
}
