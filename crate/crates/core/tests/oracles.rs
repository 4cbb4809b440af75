//! Library results checked against independent reference computations.

mod support;

use std::collections::HashMap;

use apeforge::corpus::Sentence;
use apeforge::metrics::{bleu, edit_distance, ter};
use apeforge::ngram_lm::train_lm;
use apeforge::subword::{learn_bpe, BpeModel, CONTINUATION, END_MARKER};
use apeforge::tuner::{mira, rerank_indices, reranked_ter, TuneConfig, TuneHyp, TuneSentence};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use support::{levenshtein, optimal_ter_edits};

fn words(v: &[u8]) -> Sentence {
    Sentence::new(v.iter().map(|c| ((b'a' + c) as char).to_string())).unwrap()
}

/// Plain corpus BLEU: clipped n-gram precisions up to 4, geometric mean,
/// brevity penalty on total lengths.
fn reference_bleu(hyps: &[Vec<u8>], refs: &[Vec<u8>]) -> f64 {
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut hl, mut rl) = (0, 0);
    for (h, r) in hyps.iter().zip(refs) {
        hl += h.len();
        rl += r.len();
        for n in 1..=4 {
            let mut rc: HashMap<&[u8], usize> = HashMap::new();
            for g in r.windows(n) {
                *rc.entry(g).or_default() += 1;
            }
            let mut hc: HashMap<&[u8], usize> = HashMap::new();
            for g in h.windows(n) {
                *hc.entry(g).or_default() += 1;
            }
            total[n - 1] += h.len().saturating_sub(n - 1);
            matched[n - 1] += hc.iter().map(|(g, c)| (*c).min(*rc.get(g).unwrap_or(&0))).sum::<usize>();
        }
    }
    if (0..4).any(|n| matched[n] == 0) {
        return 0.0;
    }
    let logp: f64 = (0..4).map(|n| (matched[n] as f64 / total[n] as f64).ln()).sum::<f64>() / 4.0;
    let bp = if hl >= rl { 1.0 } else { (1.0 - rl as f64 / hl as f64).exp() };
    100.0 * bp * logp.exp()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn bleu_matches_reference(
        pairs in proptest::collection::vec(
            (proptest::collection::vec(0u8..4, 1..12), proptest::collection::vec(0u8..4, 1..12)),
            1..6,
        )
    ) {
        let (h, r): (Vec<Vec<u8>>, Vec<Vec<u8>>) = pairs.into_iter().unzip();
        let hs: Vec<Sentence> = h.iter().map(|x| words(x)).collect();
        let rs: Vec<Sentence> = r.iter().map(|x| words(x)).collect();
        let got = bleu(&hs, &rs).unwrap();
        let want = reference_bleu(&h, &r);
        prop_assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn edit_distance_matches_levenshtein(
        h in proptest::collection::vec(0u8..4, 0..10),
        r in proptest::collection::vec(0u8..4, 0..10),
    ) {
        let e = edit_distance(&words(&h), &words(&r));
        prop_assert_eq!(e.cost, levenshtein(&h, &r));
        prop_assert_eq!(e.cost, e.insertions + e.deletions + e.substitutions);
    }

    #[test]
    fn greedy_ter_never_beats_the_optimum(
        h in proptest::collection::vec(0u8..4, 1..6),
        r in proptest::collection::vec(0u8..4, 1..6),
    ) {
        let t = ter(&words(&h), &words(&r));
        let best = optimal_ter_edits(&h, &r);
        prop_assert!(t.edits() >= best);
        prop_assert!(t.edits() <= levenshtein(&h, &r));
        prop_assert!((t.ter - 100.0 * t.edits() as f64 / r.len() as f64).abs() < 1e-9);
    }
}

/// Applies merges in learned order, each left to right over the whole word.
fn reference_segment(merges: &[(String, String)], word: &str) -> Vec<String> {
    let mut sym: Vec<String> = word.chars().map(String::from).collect();
    sym.push(END_MARKER.to_owned());
    for (a, b) in merges {
        let mut out = Vec::with_capacity(sym.len());
        let mut i = 0;
        while i < sym.len() {
            if i + 1 < sym.len() && &sym[i] == a && &sym[i + 1] == b {
                out.push(format!("{a}{b}"));
                i += 2;
            } else {
                out.push(sym[i].clone());
                i += 1;
            }
        }
        sym = out;
    }
    let last = sym.pop().unwrap();
    if last != END_MARKER {
        sym.push(last.strip_suffix(END_MARKER).unwrap().to_owned());
    }
    let n = sym.len();
    sym.into_iter()
        .enumerate()
        .map(|(i, s)| if i + 1 < n { format!("{s}{CONTINUATION}") } else { s })
        .collect()
}

#[test]
fn bpe_apply_matches_sequential_merging() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let word = |rng: &mut ChaCha8Rng| -> String {
        (0..rng.gen_range(1..=9)).map(|_| (b'a' + rng.gen_range(0..5u8)) as char).collect()
    };
    let corpus: Vec<Sentence> = (0..300)
        .map(|_| Sentence::new((0..6).map(|_| word(&mut rng))).unwrap())
        .collect();
    let model = learn_bpe(&corpus, 60);
    for _ in 0..500 {
        let w = word(&mut rng);
        let got = model.apply(&Sentence::new([w.clone()]).unwrap()).units;
        assert_eq!(got.tokens(), reference_segment(model.merges(), &w), "word {w}");
    }
}

#[test]
fn bpe_three_character_case() {
    let text = "#version: apeforge-bpe 1\n#base: a b c\na b\n";
    let model = BpeModel::parse(text, "inline").unwrap();
    let got = model.apply(&Sentence::parse("abc")).units;
    assert_eq!(got.tokens(), ["ab@@", "c"]);
    assert_eq!(
        got.tokens(),
        reference_segment(&[("a".into(), "b".into())], "abc").as_slice()
    );
}

fn permutations(items: &[String]) -> Vec<Vec<String>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let x = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, x.clone());
            out.push(p);
        }
    }
    out
}

#[test]
fn single_sentence_model_prefers_its_own_order() {
    for text in ["a b c", "der Hund bellt laut", "x y z x w"] {
        let s = Sentence::parse(text);
        let lm = train_lm(std::slice::from_ref(&s)).unwrap();
        let own = lm.perplexity(std::slice::from_ref(&s));
        for p in permutations(s.tokens()) {
            let other = lm.perplexity(&[Sentence::new(p.clone()).unwrap()]);
            assert!(own <= other + 1e-12, "{text}: {own} > {other} for {p:?}");
        }
    }
}

fn toy_lists(features: usize, count: usize, seed: u64) -> Vec<TuneSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let ref_len = rng.gen_range(4..=12) as f64;
            let zero = rng.gen_range(0..6);
            TuneSentence {
                hyps: (0..6)
                    .map(|k| {
                        let edits = if k == zero { 0.0 } else { rng.gen_range(1..=5) as f64 };
                        let mut f = vec![-edits / ref_len];
                        f.extend((1..features).map(|_| rng.gen_range(0.0..1.0)));
                        TuneHyp {
                            text: Sentence::new([format!("h{k}")]).unwrap(),
                            features: f,
                            edits,
                            ref_len,
                        }
                    })
                    .collect(),
            }
        })
        .collect()
}

/// Corpus TER of the first-ranked hypotheses, recomputed from scratch.
fn ter_of(sentences: &[TuneSentence], w: &[f64]) -> f64 {
    let (mut e, mut l) = (0.0, 0.0);
    for s in sentences {
        let mut best = 0;
        for (i, h) in s.hyps.iter().enumerate() {
            let score = |h: &TuneHyp| h.features.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
            if score(h) > score(&s.hyps[best]) {
                best = i;
            }
        }
        e += s.hyps[best].edits;
        l += s.hyps[best].ref_len;
    }
    100.0 * e / l
}

fn grid(k: usize, steps: i32) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = (-steps..=steps).map(|i| i as f64 / steps as f64).collect();
    let mut out = vec![vec![]];
    for _ in 0..k {
        out = out
            .into_iter()
            .flat_map(|w| axis.iter().map(move |&a| [w.clone(), vec![a]].concat()))
            .collect();
    }
    out
}

fn reference_indices(sentences: &[TuneSentence], w: &[f64]) -> Vec<usize> {
    sentences
        .iter()
        .map(|s| {
            let scores: Vec<f64> = s.hyps.iter().map(|h| h.features.iter().zip(w).map(|(a, b)| a * b).sum()).collect();
            let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            scores.iter().position(|&x| x == top).unwrap()
        })
        .collect()
}

#[test]
fn rerank_matches_brute_force_over_a_weight_grid() {
    for (k, steps) in [(1, 10), (2, 10), (3, 5)] {
        let lists = toy_lists(k, 60, 20 + k as u64);
        for w in grid(k, steps) {
            assert_eq!(rerank_indices(&lists, &w), reference_indices(&lists, &w), "weights {w:?}");
            assert!((reranked_ter(&lists, &w) - ter_of(&lists, &w)).abs() < 1e-9);
        }
    }
}

#[test]
fn rerank_is_scale_invariant_and_negation_reverses() {
    let lists = toy_lists(3, 60, 5);
    let w = [0.7, -0.3, 0.2];
    let scaled: Vec<f64> = w.iter().map(|x| x * 4.5).collect();
    assert_eq!(rerank_indices(&lists, &w), rerank_indices(&lists, &scaled));
    let neg: Vec<f64> = w.iter().map(|x| -x).collect();
    for (s, i) in lists.iter().zip(rerank_indices(&lists, &neg)) {
        let score = |h: &TuneHyp| h.features.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let low = s.hyps.iter().map(score).fold(f64::INFINITY, f64::min);
        assert_eq!(score(&s.hyps[i]), low);
    }
}

#[test]
fn mira_matches_the_grid_optimum_on_analytic_lists() {
    for k in 2..=3 {
        let lists = toy_lists(k, 500, 10 + k as u64);
        let out = mira(&lists, &vec![1.0; k], &TuneConfig::default());
        let best = grid(k, 5).iter().map(|w| ter_of(&lists, w)).fold(f64::INFINITY, f64::min);
        assert_eq!(best, 0.0);
        assert!((ter_of(&lists, &out.weights) - out.ter).abs() < 1e-9);
        assert_eq!(out.ter, best, "{k} features");
        assert!(out.ter <= out.initial_ter);
    }
}

#[test]
fn single_feature_keeps_the_ranking() {
    let lists: Vec<TuneSentence> = toy_lists(2, 60, 4)
        .into_iter()
        .map(|mut s| {
            for h in &mut s.hyps {
                h.features.truncate(1);
                h.features[0] = h.features[0] * 0.5 + h.ref_len;
            }
            s
        })
        .collect();
    let out = mira(&lists, &[1.0], &TuneConfig::default());
    assert!(out.weights[0] > 0.0);
    assert_eq!(rerank_indices(&lists, &out.weights), rerank_indices(&lists, &[1.0]));
}
