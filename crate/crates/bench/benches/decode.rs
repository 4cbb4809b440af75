use std::sync::Arc;

use apeforge::decoder::{DecodeInput, DecodeOptions, Decoder, InputSide, NmtScorer, ScorerBinding};
use apeforge::nmt::{Seq2SeqModel, Vocab};
use apeforge::pipeline::ToyGrammar;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bench_decode(c: &mut Criterion) {
    let vocab = Vocab::from_tokens(ToyGrammar.words().into_iter().map(String::from));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = Arc::new(Seq2SeqModel::new(vocab.clone(), vocab, 32, 32, &mut rng));
    let binding = |name: &str| ScorerBinding {
        name: name.into(),
        scorer: Arc::new(NmtScorer::new(model.clone())),
        input: InputSide::Mt,
        weight: 0.5,
    };
    let single = Decoder::new(vec![binding("a")], None).unwrap();
    let ensemble = Decoder::new(vec![binding("a"), binding("b")], None).unwrap();
    let inputs: Vec<DecodeInput> = ToyGrammar
        .sentences(20, 6)
        .into_iter()
        .map(|mt| DecodeInput { mt, src: None })
        .collect();

    let mut group = c.benchmark_group("decode_20_sentences");
    group.sample_size(10);
    for beam in [1, 5, 12] {
        let opts = DecodeOptions { beam, length_norm: true };
        group.bench_with_input(BenchmarkId::new("single", beam), &opts, |b, o| {
            b.iter(|| single.decode_all(&inputs, o).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("ensemble", beam), &opts, |b, o| {
            b.iter(|| ensemble.decode_all(&inputs, o).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_decode);
criterion_main!(benches);
