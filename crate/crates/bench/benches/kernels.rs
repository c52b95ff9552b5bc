//! Microbenchmarks for the verification kernel and its enumeration oracle.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use specsim_core::rng::Substream;
use specsim_core::specdec::{exact_output_distribution, speculative_cycle, CategoricalDist};

/// Deterministic family of softmax-like distributions over `vocab` tokens.
fn skewed_dists(vocab: usize, count: usize, sharpness: f64) -> Vec<CategoricalDist> {
    (0..count)
        .map(|i| {
            let weights: Vec<f64> = (0..vocab)
                .map(|t| (-sharpness * ((t + i) % vocab) as f64).exp())
                .collect();
            CategoricalDist::from_weights(&weights).expect("weights are positive and finite")
        })
        .collect()
}

fn bench_speculative_cycle(c: &mut Criterion) {
    let vocab = 64;
    let draft_len = 4;
    let targets = skewed_dists(vocab, draft_len + 1, 0.08);
    let drafts = skewed_dists(vocab, draft_len, 0.12);

    c.bench_function("speculative_cycle_v64_k4", |b| {
        b.iter_batched(
            || Substream::new(7, &[0]).rng(),
            |mut rng| speculative_cycle(&targets, &drafts, &mut rng).expect("valid chain"),
            BatchSize::SmallInput,
        )
    });
}

fn bench_exact_output_distribution(c: &mut Criterion) {
    let vocab = 6;
    let draft_len = 4;
    let targets = skewed_dists(vocab, draft_len + 1, 0.3);
    let drafts = skewed_dists(vocab, draft_len, 0.5);

    c.bench_function("exact_output_distribution_v6_k4", |b| {
        b.iter(|| exact_output_distribution(&targets, &drafts).expect("within oracle limits"))
    });
}

criterion_group!(kernels, bench_speculative_cycle, bench_exact_output_distribution);
criterion_main!(kernels);
