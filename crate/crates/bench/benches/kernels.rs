use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;
use recgym_bench::{planted_sessions, random_distances, random_matrix, rng};
use recgym_core::agents::{Mlp, ScorerLayout, SlotScorer};
use recgym_core::bicluster::{bimax, BimaxConfig};
use recgym_core::env::{EnvConfig, ReplayEnv};
use recgym_core::grid::{greedy_arrange, sa_arrange, SaSchedule};
use recgym_core::state::{build_state, StateView};

fn bench_bimax(c: &mut Criterion) {
    let mut group = c.benchmark_group("bimax");
    for size in [20, 40, 60] {
        let m = random_matrix(size, size, 0.3, 1);
        let cfg = BimaxConfig::default();
        group.bench_with_input(BenchmarkId::from_parameter(size), &m, |b, m| {
            b.iter(|| bimax(black_box(m), &cfg).unwrap())
        });
    }
    group.finish();
}

fn bench_layout(c: &mut Criterion) {
    let mut group = c.benchmark_group("layout");
    group.sample_size(10);
    for n in [5, 10, 20] {
        let dist = random_distances(n * n, 200, 2);
        group.bench_with_input(BenchmarkId::new("greedy", n), &dist, |b, d| {
            b.iter(|| greedy_arrange(d, n, &mut rng(3)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("anneal", n), &dist, |b, d| {
            b.iter(|| sa_arrange(d, n, &SaSchedule::default(), &mut rng(3)).unwrap())
        });
    }
    group.finish();
}

fn bench_mlp(c: &mut Criterion) {
    let mut r = rng(4);
    let sizes = [1000, 256, 128, 25];
    let net = Mlp::random(&sizes, &mut r).unwrap();
    let x: Vec<f64> = (0..sizes[0]).map(|_| r.gen_range(0.0..1.0)).collect();
    let up: Vec<f64> = (0..25).map(|_| r.gen_range(-1.0..1.0)).collect();
    c.bench_function("mlp/forward", |b| {
        b.iter(|| net.forward(black_box(&x)).unwrap())
    });
    c.bench_function("mlp/forward_backward", |b| {
        b.iter(|| {
            let acts = net.forward_cached(black_box(&x)).unwrap();
            net.backward(&acts, &up).unwrap()
        })
    });
}

fn bench_state(c: &mut Criterion) {
    let ds = planted_sessions(200, 5);
    let session = ds
        .sessions
        .iter()
        .find(|s| s.clickout_indices().len() > 1)
        .unwrap();
    let idx = *session.clickout_indices().last().unwrap();
    let events = session.events();
    c.bench_function("state/build", |b| {
        b.iter(|| build_state(&events[..idx], &events[idx], &ds.catalog, &ds.context, 0.5).unwrap())
    });

    let env = ReplayEnv::new(Arc::new(ds.clone()), EnvConfig::default(), 6).unwrap();
    let state = ReplayEnv::new(Arc::new(ds), EnvConfig::default(), 6)
        .unwrap()
        .reset()
        .unwrap();
    let mut group = c.benchmark_group("scorer");
    for layout in [ScorerLayout::Flat, ScorerLayout::Shared] {
        let scorer = SlotScorer::random(
            layout,
            StateView::default(),
            &[64],
            env.feature_dim(),
            env.context_len(),
            &mut rng(7),
        )
        .unwrap();
        group.bench_function(format!("{layout:?}"), |b| {
            b.iter(|| scorer.scores(black_box(&state)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_bimax, bench_layout, bench_mlp, bench_state);
criterion_main!(benches);
