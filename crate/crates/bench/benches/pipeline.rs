use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dtctrl_bench::{alternating, random, rank_drop};
use dtctrl_core::analysis::{verdict_from_data, VerdictOptions};
use dtctrl_core::oracle::{probe_interior, EndpointMap, ReachProbe};
use dtctrl_core::variation::variation_data;

fn variation(c: &mut Criterion) {
    let mut group = c.benchmark_group("variation_data");
    for f in [rank_drop(), random(3, 4), random(5, 6)] {
        let id = BenchmarkId::new(f.name, format!("n{}_N{}", f.sys.n(), f.ubar.len()));
        group.bench_function(id, |b| {
            b.iter(|| variation_data(&f.sys, black_box(&f.x0), &f.ubar).unwrap())
        });
    }
    group.finish();
}

fn verdict(c: &mut Criterion) {
    let opts = VerdictOptions::default();
    let mut group = c.benchmark_group("verdict");
    for f in [rank_drop(), alternating()] {
        let data = variation_data(&f.sys, &f.x0, &f.ubar).unwrap();
        group.bench_function(f.name, |b| {
            b.iter(|| verdict_from_data(black_box(&data), &opts).unwrap())
        });
    }
    group.finish();
}

fn probe(c: &mut Criterion) {
    let f = rank_drop();
    let map = EndpointMap::new(&f.sys, f.x0.clone(), f.ubar.len());
    let probe = ReachProbe::new(0.05, 2000, 0);
    let mut group = c.benchmark_group("probe");
    group.sample_size(10);
    group.bench_function("rank-drop_2000", |b| {
        b.iter(|| probe_interior(&map, &f.ubar, &probe).unwrap())
    });
    group.finish();
}

criterion_group!(benches, variation, verdict, probe);
criterion_main!(benches);
