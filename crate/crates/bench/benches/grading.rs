// SPDX-License-Identifier: Apache-2.0

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reprosvc_core::ledger::query;
use reprosvc_core::registry::hard_models;
use reprosvc_core::report::{grade, rank};
use reprosvc_core::testkit::records;

fn grading(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut group = c.benchmark_group("grade");
    for benchmarks in [10, 100, 1000] {
        let mut r = records::random_record(&mut rng, "p", "c1", 0, benchmarks, 4);
        while r.cells.is_empty() {
            r = records::random_record(&mut rng, "p", "c1", 0, benchmarks, 4);
        }
        group.bench_with_input(BenchmarkId::from_parameter(r.cells.len()), &r, |b, r| b.iter(|| grade(black_box(r))));
    }
    group.finish();

    let mut group = c.benchmark_group("rank");
    for n in [10, 100, 1000] {
        let rs: Vec<_> = (0..n)
            .map(|i| records::random_record(&mut rng, &format!("p{i}"), &format!("{:x}", i + 1), i as i64, 20, 3))
            .collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &rs, |b, rs| b.iter(|| rank(black_box(rs))));
    }
    group.finish();
}

fn queries(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let history = records::random_history(&mut rng, "p", 200, 50, 3);
    let commits = query::commits_in_order(&history);
    let (first, last) = (commits[0].clone(), commits[commits.len() - 1].clone());
    c.bench_function("diff_commits/200 commits", |b| {
        b.iter(|| query::diff_commits(black_box(&history), &first, &last).unwrap())
    });
    c.bench_function("first_regression/200 commits", |b| {
        b.iter(|| query::first_regression(black_box(&history), "b7", "alg1"))
    });
    c.bench_function("hard_models/latest", |b| b.iter(|| hard_models(black_box(&history), None).unwrap()));
}

criterion_group!(benches, grading, queries);
criterion_main!(benches);
