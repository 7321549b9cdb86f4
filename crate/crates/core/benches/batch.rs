//! Sequential versus rayon batch throughput: generate-and-audit over many
//! schedules, and the oracle's first-level subtree split.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use ldstack::batch::check_all;
use ldstack::oracle::{minimax_search, SearchOptions};
use ldstack::schedule::uniform;
use ldstack::testgen::{mixed_sources, InstanceSpec};
use ldstack::{Exact, Schedule, Source, StackerConfig};

fn bench_generate(c: &mut Criterion) {
    let scheds: Vec<Schedule<Exact>> = mixed_sources(42, 24, InstanceSpec::default())
        .into_iter()
        .map(|(_, _, s)| Schedule::new(s))
        .collect();
    let mut group = c.benchmark_group("generate_and_audit");
    group.sample_size(10);
    for steps in [500u64, 2_000] {
        group.throughput(Throughput::Elements(steps * scheds.len() as u64));
        group.bench_with_input(BenchmarkId::new("sequential", steps), &steps, |b, &t| {
            b.iter(|| check_all(&scheds, t, StackerConfig::default(), false))
        });
        group.bench_with_input(BenchmarkId::new("parallel", steps), &steps, |b, &t| {
            b.iter(|| check_all(&scheds, t, StackerConfig::default(), true))
        });
    }
    group.finish();
}

fn bench_oracle(c: &mut Criterion) {
    let sched = Schedule::new(Source::stationary(uniform::<Exact>(&["a", "b", "c", "d", "e"])).unwrap());
    let mut group = c.benchmark_group("oracle_uniform5");
    group.sample_size(10);
    for (name, parallel) in [("sequential", false), ("parallel", true)] {
        let opts = SearchOptions { parallel, ..SearchOptions::default() };
        group.bench_function(BenchmarkId::new(name, 9), |b| b.iter(|| minimax_search(&sched, 9, opts).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bench_generate, bench_oracle);
criterion_main!(benches);
