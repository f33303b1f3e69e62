use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lifp_bench::SuiteConfig;
use lifp_core::dit::{denoise_chunked, DitModel, NoiseSchedule};
use lifp_core::latent_io::{generate_synthetic, SynthConfig};
use lifp_core::pruning::compute_prune_map;

fn denoise(c: &mut Criterion) {
    let suite = SuiteConfig::default();
    let mut group = c.benchmark_group("denoise");
    group.sample_size(10);
    for rho in [0.0, 0.5] {
        let video = generate_synthetic(&SynthConfig { redundancy: rho, ..suite.synth.clone() }).unwrap();
        let map = compute_prune_map(&video, &suite.prune).unwrap();
        let model: DitModel = DitModel::new(&suite.model, video.token_dim()).unwrap();
        let sched = NoiseSchedule::for_config(&suite.model).unwrap();
        group.bench_function(BenchmarkId::new("baseline", rho), |b| {
            b.iter(|| black_box(denoise_chunked(&model, &video, &sched, None).unwrap()))
        });
        group.bench_function(BenchmarkId::new("pruned", rho), |b| {
            b.iter(|| black_box(denoise_chunked(&model, &video, &sched, Some(&map)).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, denoise);
criterion_main!(benches);
