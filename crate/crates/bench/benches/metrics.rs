use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use tamperscope::imaging::binarize;
use tamperscope::metrics::{auc, iou, pixel_auc, ScoredSample};
use tamperscope::synth::SplitMix;
use tamperscope_bench::map_and_mask;

fn pixel_metrics(c: &mut Criterion) {
    let mut g = c.benchmark_group("pixel");
    for side in [256usize, 1024] {
        let (map, gt) = map_and_mask(side as u64, side, side);
        let pred = binarize(&map, 0.5);
        g.bench_with_input(BenchmarkId::new("pixel_auc", side), &side, |b, _| {
            b.iter(|| pixel_auc(&map, &gt).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("iou", side), &side, |b, _| {
            b.iter(|| iou(&pred, &gt).unwrap())
        });
    }
    g.finish();
}

fn image_auc(c: &mut Criterion) {
    let mut rng = SplitMix::new(1);
    let samples: Vec<ScoredSample> = (0..10_000)
        .map(|i| ScoredSample::new(i.to_string(), rng.next_f64(), (i % 2) as u8))
        .collect();
    c.bench_function("auc-10k", |b| b.iter(|| auc(&samples).unwrap()));
}

criterion_group!(benches, pixel_metrics, image_auc);
criterion_main!(benches);
