use criterion::{BenchmarkId, Criterion, Throughput};
use nlbp_bench::noise_frame;
use nlbp_core::{IntegralImage, Rect};
use std::hint::black_box;

pub fn bench(c: &mut Criterion) {
    let mut g = c.benchmark_group("integral");
    for (w, h) in [(320, 240), (640, 480)] {
        let frame = noise_frame(1, w, h);
        g.throughput(Throughput::Elements((w * h) as u64));
        g.bench_with_input(BenchmarkId::new("build", format!("{w}x{h}")), &frame, |b, f| b.iter(|| IntegralImage::new(black_box(f))));
    }
    g.finish();

    let ii = IntegralImage::new(&noise_frame(2, 640, 480));
    c.bench_function("integral/rect_sum", |b| b.iter(|| ii.rect_sum(black_box(Rect::new(17, 33, 120, 40))).unwrap()));
}
