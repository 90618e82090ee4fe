mod integral;

use criterion::{criterion_group, criterion_main};

criterion_group!(benches, integral::bench, codes::bench, scan::bench);
criterion_main!(benches);
