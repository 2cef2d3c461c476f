use criterion::{criterion_group, criterion_main, Criterion};
use gnhmm::enhancer::{enhance_frame, enhance_signal, EnhancerConfig, EnhancerState};
use gnhmm_bench::{complex_frame, composite, frame, noisy_signal};
use std::hint::black_box;

fn per_frame(c: &mut Criterion) {
    let model = composite();
    let cfg = EnhancerConfig::default();
    let y = complex_frame(frame().n_bins(), 0.3);
    let mut state = EnhancerState::new(&cfg, 0.07, 0.07);
    c.bench_function("enhance_frame_550_states", |b| b.iter(|| enhance_frame(black_box(y.view()), &model, &cfg, &mut state).unwrap()));
}

fn one_second(c: &mut Criterion) {
    let model = composite();
    let cfg = EnhancerConfig::default();
    let f = frame();
    let signal = noisy_signal(100);
    let mut group = c.benchmark_group("enhance_signal");
    group.sample_size(10);
    group.bench_function("one_second_550_states", |b| b.iter(|| enhance_signal(black_box(&signal), &f, &model, &cfg, None).unwrap()));
    group.finish();
}

criterion_group!(enhance, per_frame, one_second);
criterion_main!(enhance);
