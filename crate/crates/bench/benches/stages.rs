use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use tlsprep_bench::{segment, SAMPLE_RATE};
use tlsprep_core::{
    apply_shift, fcp_weights, gcc_phat, stack_frames, stft, GccPhatOptions, MflfConfig, StftConfig,
};

const SECONDS: [f64; 3] = [1.0, 3.0, 10.0];

fn bench_stft(c: &mut Criterion) {
    let cfg = StftConfig::default();
    let mut group = c.benchmark_group("stft");
    for s in SECONDS {
        let seg = segment(s, 0, 1);
        group.throughput(Throughput::Elements(seg.farfield.len() as u64));
        group.bench_with_input(BenchmarkId::from_parameter(s), &seg.farfield, |b, x| {
            b.iter(|| stft(black_box(x), SAMPLE_RATE, &cfg).unwrap())
        });
    }
    group.finish();
}

fn bench_gcc_phat(c: &mut Criterion) {
    let opts = GccPhatOptions::with_max_lag(8000);
    let mut group = c.benchmark_group("gcc_phat");
    for s in SECONDS {
        let seg = segment(s, 1234, 2);
        group.throughput(Throughput::Elements(seg.farfield.len() as u64));
        group.bench_with_input(BenchmarkId::from_parameter(s), &seg, |b, seg| {
            b.iter(|| {
                gcc_phat(black_box(&seg.close_talk), black_box(&seg.farfield), &opts).unwrap()
            })
        });
    }
    group.finish();
}

fn bench_solve_mflf(c: &mut Criterion) {
    let cfg = StftConfig::default();
    let mflf = MflfConfig::default();
    let mut group = c.benchmark_group("solve_mflf");
    for s in SECONDS {
        let seg = segment(s, 1234, 3);
        let s2 = apply_shift(&seg.close_talk, -seg.delay, seg.farfield.len());
        let spec_s2 = stft(&s2, SAMPLE_RATE, &cfg).unwrap();
        let spec_y = stft(&seg.farfield, SAMPLE_RATE, &cfg).unwrap();
        let stacked = stack_frames(&spec_s2, mflf.taps).unwrap();
        let weights = fcp_weights(&spec_y, mflf.xi).unwrap();
        group.throughput(Throughput::Elements(spec_y.n_frames() as u64));
        group.bench_function(BenchmarkId::from_parameter(s), |b| {
            b.iter(|| {
                tlsprep_core::solve_mflf(black_box(&stacked), &spec_y, &weights, mflf.diag_load)
                    .unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_stft, bench_gcc_phat, bench_solve_mflf);
criterion_main!(benches);
