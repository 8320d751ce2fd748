use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use sacc_bench::{noise_waveform, random_features, random_spectrogram};
use sacc_core::beamformers::{mvdr_cdr, MvdrConfig};
use sacc_core::combinator::{backward, forward};
use sacc_core::room_sim::MIC_SPACING_M;
use sacc_core::spectral::stft;
use sacc_core::{SaccParams, StftConfig};

fn bench_stft(c: &mut Criterion) {
    let cfg = StftConfig::default();
    let wave = noise_waveform(3 * 16_000, 8, 1);
    c.bench_function("stft_8ch_3s", |b| b.iter(|| stft(&wave, &cfg).unwrap()));
}

fn bench_sacc(c: &mut Criterion) {
    let mut group = c.benchmark_group("sacc");
    let params = SaccParams::init(0, 257, 256);
    for frames in [100, 300] {
        let feats = random_features(frames, 8, 257, 2);
        group.bench_with_input(BenchmarkId::new("forward", frames), &feats, |b, f| {
            b.iter(|| forward(f, &params).unwrap())
        });
        let acts = forward(&feats, &params).unwrap();
        let upstream = Array2::from_elem((frames, 257), 1e-3);
        group.bench_with_input(BenchmarkId::new("backward", frames), &feats, |b, f| {
            b.iter(|| backward(f, &params, &acts, upstream.view()).unwrap())
        });
    }
    group.finish();
}

fn bench_mvdr(c: &mut Criterion) {
    let cfg = StftConfig::default();
    let spec = random_spectrogram(300, 8, 257, 3);
    let mvdr = MvdrConfig::for_ula(8, MIC_SPACING_M);
    c.bench_function("mvdr_cdr_8ch_300_frames", |b| {
        b.iter(|| mvdr_cdr(&spec, &cfg, &mvdr).unwrap())
    });
}

criterion_group!(benches, bench_stft, bench_sacc, bench_mvdr);
criterion_main!(benches);
