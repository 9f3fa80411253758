use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lsrec_core::linalg::Mat;
use lsrec_core::metrics::compute_eer;
use lsrec_core::multitask::{init_multitask, mt_forward, FeedbackRouting, MultiTaskDims};
use lsrec_core::training::{backward_multitask, LossSpec};

fn bench_model() -> lsrec_core::multitask::MultiTaskModel {
    init_multitask(
        MultiTaskDims {
            input: 40,
            cell: 64,
            rproj: 16,
            pproj: 16,
            n_languages: 2,
            n_speakers: 24,
        },
        FeedbackRouting::cell_candidate_both(),
        0.2,
        0.05,
        3,
        None,
        vec!["L0".into(), "L1".into()],
        (0..24).map(|i| format!("S{i:02}")).collect(),
    )
    .unwrap()
}

fn random_frames(t: usize, d: usize, seed: u64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Mat::from_fn(t, d, |_, _| rng.gen_range(-1.0..1.0))
}

fn forward_bench(c: &mut Criterion) {
    let model = bench_model();
    let frames = random_frames(150, 40, 9);
    c.bench_function("mt_forward_150x40_cell64", |b| {
        b.iter(|| mt_forward(black_box(&model), black_box(&frames)).unwrap())
    });
}

fn backward_bench(c: &mut Criterion) {
    let model = bench_model();
    let frames = random_frames(150, 40, 9);
    let loss = LossSpec::default();
    c.bench_function("backward_multitask_150x40_cell64", |b| {
        b.iter(|| {
            backward_multitask(black_box(&model), black_box(&frames), 1, 3, &loss, 1.0).unwrap()
        })
    });
}

fn eer_bench(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let scored: Vec<(f64, bool)> = (0..100_000)
        .map(|_| {
            let target = rng.gen_bool(0.1);
            let mean = if target { 0.8 } else { 0.2 };
            (mean + rng.gen_range(-0.5..0.5), target)
        })
        .collect();
    c.bench_function("compute_eer_100k_trials", |b| {
        b.iter(|| compute_eer(black_box(&scored)).unwrap())
    });
}

criterion_group!(benches, forward_bench, backward_bench, eer_bench);
criterion_main!(benches);
