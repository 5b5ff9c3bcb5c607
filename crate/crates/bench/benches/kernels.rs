use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use evofuse_core::attention::{cross_dimensional_embed, Tokens};
use evofuse_core::enhancer::discriminative_enhance;
use evofuse_core::evo::{self, SeparableObjective};
use evofuse_core::grid::sobel_gradient;
use evofuse_core::losses::DecoSlot;
use evofuse_core::metrics;
use evofuse_core::pipeline::{
    analytic_gradient, inner_optimize, FusionParams, InnerConfig, PreparedPair, Terms,
};
use evofuse_core::sample::synthetic_pair;
use evofuse_core::{EvoConfig, FeatureMap, Genome, Image};

fn random_image(seed: u64, side: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(side, side, |_, _| rng.gen::<f64>()).unwrap()
}

fn image_kernels(c: &mut Criterion) {
    let a = random_image(1, 64);
    let b = random_image(2, 64);
    let f = random_image(3, 64);
    c.bench_function("sobel 64x64", |bch| bch.iter(|| sobel_gradient(black_box(&a))));
    c.bench_function("ssim 64x64", |bch| {
        bch.iter(|| metrics::metric_ssim(black_box(&a), black_box(&b)).unwrap())
    });
    c.bench_function("vif 64x64", |bch| bch.iter(|| metrics::vif(black_box(&f), black_box(&a)).unwrap()));
    c.bench_function("qabf 64x64", |bch| {
        bch.iter(|| metrics::metric_qabf(black_box(&f), &a, &b).unwrap())
    });
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let fm = FeatureMap::new(8, 32, 32, (0..8 * 32 * 32).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
    c.bench_function("enhance 8x32x32", |bch| bch.iter(|| discriminative_enhance(black_box(&fm))));
}

fn attention(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut tokens = |rows: usize| {
        Tokens::new(rows, 16, (0..rows * 16).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    };
    let (q, k, v) = (tokens(64), tokens(256), tokens(256));
    c.bench_function("cross attention 64x256 d16", |bch| {
        bch.iter(|| cross_dimensional_embed(black_box(&q), &k, &v).unwrap())
    });
}

fn fusion(c: &mut Criterion) {
    let prep = PreparedPair::new(synthetic_pair("bench", 1, 64, 64).unwrap()).unwrap();
    let w = vec![0.1; 16];
    let terms = Terms { w_int: 1.0, w_grad: 1.0 };
    c.bench_function("analytic gradient 64x64 grid 4", |bch| {
        bch.iter(|| analytic_gradient(&prep, black_box(&w), 4, terms).unwrap())
    });
    let inner = InnerConfig { steps: 1, ..InnerConfig::default() };
    let init = FusionParams::initial(&inner).unwrap();
    let deco = DecoSlot::default();
    let mut group = c.benchmark_group("inner");
    group.sample_size(10);
    group.bench_function("one step 64x64", |bch| {
        bch.iter(|| inner_optimize(&init, &prep, &[1.0; 7], &deco, inner.fd_step).unwrap())
    });
    group.finish();
}

fn genetic(c: &mut Criterion) {
    let config = EvoConfig::standard(0);
    let objective = SeparableObjective::random(&config.bounds, 0);
    c.bench_function("evo run 5x5 separable", |bch| {
        bch.iter(|| evo::run(&config, |g: &Genome| Ok(objective.eval(&g.weights))).unwrap())
    });
}

criterion_group!(benches, image_kernels, attention, fusion, genetic);
criterion_main!(benches);
