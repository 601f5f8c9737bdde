use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use itlm_bench::{batch, pixels, planes};
use itlm_core::forest::{fit_forest, predict_forest, ForestHyper};
use itlm_core::nn::{Arch, Mode, ResUnetParams, Tape, Task};
use itlm_core::tiles::{extract_tile_from, mosaic, plan_tiles};

fn resunet(c: &mut Criterion) {
    let mut g = c.benchmark_group("resunet");
    g.sample_size(10);
    let model = ResUnetParams::<f32>::init(Arch::new(Task::Clp, 23), 1);
    let x = batch(8, 23, 64, 2);
    g.bench_function("forward 8x64x64", |b| b.iter(|| model.predict(black_box(x.clone())).unwrap()));

    let labels = vec![1u8; 8 * 64 * 64];
    let mask = vec![true; 8 * 64 * 64];
    g.bench_function("forward+backward 8x64x64", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let xv = tape.leaf(x.clone());
            let f = model.forward(&mut tape, xv, Mode::Train(None)).unwrap();
            let loss = tape.cross_entropy_masked(f.out, &labels, &mask).unwrap();
            tape.backward(loss).unwrap();
            black_box(tape.grad(f.params[0]).map(|g| g[0]))
        })
    });
    g.finish();
}

fn tiles(c: &mut Criterion) {
    let mut g = c.benchmark_group("tiles");
    let (nr, nc) = (256, 256);
    let data = planes(23, nr, nc, 3);
    let refs: Vec<&[f64]> = data.iter().map(|p| p.as_slice()).collect();
    let plan = plan_tiles(nr, nc, 64, 48).unwrap();
    g.bench_function("extract 23ch 256x256 stride 48", |b| {
        b.iter(|| plan.tiles.iter().map(|t| extract_tile_from(&refs, nr, nc, t)).collect::<Vec<_>>())
    });
    let tiles: Vec<Vec<f64>> = plan.tiles.iter().map(|t| extract_tile_from(&refs[..3], nr, nc, t)).collect();
    g.bench_function("mosaic 3ch 256x256 stride 48", |b| b.iter(|| mosaic(black_box(&tiles), 3, &plan).unwrap()));
    g.finish();
}

fn forest(c: &mut Criterion) {
    let mut g = c.benchmark_group("forest");
    g.sample_size(10);
    let data = pixels(5000, 25, 4);
    let hyper = ForestHyper {
        n_estimators: 8,
        max_depth: 20,
        ..Default::default()
    };
    g.bench_function("fit 8 trees on 5000x25", |b| b.iter(|| fit_forest(black_box(&data), &hyper).unwrap()));
    let fitted = fit_forest(&data, &hyper).unwrap();
    g.bench_function("predict 5000 rows", |b| {
        b.iter_batched(|| data.features.clone(), |x| predict_forest(&fitted, &x).unwrap(), BatchSize::LargeInput)
    });
    g.finish();
}

criterion_group!(benches, resunet, tiles, forest);
criterion_main!(benches);
