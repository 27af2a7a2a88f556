use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use msq_bench::gemm_fixture;
use msq_core::kernel::{hetero_gemm, GemmTile};
use msq_core::quant::{build_levels, QuantScheme};
use msq_core::tensor::{make_synthetic, BlobSpec, Matrix2D, Rng};
use msq_core::train::{train, MlpModel, TrainConfig};

fn bench_projection(c: &mut Criterion) {
    let mut group = c.benchmark_group("project");
    for scheme in [
        QuantScheme::FixedPoint { m: 4 },
        QuantScheme::PowerOfTwo { m: 4 },
        QuantScheme::Sp2 { m1: 2, m2: 1 },
    ] {
        let ls = build_levels(scheme, 1.0).unwrap();
        let mut rng = Rng::new(1);
        let weights: Vec<f64> = (0..4096).map(|_| rng.uniform(-1.2, 1.2)).collect();
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("{scheme:?}")),
            &weights,
            |b, ws| {
                b.iter(|| {
                    let mut acc = 0.0;
                    for &w in ws {
                        acc += ls.project(black_box(w));
                    }
                    acc
                })
            },
        );
    }
    group.finish();
}

fn bench_hetero_gemm(c: &mut Criterion) {
    let mut group = c.benchmark_group("hetero_gemm_64x64");
    let (layer, acts) = gemm_fixture(64, 64, 8, 0.6, 7);
    for tile in [GemmTile::new(1, 16, 16, 24), GemmTile::new(4, 16, 16, 32)] {
        group.bench_with_input(
            BenchmarkId::from_parameter(format!(
                "{}x{}x{}+{}",
                tile.bat, tile.blk_in, tile.blk_out_fixed, tile.blk_out_sp2
            )),
            &tile,
            |b, tile| b.iter(|| hetero_gemm(black_box(&acts), black_box(&layer), tile).unwrap()),
        );
    }
    group.finish();
}

fn bench_train_epoch(c: &mut Criterion) {
    let spec = BlobSpec::new(2, 4);
    let ds = make_synthetic(&spec, 256, &mut Rng::new(3)).unwrap();
    let model = MlpModel::new(&[4, 16, 2], &mut Rng::new(4)).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 32,
        learning_rate: 0.05,
        pr_sp2: 2.0 / 3.0,
        fixed_bits: 4,
        sp2_bits: (2, 1),
        act_bits: 4,
        seed: 4,
        quantize: true,
    };
    c.bench_function("train_one_epoch", |b| {
        b.iter(|| train(black_box(&model), black_box(&ds), black_box(&cfg)).unwrap())
    });
}

fn bench_matmul_reference(c: &mut Criterion) {
    let mut rng = Rng::new(5);
    let a = Matrix2D::from_fn(64, 64, |_, _| rng.uniform(-1.0, 1.0));
    let b_ = Matrix2D::from_fn(64, 64, |_, _| rng.uniform(-1.0, 1.0));
    c.bench_function("matmul_f64_64x64", |b| {
        b.iter(|| msq_core::tensor::matmul(black_box(&a), black_box(&b_)).unwrap())
    });
}

criterion_group!(
    benches,
    bench_projection,
    bench_hetero_gemm,
    bench_train_epoch,
    bench_matmul_reference
);
criterion_main!(benches);
