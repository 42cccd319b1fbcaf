use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hvm_core::evalkit::{tsne, TsneOptions};
use hvm_core::numcore::{kernels, Tensor};
use hvm_core::par::{self, Exec};
use hvm_core::rng::rng_from;
use hvm_core::stmae::{sample_mask, ModelConfig, ModelParts, StMae};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul_256");
    let n = 256;
    let a = Tensor::randn([n, n], 1.0, &mut rng_from(0, &[0])).into_data();
    let b = Tensor::randn([n, n], 1.0, &mut rng_from(1, &[0])).into_data();
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| kernels::matmul(exec, black_box(&a), black_box(&b), n, n, n))
        });
    }
    group.finish();
}

fn batch_gradients(c: &mut Criterion) {
    let mut group = c.benchmark_group("pretrain_batch_8");
    group.sample_size(10);
    let config = ModelConfig::desk();
    let model = StMae::new(config, ModelParts::PRETRAIN, 0).unwrap();
    let g = config.geometry;
    let clips: Vec<Tensor> = (0..8)
        .map(|i| Tensor::uniform([g.frames, g.channels, g.height, g.width], 0.5, &mut rng_from(i, &[1])))
        .collect();
    let plans: Vec<_> = (0..8)
        .map(|i| sample_mask(g.num_tokens(), config.mask_ratio, &mut rng_from(i, &[2])).unwrap())
        .collect();
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| par::map_indexed(exec, clips.len(), |i| model.pretrain_step(&clips[i], &plans[i]).unwrap().0))
        });
    }
    group.finish();
}

fn tsne_embedding(c: &mut Criterion) {
    let mut group = c.benchmark_group("tsne_300");
    group.sample_size(10);
    let x = Tensor::randn([300, 16], 1.0, &mut rng_from(3, &[0]));
    for (name, exec) in MODES {
        let opts = TsneOptions {
            iters: 100,
            exaggeration_iters: 50,
            exec,
            ..TsneOptions::default()
        };
        group.bench_function(BenchmarkId::from_parameter(name), |bench| bench.iter(|| tsne(black_box(&x), &opts).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, matmul, batch_gradients, tsne_embedding);
criterion_main!(benches);
