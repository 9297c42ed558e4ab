use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use savehr::cohort::{build_cohort, generate_population, Code, ConditionModel, GeneratorConfig, PlantedPair};
use savehr::model::{ModelConfig, SavehrModel};
use savehr::par::Exec;
use savehr::train::{batch_gradients, predict_many, StepCtx};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn generator() -> GeneratorConfig {
    let pairs = vec![PlantedPair { a: Code(3), b: Code(17), weight: 3.0 }];
    GeneratorConfig::new(1000, 50, vec![ConditionModel::synthetic(0, 50, pairs, 0.05)])
}

fn bench_generation(c: &mut Criterion) {
    let cfg = generator();
    let mut group = c.benchmark_group("generate_1000");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(generate_population(1, &cfg, exec).unwrap()))
        });
    }
    group.finish();
}

fn bench_model(c: &mut Criterion) {
    let cfg = generator();
    let streams = generate_population(1, &cfg, Exec::Parallel).unwrap();
    let cohort = build_cohort(&streams, &cfg.conditions[0].cohort_spec(), 7, (0.6, 0.2, 0.2)).unwrap();
    let model = SavehrModel::new(ModelConfig::default(), cohort.vocab.len()).unwrap();
    let batch: Vec<_> = cohort.train.iter().take(64).collect();

    let mut group = c.benchmark_group("batch_gradients_64");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(batch_gradients(&model, &batch, (1.0, 3.0), |_| StepCtx::INFERENCE, exec).unwrap()))
        });
    }
    group.finish();

    let mut group = c.benchmark_group("predict_test_split");
    group.sample_size(20);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(predict_many(&model, &cohort.test, exec).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_generation, bench_model);
criterion_main!(benches);
