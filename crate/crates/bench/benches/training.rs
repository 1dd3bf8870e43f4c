use criterion::{criterion_group, criterion_main, Criterion};
use gridlode::diffcore::AdamState;
use gridlode::lode::{elbo_with_grads, impute, train, GradMode, IterationUnit, TrainConfig};
use gridlode_bench::{first_batch, fixture, model};

fn gradients(c: &mut Criterion) {
    let (_, split) = fixture();
    let m = model();
    for mode in [GradMode::Backprop, GradMode::Adjoint] {
        let cfg = TrainConfig {
            grad_mode: mode,
            ..TrainConfig::default()
        };
        let (batch, eps) = first_batch(&split, &cfg);
        let opts = cfg.elbo_options();
        c.bench_function(&format!("elbo_grad_{mode}"), |b| {
            b.iter(|| elbo_with_grads(&m, &batch, &eps, &opts).unwrap())
        });
    }
}

fn step(c: &mut Criterion) {
    let (_, split) = fixture();
    let cfg = TrainConfig {
        iterations: 1,
        iteration_unit: IterationUnit::Batch,
        ..TrainConfig::default()
    };
    c.bench_function("adam_step", |b| {
        b.iter_batched(
            || (model(), AdamState::new(cfg.lr_init)),
            |(mut m, mut adam)| train(&mut m, &mut adam, &split.train, &cfg).unwrap(),
            criterion::BatchSize::LargeInput,
        )
    });
}

fn inference(c: &mut Criterion) {
    let (raw, split) = fixture();
    let m = model();
    let idx = split.eval_records()[0];
    let times: Vec<f64> = (0..1440).map(f64::from).collect();
    let solver = TrainConfig::default().solver;
    c.bench_function("impute_record_1min", |b| {
        b.iter(|| impute(&m, &raw.records[idx], &split.stats()[idx], &times, &solver).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = gradients, step, inference
}
criterion_main!(benches);
