//! Sequential vs rayon execution of the data-parallel kernels.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mesosde::abm::{self, ModelParams};
use mesosde::estimator::{self, PairSet, SdeModel, TransitionPair};
use mesosde::fields::{self, GridSpec};
use mesosde::neural_net::{MlpParams, MlpSpec};
use mesosde::rng::stream_rng;
use mesosde::sde_simulate::{self, SimConfig};
use mesosde::Execution;
use rand::Rng;

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn model() -> SdeModel {
    let mut rng = stream_rng(1, 0);
    let drift = MlpParams::glorot(MlpSpec::new(2, 3, 64, 2).unwrap(), &mut rng);
    let diffusion = MlpParams::glorot(MlpSpec::new(2, 3, 64, 3).unwrap(), &mut rng);
    SdeModel::new(drift, diffusion, 0.12).unwrap()
}

fn pairs(n: usize) -> PairSet {
    let mut rng = stream_rng(2, 0);
    let pairs: Vec<TransitionPair> = (0..n)
        .map(|_| {
            let m0 = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
            let m1 = [m0[0] + rng.random_range(-0.1..0.1), m0[1] + rng.random_range(-0.1..0.1)];
            TransitionPair { m0, m1, dt: 0.12 }
        })
        .collect();
    PairSet::from_pairs(&pairs).unwrap()
}

fn bench(c: &mut Criterion) {
    let model = model();
    let set = pairs(20_000);
    let params = ModelParams::new(30, 1.0, 1.0, 0.0).unwrap();
    let grid = GridSpec::new(41);
    let cfg = SimConfig::new(0.12, 2_000, [0.1, 0.0], 3);

    let mut group = c.benchmark_group("kernels");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::new("mean_nll_20k", name), &exec, |b, &e| {
            b.iter(|| estimator::mean_nll(&model, &set, e))
        });
        group.bench_with_input(BenchmarkId::new("abm_replicates_4", name), &exec, |b, &e| {
            b.iter(|| abm::simulate_replicates(&params, 200.0, 0.12, 5, 4, e).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("field_grid_41", name), &exec, |b, &e| {
            b.iter(|| fields::eval_fields(&model, &grid, e).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("sde_ensemble_8", name), &exec, |b, &e| {
            b.iter(|| sde_simulate::simulate_ensemble(&model, &cfg, 8, e).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
