use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trackgp::control::{Gains, InverseModelSlot};
use trackgp::gp::exact::log_marginal_likelihood_grad;
use trackgp::gp::{kernel_matrix_with, Hyperparameters, SeArdKernel};
use trackgp::kinematics::VehicleParams;
use trackgp::par::Exec;
use trackgp::sim::{
    make_circle, make_figure8, rollout_batch, PlantSpec, RolloutJob, SlipPlantConfig,
};
use trackgp::terrain3d::SlipPlaneWorld;

const MODES: [(&str, Exec); 2] = [
    ("sequential", Exec::Sequential),
    ("parallel", Exec::Parallel),
];

fn inputs(n: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x: DMatrix<f64> = DMatrix::from_fn(n, 6, |_, _| rng.random_range(-1.0..1.0));
    let y = DVector::from_fn(n, |i, _| x[(i, 0)].sin() + x[(i, 3)] * x[(i, 5)]);
    (x, y)
}

fn kernel(c: &mut Criterion) {
    let k = SeArdKernel::new(&[0.8, 1.1, 0.6, 1.4, 0.9, 1.0], 1.3);
    let mut g = c.benchmark_group("kernel_matrix");
    for n in [500, 2000] {
        let (x, _) = inputs(n);
        for (name, exec) in MODES {
            g.bench_with_input(BenchmarkId::new(name, n), &x, |b, x| {
                b.iter(|| kernel_matrix_with(exec, &k, x, x))
            });
        }
    }
    g.finish();
}

fn likelihood_gradient(c: &mut Criterion) {
    let h = Hyperparameters::new(SeArdKernel::new(&[0.8, 1.1, 0.6, 1.4, 0.9, 1.0], 1.3), 0.01);
    let mut g = c.benchmark_group("lml_gradient");
    g.sample_size(10);
    for n in [300, 1000] {
        let (x, y) = inputs(n);
        for (name, exec) in MODES {
            g.bench_with_input(BenchmarkId::new(name, n), &(&x, &y), |b, (x, y)| {
                b.iter(|| log_marginal_likelihood_grad(x, y, &h, exec).unwrap())
            });
        }
    }
    g.finish();
}

fn rollouts(c: &mut Criterion) {
    let params = VehicleParams::default();
    let plant = PlantSpec::Slip(SlipPlantConfig {
        world: SlipPlaneWorld {
            slope_alpha: 35f64.to_radians(),
            base_slip: 0.1,
            ..SlipPlaneWorld::default()
        },
        noise_sigma: 5e-4,
        ..SlipPlantConfig::default()
    });
    let trajs = [
        Arc::new(make_figure8(2.0, 800, params.sample_time).unwrap()),
        Arc::new(make_circle(1.5, 600, params.sample_time).unwrap()),
    ];
    let jobs: Vec<RolloutJob> = (0..16)
        .map(|i| RolloutJob {
            trajectory: trajs[i % 2].clone(),
            slot: InverseModelSlot::NominalSecond,
            gains: Gains::default(),
            params,
            plant: plant.clone(),
            seed: i as u64,
        })
        .collect();
    let mut g = c.benchmark_group("rollout_batch");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new(name, jobs.len()), |b| {
            b.iter(|| rollout_batch(&jobs, exec))
        });
    }
    g.finish();
}

criterion_group!(benches, kernel, likelihood_gradient, rollouts);
criterion_main!(benches);
