use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sphere_cl::geometry::EmbeddingBatch;
use sphere_cl::kernels::KernelSpec;
use sphere_cl::losses::{evaluate, LossSpec, Variant};
use sphere_cl::optimize::{
    descend, optimize_free_embeddings, verify_simplex_theorem, OptimizerConfig,
};
use sphere_cl::sampling::sample_uniform_sphere;

#[test]
fn simplex_is_below_random_configurations() {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let g = KernelSpec::Gaussian { t: 1.0 };
    for (m, d) in [(3, 4), (4, 3), (5, 8)] {
        let s = EmbeddingBatch::regular_simplex(m, d).unwrap();
        let mut specs: Vec<LossSpec> = Variant::NAMED
            .iter()
            .map(|&v| LossSpec::named(v, 0.5).unwrap())
            .collect();
        specs.push(LossSpec::kcl(g, g, 1.0).unwrap());
        for spec in specs {
            let spec = spec.with_symmetric(true);
            let optimum = evaluate(&spec, &s, &s).unwrap();
            let mut margin = f64::INFINITY;
            for _ in 0..1000 {
                let u = sample_uniform_sphere(d, m, &mut rng).unwrap();
                let v = sample_uniform_sphere(d, m, &mut rng).unwrap();
                margin = margin.min(evaluate(&spec, &u, &v).unwrap() - optimum);
            }
            assert!(
                margin > 0.0,
                "{:?} M={m} d={d}: margin {margin}",
                spec.variant()
            );
        }
    }
}

#[test]
fn logarithmic_kernels_recover_the_simplex() {
    let log = KernelSpec::Logarithmic { s: 1.0, beta: 1.0 };
    let spec = LossSpec::kcl(log, log, 1.0).unwrap().with_symmetric(true);
    for (m, d) in [(2, 2), (3, 4), (4, 8), (8, 16)] {
        let v = verify_simplex_theorem(&spec, m, d, &OptimizerConfig::default(), 1e-3).unwrap();
        assert!(v.passed, "M={m} d={d}: {v:?}");
    }
}

#[test]
fn trajectories_are_reproducible_and_unit_norm() {
    let spec = LossSpec::simclr(0.5).unwrap().with_symmetric(true);
    let cfg = OptimizerConfig {
        steps: 800,
        seed: 3,
        ..Default::default()
    };
    let a = optimize_free_embeddings(&spec, 5, 6, &cfg).unwrap();
    let b = optimize_free_embeddings(&spec, 5, 6, &cfg).unwrap();
    assert_eq!(a.best.trajectory, b.best.trajectory);
    for i in 0..5 {
        assert!((a.best.u.row(i).norm() - 1.0).abs() < 1e-12);
        assert!((a.best.v.row(i).norm() - 1.0).abs() < 1e-12);
    }
    let other = optimize_free_embeddings(&spec, 5, 6, &OptimizerConfig { seed: 4, ..cfg }).unwrap();
    assert_ne!(a.best.trajectory, other.best.trajectory);
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let spec = LossSpec::dcl(1.0).unwrap().with_symmetric(true);
    let cfg = OptimizerConfig {
        steps: 400,
        restarts: 4,
        ..Default::default()
    };
    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let four = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap();
    let a = one.install(|| optimize_free_embeddings(&spec, 4, 4, &cfg).unwrap());
    let b = four.install(|| optimize_free_embeddings(&spec, 4, 4, &cfg).unwrap());
    assert_eq!(a, b);
}

#[test]
fn descent_from_a_rotated_optimum_stays_put() {
    let spec = LossSpec::dhel(0.5).unwrap().with_symmetric(true);
    let s = EmbeddingBatch::regular_simplex(3, 3).unwrap();
    let q = nalgebra::Rotation3::from_euler_angles(0.3, -1.1, 2.0)
        .matrix()
        .clone_owned();
    let q = nalgebra::DMatrix::from_fn(3, 3, |i, j| q[(i, j)]);
    let r = s.transform(&q).unwrap();
    let run = descend(&spec, &r, &r, &OptimizerConfig::default()).unwrap();
    assert!(run.converged);
    assert!(run.steps_taken <= 1);
}
