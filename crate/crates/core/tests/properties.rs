use landau_core::diagnostics::{kde_density, Metric};
use landau_core::dynamics::{entropy_rate, velocity_from_scores, BlobBandwidth};
use landau_core::ensemble::ParticleEnsemble;
use landau_core::experiment::{
    parse_config, render_config, ExperimentConfig, InitialCondition, SbtmConfig, SolverConfig, TrainModeConfig,
};
use landau_core::kernel::CollisionKernel;
use proptest::prelude::*;

fn vector(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, d)
}

fn ensemble(max_n: usize) -> impl Strategy<Value = ParticleEnsemble> {
    (1usize..5, 2usize..max_n).prop_flat_map(|(d, n)| {
        prop::collection::vec(-3.0f64..3.0, n * d).prop_map(move |x| ParticleEnsemble::new(d, x).unwrap())
    })
}

fn gamma() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), Just(-3.0), -3.0f64..1.0]
}

/// Clamp to the admissible range for dimension d.
fn admissible(g: f64, d: usize) -> f64 {
    g.max(-(d as f64) - 1.0)
}

proptest! {
    #[test]
    fn kernel_is_psd_and_annihilates_its_argument(
        (z, y) in (1usize..6).prop_flat_map(|d| (vector(d), vector(d))),
        g in gamma(),
    ) {
        let d = z.len();
        let g = admissible(g, d);
        let k = CollisionKernel::new(d, g, 1.0).unwrap();
        let a = k.eval(&z);
        let scale = a.abs().max().max(1.0);
        let az = &a * nalgebra::DVector::from_column_slice(&z);
        prop_assert!(az.amax() <= 1e-12 * scale * z.iter().map(|v| v.abs()).fold(1.0, f64::max));
        let yv = nalgebra::DVector::from_column_slice(&y);
        let quad = yv.dot(&(&a * &yv));
        prop_assert!(quad >= -1e-12 * scale * yv.norm_squared());
        prop_assert!((&a - a.transpose()).amax() == 0.0);
    }

    #[test]
    fn kernel_is_homogeneous(
        z in (1usize..6).prop_flat_map(vector),
        g in gamma(),
        lambda in 0.1f64..10.0,
    ) {
        prop_assume!(z.iter().map(|v| v * v).sum::<f64>() > 1e-4);
        let g = admissible(g, z.len());
        let k = CollisionKernel::new(z.len(), g, 1.0).unwrap();
        let scaled: Vec<f64> = z.iter().map(|v| lambda * v).collect();
        let lhs = k.eval(&scaled);
        let rhs = k.eval(&z) * lambda.powf(g + 2.0);
        prop_assert!((&lhs - &rhs).amax() <= 1e-10 * rhs.amax().max(1e-300));
    }

    #[test]
    fn velocity_conserves_momentum_and_dissipates_entropy(
        e in ensemble(40),
        g in gamma(),
        seed in any::<u64>(),
    ) {
        let (n, d) = (e.len(), e.dim());
        let mut rng = landau_core::sampling::SimRng::new(seed);
        let mut s = vec![0.0; n * d];
        rng.fill_standard_normal(&mut s);
        let g = admissible(g, d);
        let k = CollisionKernel::new(d, g, 1.0).unwrap();
        let v = velocity_from_scores(&e, &k, &s).unwrap();
        let scale = v.max_abs().max(1.0);
        prop_assert!(v.total().iter().all(|t| t.abs() <= 1e-12 * scale * n as f64));
        let rate = entropy_rate(&s, &v);
        let s_max = s.iter().map(|x| x.abs()).fold(0.0, f64::max);
        prop_assert!(rate <= 1e-12 * scale * s_max.max(1.0) * d as f64);
    }

    #[test]
    fn moments_are_consistent(e in ensemble(60), shift in -2.0f64..2.0) {
        let m = e.moments();
        prop_assert_eq!(m.energy_times_two, m.second_moment.trace());
        prop_assert!(m.second_moment.symmetric_eigenvalues().min() >= -1e-12);
        let moved = ParticleEnsemble::new(e.dim(), e.as_slice().iter().map(|x| x + shift).collect()).unwrap();
        let mm = moved.moments();
        for k in 0..e.dim() {
            prop_assert!((mm.momentum[k] - m.momentum[k] - shift).abs() <= 1e-12);
        }
        // The centred covariance does not see a shift.
        prop_assert!((mm.covariance() - m.covariance()).amax() <= 1e-9);
    }

    #[test]
    fn kde_is_nonnegative_and_pure(e in ensemble(50), x in vector(4)) {
        prop_assume!(e.moments().covariance().determinant() > 1e-6);
        let x = &x[..e.dim()];
        let a = kde_density(&e, x).unwrap();
        let b = kde_density(&e, x).unwrap();
        prop_assert!(a >= 0.0 && a.is_finite());
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn config_round_trips(c in config()) {
        let text = render_config(&c);
        let back = parse_config(&text).unwrap();
        prop_assert_eq!(back, c);
    }
}

fn config() -> impl Strategy<Value = ExperimentConfig> {
    let solver = prop_oneof![
        (
            prop::collection::vec(1usize..200, 1..3),
            1e-5f64..1e-2,
            1usize..50,
            0.01f64..1.0,
            any::<bool>(),
        )
            .prop_map(|(hidden, lr, steps, alpha, adaptive)| {
                SolverConfig::Sbtm(SbtmConfig {
                    hidden,
                    learning_rate: lr,
                    steps,
                    alpha,
                    train_mode: if adaptive { TrainModeConfig::Adaptive } else { TrainModeConfig::Fixed },
                    ..SbtmConfig::defaults(false)
                })
            }),
        Just(SolverConfig::Blob { bandwidth: BlobBandwidth::PerStep }),
        (0.01f64..1.0).prop_map(|h| SolverConfig::Blob { bandwidth: BlobBandwidth::Fixed(h) }),
    ];
    let metrics = prop::sample::subsequence(
        vec![
            Metric::Cov11,
            Metric::CovErrSqFrobenius,
            Metric::EntropyRate,
            Metric::MomentumDrift,
            Metric::EnergyDrift,
        ],
        1..5,
    );
    (
        1usize..5,
        prop_oneof![Just(0.0), Just(-3.0), -2.0f64..1.0],
        2usize..10_000,
        any::<u64>(),
        prop_oneof![Just(0.01), Just(0.05), Just(0.25), Just(1.0)],
        1usize..500,
        solver,
        metrics,
    )
        .prop_flat_map(|(d, gamma, n, seed, dt, steps, solver, metrics)| {
            (
                vector(d),
                prop::collection::vec(0.1f64..3.0, d),
                0.1f64..2.0,
                0usize..=steps,
            )
                .prop_map(move |(mean, variances, b_const, snap)| ExperimentConfig {
                    name: format!("cfg{seed}"),
                    d,
                    gamma: admissible(gamma, d),
                    b_const,
                    n,
                    seed,
                    t0: 0.0,
                    t_end: steps as f64 * dt,
                    dt,
                    initial: InitialCondition::Gaussian { mean, variances },
                    solver: solver.clone(),
                    metrics: metrics.clone(),
                    snapshots: vec![snap as f64 * dt],
                    output: format!("runs/cfg{seed}").into(),
                })
        })
}
