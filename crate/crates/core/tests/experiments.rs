use dpnsim::experiment::{
    reference_network, run_experiment, run_trial, ExperimentConfig, FULL_SAMPLE_COUNTS,
};
use dpnsim::model::{Cpt, DpnModel, ParentRef, Role, Variable};
use dpnsim::rng::trial_seed;
use dpnsim::sampler::Algorithm;

fn deterministic_sensor() -> DpnModel {
    let id: Vec<Vec<f64>> = (0..3)
        .map(|i| (0..3).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let vars = vec![
        Variable::new(0, "X", Role::State, 3),
        Variable::new(1, "E", Role::Evidence, 3),
    ];
    DpnModel::new(
        vars,
        vec![
            Cpt::root(0, vec![0.2, 0.3, 0.5]),
            Cpt::new(1, vec![ParentRef::current(0)], id.clone()),
        ],
        vec![
            Cpt::new(
                0,
                vec![ParentRef::previous(0)],
                vec![
                    vec![0.6, 0.3, 0.1],
                    vec![0.2, 0.5, 0.3],
                    vec![0.1, 0.1, 0.8],
                ],
            ),
            Cpt::new(1, vec![ParentRef::current(0)], id),
        ],
    )
    .unwrap()
}

#[test]
fn exact_sensor_makes_er_error_free() {
    let m = deterministic_sensor();
    for n in [1, 7, 50] {
        let r = run_trial(Algorithm::Er, &m, n, 20, 42).unwrap();
        assert!(r.errors.iter().all(|&e| e == 0.0), "{:?}", r.errors);
        let r = run_trial(Algorithm::ErSof, &m, n, 20, 42).unwrap();
        assert!(r.errors.iter().all(|&e| e == 0.0));
    }
}

#[test]
fn trials_are_reproducible() {
    let m = reference_network();
    for alg in Algorithm::ALL {
        assert_eq!(
            run_trial(alg, &m, 30, 15, 9).unwrap(),
            run_trial(alg, &m, 30, 15, 9).unwrap()
        );
    }
}

#[test]
fn small_lw_populations_die_out() {
    let m = reference_network();
    let pinned = (0..50u64)
        .filter(|&s| {
            let r = run_trial(Algorithm::Lw, &m, 25, 50, trial_seed(77, s as usize)).unwrap();
            r.first_extinction()
                .is_some_and(|t0| r.errors[t0..].iter().all(|&e| e == 1.0))
        })
        .count();
    assert!(pinned >= 45, "{pinned}/50");
}

/// The grid reuses the per-trial data, so each block must equal the trials
/// scored one by one from the same trial seeds.
#[test]
fn experiment_blocks_match_independent_trials() {
    let m = reference_network();
    let config = ExperimentConfig {
        algorithms: vec![Algorithm::Lw, Algorithm::ErSof],
        sample_counts: vec![10, 40],
        horizon: 12,
        runs: 5,
        master_seed: 3,
    };
    let mut seen = Vec::new();
    let series = run_experiment(&m, &config, |b| {
        seen.push((b.algorithm, b.n_samples));
        Ok(())
    })
    .unwrap();
    assert_eq!(
        seen,
        vec![
            (Algorithm::Lw, 10),
            (Algorithm::Lw, 40),
            (Algorithm::ErSof, 10),
            (Algorithm::ErSof, 40)
        ]
    );
    for block in &series.blocks {
        for (i, trial) in block.trials.iter().enumerate() {
            let alone =
                run_trial(block.algorithm, &m, block.n_samples, 12, trial_seed(3, i)).unwrap();
            assert_eq!(&alone, trial);
        }
        assert!(block.mean.iter().all(|&e| (0.0..=1.0).contains(&e)));
        assert!(block
            .extinct_fraction
            .iter()
            .all(|&f| (0.0..=1.0).contains(&f)));
    }
    let lw = series.block(Algorithm::Lw, 10).unwrap();
    assert!(lw.extinct_fraction.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn single_run_series_is_that_trial() {
    let m = reference_network();
    let config = ExperimentConfig {
        algorithms: vec![Algorithm::Sof],
        sample_counts: vec![20],
        horizon: 6,
        runs: 1,
        master_seed: 8,
    };
    let series = run_experiment(&m, &config, |_| Ok(())).unwrap();
    let trial = run_trial(Algorithm::Sof, &m, 20, 6, trial_seed(8, 0)).unwrap();
    let b = &series.blocks[0];
    assert_eq!(b.mean, trial.errors);
    assert!(b.stderr.iter().all(|&s| s == 0.0));
}

#[test]
fn full_grid_ordering_at_final_slice() {
    let m = reference_network();
    let mut config = ExperimentConfig::desk_scale(20_260_101);
    config.sample_counts = FULL_SAMPLE_COUNTS.to_vec();
    let series = run_experiment(&m, &config, |_| Ok(())).unwrap();
    let at = |a, n| series.block(a, n).unwrap().mean[50];
    for n in FULL_SAMPLE_COUNTS {
        assert!(at(Algorithm::ErSof, n) <= at(Algorithm::Er, n), "N={n}");
        assert!(at(Algorithm::Sof, n) <= at(Algorithm::Lw, n), "N={n}");
    }
    for n in [25, 100, 1000] {
        assert!(at(Algorithm::ErSof, n) <= at(Algorithm::Sof, n), "N={n}");
    }
}
