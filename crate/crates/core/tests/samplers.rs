mod common;

use common::{assignments, joint_of, row_of};
use dpnsim::exact::ExactOracle;
use dpnsim::experiment::average_abs_error;
use dpnsim::model::{
    generate_truth_and_evidence, likelihood, DpnModel, SliceAssignment, SliceKind, SliceRef,
};
use dpnsim::random_model::{random_model, small_shapes, ModelShape};
use dpnsim::reversal::{build_reversed_slice, ReversedModel};
use dpnsim::rng::{stream, trial_seed};
use dpnsim::sampler::{er_step, lw_step, resample, Algorithm, Monitor};

#[test]
fn accumulated_weights_are_products_of_slice_factors() {
    for seed in 0..12u64 {
        let model = random_model(seed, small_shapes()[(seed as usize * 5) % 9]);
        let reversed = ReversedModel::build(&model).unwrap();
        let (_, evidence) = generate_truth_and_evidence(&model, 5, &mut stream(seed, &[1]));
        for alg in [Algorithm::Lw, Algorithm::Er] {
            let monitor = Monitor::with_reversed(&model, alg, Some(reversed.clone()));
            let mut set = monitor.init(40);
            let mut history: Vec<Vec<SliceAssignment>> = Vec::new();
            for (t, e) in evidence.records().iter().enumerate() {
                match alg {
                    Algorithm::Lw => lw_step(&model, &mut set, e, 99),
                    _ => er_step(&model, &reversed, &mut set, e, 99),
                };
                history.push(set.particles.iter().map(|p| p.state.clone()).collect());
                for (i, p) in set.particles.iter().enumerate() {
                    let mut product = 1.0;
                    for s in 0..=t {
                        let prev = (s > 0).then(|| &history[s - 1][i]);
                        let rec = evidence.get(s);
                        let kind = SliceKind::for_time(s);
                        product *= match alg {
                            Algorithm::Lw => {
                                likelihood(&model, kind, prev, rec, &history[s][i]).unwrap()
                            }
                            _ => reversed.slice(kind).evidence_probability(prev, rec),
                        };
                    }
                    let w = p.weight();
                    assert!(
                        (w - product).abs() <= 1e-12 * product.max(1e-300),
                        "{alg} seed {seed} t {t}: {w} vs {product}"
                    );
                }
            }
        }
    }
}

#[test]
fn resampling_algorithms_leave_unit_weights() {
    let model = random_model(3, ModelShape::default());
    let (_, evidence) = generate_truth_and_evidence(&model, 8, &mut stream(3, &[]));
    for alg in [Algorithm::Sof, Algorithm::ErSof] {
        let monitor = Monitor::new(&model, alg).unwrap();
        let mut set = monitor.init(64);
        for e in evidence.records() {
            monitor.step(&mut set, e, 5);
            assert!(set.particles.iter().all(|p| p.weight() == 1.0));
        }
    }
}

/// P(E_t | x_{t-1}) times the reversed state CPT entries equals the
/// original P(x_t, E_t | x_{t-1}) at every assignment.
#[test]
fn reversed_weight_times_proposal_is_the_slice_joint() {
    for (k, shape) in small_shapes().into_iter().enumerate() {
        for seed in 0..3u64 {
            let model = random_model(500 + 10 * k as u64 + seed, shape);
            for kind in [SliceKind::Prior, SliceKind::Transition] {
                let rev = build_reversed_slice(&model, kind).unwrap();
                let all = assignments(model.cards());
                let prevs: Vec<Option<&Vec<usize>>> = match kind {
                    SliceKind::Prior => vec![None],
                    SliceKind::Transition => all.iter().map(Some).collect(),
                };
                for prev in prevs {
                    let prev_sa = prev.map(|p| SliceAssignment::full(p));
                    for cur in &all {
                        let mut ev = SliceAssignment::empty(model.num_vars());
                        for &e in model.evidence_vars() {
                            ev.set(e, cur[e]);
                        }
                        let weight = rev.evidence_probability(prev_sa.as_ref(), &ev);
                        let proposal: f64 = rev
                            .state_cpts()
                            .map(|c| {
                                c.table[row_of(c, model.cards(), prev.map(|p| p.as_slice()), cur)]
                                    [cur[c.child]]
                            })
                            .product();
                        let want = joint_of(
                            model.cpts(kind),
                            model.cards(),
                            prev.map(|p| p.as_slice()),
                            cur,
                        );
                        assert!((weight * proposal - want).abs() < 1e-12);
                    }
                }
                for &s in model.state_vars() {
                    // State CPTs never condition on previous-slice evidence.
                    assert!(rev.cpts.cpts[s]
                        .parents
                        .iter()
                        .all(|p| p.slice == SliceRef::Current || model.variable(p.var).is_state()));
                }
            }
        }
    }
}

#[test]
fn resample_preserves_expected_counts() {
    let weights = [0.5, 2.0, 0.0, 1.5];
    let total: f64 = weights.iter().sum();
    let n = 4;
    let reps = 100_000;
    let mut rng = stream(21, &[]);
    let mut counts = vec![0.0; weights.len()];
    let mut sq = vec![0.0; weights.len()];
    for _ in 0..reps {
        let mut c = vec![0.0; weights.len()];
        for i in resample(&weights, n, &mut rng).unwrap() {
            c[i] += 1.0;
        }
        for i in 0..c.len() {
            counts[i] += c[i];
            sq[i] += c[i] * c[i];
        }
    }
    for (i, &w) in weights.iter().enumerate() {
        let mean = counts[i] / reps as f64;
        let var = sq[i] / reps as f64 - mean * mean;
        let se = (var / reps as f64).sqrt();
        let want = n as f64 * w / total;
        assert!(
            (mean - want).abs() <= 3.0 * se.max(1e-12),
            "index {i}: {mean} vs {want}"
        );
    }
}

/// Every algorithm converges to the exact filter on small random models as
/// N grows.
#[test]
fn estimators_are_consistent_on_small_models() {
    let shapes = [
        ModelShape {
            state_vars: 2,
            evidence_vars: 1,
            max_cardinality: 3,
            zero_probability: 0.0,
        },
        ModelShape {
            state_vars: 3,
            evidence_vars: 2,
            max_cardinality: 3,
            zero_probability: 0.15,
        },
    ];
    for (k, shape) in shapes.into_iter().enumerate() {
        let model: DpnModel = (0..)
            .map(|s| random_model(7000 + 100 * k as u64 + s, shape))
            .find(|m| m.state_space_size() <= 64)
            .unwrap();
        let oracle = ExactOracle::new(&model).unwrap();
        let trials: Vec<_> = (0..20)
            .map(|i| {
                let seed = trial_seed(11, i);
                let (_, ev) = generate_truth_and_evidence(&model, 10, &mut stream(seed, &[]));
                let exact = oracle.marginals(&ev).unwrap();
                (seed, ev, exact)
            })
            .collect();
        for alg in Algorithm::ALL {
            let monitor = Monitor::new(&model, alg).unwrap();
            let errors: Vec<f64> = [1_000, 10_000, 100_000]
                .iter()
                .map(|&n| {
                    trials
                        .iter()
                        .map(|(seed, ev, exact)| {
                            average_abs_error(&monitor.run(ev, n, *seed)[10], &exact[10])
                        })
                        .sum::<f64>()
                        / trials.len() as f64
                })
                .collect();
            assert!(
                errors[1] <= errors[0] && errors[2] <= errors[1] && errors[2] < 0.01,
                "{alg} model {k}: {errors:?}"
            );
        }
    }
}
