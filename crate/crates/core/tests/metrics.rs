use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use incontext::metrics::{
    ensemble_acc, ensemble_l2, gmm_single_l2, read_reports_from, single_acc, single_l2, vote,
    write_reports_to, MetricName, MetricReport,
};
use incontext::models::{ObservationSet, ProbModelSpec, Targets};
use incontext::nn::Tensor;
use incontext::Error;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gm_query(points: &[Vec<f64>]) -> ObservationSet {
    ObservationSet::unsupervised(Tensor::from_rows(points))
}

fn lr_query(xs: &[f64], ys: &[f64]) -> ObservationSet {
    ObservationSet::new(
        Tensor::from_vec(xs.len(), 1, xs.to_vec()),
        Targets::Real(ys.to_vec()),
    )
    .unwrap()
}

/// LC with one input and two classes: logits `[w0 x, w1 x]`.
fn lc_query(xs: &[f64], ys: &[usize]) -> ObservationSet {
    ObservationSet::new(
        Tensor::from_vec(xs.len(), 1, xs.to_vec()),
        Targets::Class(ys.to_vec()),
    )
    .unwrap()
}

#[test]
fn single_sample_ensemble_equals_single() {
    let spec = ProbModelSpec::lr(1);
    let q = lr_query(&[0.5, -1.0, 2.0], &[1.0, 0.0, 0.3]);
    let s = vec![vec![0.7, -0.1]];
    assert_eq!(
        ensemble_l2(&s, &spec, &q).unwrap(),
        single_l2(&s, &spec, &q).unwrap()
    );
}

#[test]
fn ensemble_averages_before_squaring() {
    let spec = ProbModelSpec::gm(1);
    let q = gm_query(&[vec![1.0]]);
    let s = vec![vec![0.0], vec![2.0]];
    assert_eq!(ensemble_l2(&s, &spec, &q).unwrap(), 0.0);
    assert_eq!(single_l2(&s, &spec, &q).unwrap(), 1.0);
}

#[test]
fn hand_computed_two_by_two() {
    // ŷ = w x + b. Samples (1, 0) and (2, 1); points (x, y) = (1, 1), (2, 0).
    let spec = ProbModelSpec::lr(1);
    let q = lr_query(&[1.0, 2.0], &[1.0, 0.0]);
    let s = vec![vec![1.0, 0.0], vec![2.0, 1.0]];
    // predictions: sample 1 → (1, 2), sample 2 → (3, 5)
    // single: ((0)² + (2)² + (2)² + (5)²) / 4 = 33/4
    assert_relative_eq!(
        single_l2(&s, &spec, &q).unwrap(),
        8.25,
        max_relative = 1e-15
    );
    // ensemble means (2, 3.5): ((1)² + (3.5)²) / 2 = 6.625
    assert_relative_eq!(
        ensemble_l2(&s, &spec, &q).unwrap(),
        6.625,
        max_relative = 1e-15
    );
}

#[test]
fn l2_is_translation_invariant() {
    let spec = ProbModelSpec::lr(1);
    let q = lr_query(&[0.3, 1.2], &[0.4, -0.8]);
    let shifted = lr_query(&[0.3, 1.2], &[3.4, 2.2]);
    let s = vec![vec![0.5, 0.1], vec![-0.2, 0.3]];
    let s_shift: Vec<Vec<f64>> = s.iter().map(|v| vec![v[0], v[1] + 3.0]).collect();
    assert_relative_eq!(
        single_l2(&s, &spec, &q).unwrap(),
        single_l2(&s_shift, &spec, &shifted).unwrap(),
        max_relative = 1e-12
    );
    assert_relative_eq!(
        ensemble_l2(&s, &spec, &q).unwrap(),
        ensemble_l2(&s_shift, &spec, &shifted).unwrap(),
        max_relative = 1e-12
    );
}

#[test]
fn votes_and_ties() {
    assert_eq!(vote(&[0, 0, 1], 2), 0);
    assert_eq!(vote(&[1, 0], 2), 0);
    assert_eq!(vote(&[2, 1, 2, 1], 3), 1);
    assert_eq!(vote(&[2], 3), 2);
}

fn lc_sample(class: usize) -> Vec<f64> {
    // With x > 0 the argmax of [w0 x, w1 x] is the larger weight.
    if class == 0 {
        vec![1.0, -1.0]
    } else {
        vec![-1.0, 1.0]
    }
}

#[test]
fn vote_accuracy_matches_enumeration() {
    let spec = ProbModelSpec::lc(1, 2);
    for y in 0..2usize {
        let q = lc_query(&[1.0], &[y]);
        for n in 1..=3usize {
            for pattern in 0..(1usize << n) {
                let classes: Vec<usize> = (0..n).map(|i| (pattern >> i) & 1).collect();
                let samples: Vec<Vec<f64>> = classes.iter().map(|&c| lc_sample(c)).collect();
                let ones = classes.iter().filter(|&&c| c == 1).count();
                let mode = if 2 * ones > n { 1 } else { 0 };
                let expected = if mode == y { 100.0 } else { 0.0 };
                assert_eq!(
                    ensemble_acc(&samples, &spec, &q).unwrap(),
                    expected,
                    "{classes:?} y={y}"
                );
                let single = 100.0 * classes.iter().filter(|&&c| c == y).count() as f64 / n as f64;
                assert_relative_eq!(
                    single_acc(&samples, &spec, &q).unwrap(),
                    single,
                    max_relative = 1e-15
                );
            }
        }
    }
}

#[test]
fn accuracy_edge_cases() {
    let spec = ProbModelSpec::lc(1, 2);
    let q = lc_query(&[1.0, 2.0, 0.5], &[1, 1, 1]);
    let perfect = vec![lc_sample(1); 4];
    assert_eq!(single_acc(&perfect, &spec, &q).unwrap(), 100.0);
    assert_eq!(ensemble_acc(&perfect, &spec, &q).unwrap(), 100.0);
    let mut r = rng(1);
    let n = 10_000;
    let xs: Vec<f64> = (0..n).map(|_| r.random_range(0.1..1.0)).collect();
    let ys: Vec<usize> = (0..n).map(|_| r.random_range(0..2)).collect();
    let big = lc_query(&xs, &ys);
    let acc = single_acc(&[lc_sample(0)], &spec, &big).unwrap();
    assert!((acc - 50.0).abs() < 1.5, "{acc}");
    assert_eq!(acc, ensemble_acc(&[lc_sample(0)], &spec, &big).unwrap());
}

#[test]
fn gmm_metric() {
    let spec = ProbModelSpec::gmm(1, 2);
    let q = gm_query(&[vec![1.0]]);
    assert_eq!(gmm_single_l2(&[vec![0.0, 2.0]], &spec, &q).unwrap(), 1.0);
    assert!(matches!(
        ensemble_l2(&[vec![0.0, 2.0]], &spec, &q),
        Err(Error::Capability(_))
    ));
    let gm = ProbModelSpec::gm(1);
    let one = ProbModelSpec::gmm(1, 1);
    let q = gm_query(&[vec![1.0], vec![-0.5], vec![2.0]]);
    let s = vec![vec![0.3], vec![1.1]];
    assert_relative_eq!(
        gmm_single_l2(&s, &one, &q).unwrap(),
        single_l2(&s, &gm, &q).unwrap(),
        max_relative = 1e-15
    );
}

#[test]
fn gmm_metric_is_label_permutation_invariant() {
    let spec = ProbModelSpec::gmm(2, 3);
    let q = gm_query(&[vec![0.1, 0.2], vec![-1.0, 2.0], vec![3.0, 0.0]]);
    let mu = [[0.0, 0.0], [1.0, -1.0], [2.5, 0.5]];
    let perms = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let base = gmm_single_l2(&[mu.concat()], &spec, &q).unwrap();
    for p in perms {
        let s: Vec<f64> = p.iter().flat_map(|&k| mu[k]).collect();
        assert_eq!(gmm_single_l2(&[s], &spec, &q).unwrap(), base);
    }
}

#[test]
fn empty_inputs_are_errors() {
    let spec = ProbModelSpec::gm(1);
    let q = gm_query(&[vec![1.0]]);
    assert!(ensemble_l2(&[], &spec, &q).is_err());
    assert!(single_l2(&[vec![0.0]], &spec, &ObservationSet::empty(&spec)).is_err());
    assert!(matches!(
        ensemble_acc(&[vec![0.0]], &spec, &q),
        Err(Error::Capability(_))
    ));
}

#[test]
fn point_estimates_are_insensitive_to_sample_count() {
    let spec = ProbModelSpec::lr(1);
    let q = lr_query(&[0.5, -1.0, 2.0], &[1.0, 0.0, 0.3]);
    let one = vec![vec![0.7, -0.1]];
    let many = vec![vec![0.7, -0.1]; 64];
    for m in [MetricName::EnsembleL2, MetricName::SingleL2] {
        let a = m.compute(&one, &spec, &q).unwrap();
        assert_eq!(a.to_bits(), m.compute(&many, &spec, &q).unwrap().to_bits());
        assert_eq!(
            a.to_bits(),
            m.compute(&many[..32], &spec, &q).unwrap().to_bits()
        );
    }
}

proptest! {
    #[test]
    fn jensen_and_order_invariance(
        samples in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 1..8),
        xs in prop::collection::vec(-2.0f64..2.0, 1..6),
        seed in 0u64..1000,
    ) {
        let spec = ProbModelSpec::lr(1);
        let mut r = rng(seed);
        let ys: Vec<f64> = xs.iter().map(|_| r.random_range(-3.0..3.0)).collect();
        let q = lr_query(&xs, &ys);
        let e = ensemble_l2(&samples, &spec, &q).unwrap();
        let s = single_l2(&samples, &spec, &q).unwrap();
        prop_assert!(e <= s + 1e-12);
        let mut rev = samples.clone();
        rev.reverse();
        prop_assert!((ensemble_l2(&rev, &spec, &q).unwrap() - e).abs() < 1e-12);
        prop_assert!((single_l2(&rev, &spec, &q).unwrap() - s).abs() < 1e-12);
    }
}

fn reports() -> Vec<MetricReport> {
    vec![
        MetricReport {
            task_id: "0".into(),
            estimator: "point".into(),
            objective: "map".into(),
            seed: 3,
            metric: MetricName::EnsembleL2,
            value: Some(0.1 + 0.2),
            s: 32,
        },
        MetricReport {
            task_id: "1".into(),
            estimator: "hmc_multi".into(),
            objective: "-".into(),
            seed: 3,
            metric: MetricName::SingleAcc,
            value: None,
            s: 32,
        },
        MetricReport {
            task_id: "2".into(),
            estimator: "flow".into(),
            objective: "rev".into(),
            seed: 0,
            metric: MetricName::GmmSingleL2,
            value: Some(1e-300),
            s: 1,
        },
    ]
}

#[test]
fn report_csv_round_trips_byte_for_byte() {
    let mut a = Vec::new();
    write_reports_to(&mut a, &reports()).unwrap();
    let back = read_reports_from(a.as_slice()).unwrap();
    assert_eq!(back, reports());
    let mut b = Vec::new();
    write_reports_to(&mut b, &back).unwrap();
    assert_eq!(a, b);
    assert!(String::from_utf8(a)
        .unwrap()
        .starts_with("task_id,estimator,objective,seed,metric,value,s\n"));
}

#[test]
fn corrupt_report_headers_are_rejected() {
    let text = "task,estimator,objective,seed,metric,value,s\n0,a,b,1,single_l2,1.0,32\n";
    assert!(matches!(
        read_reports_from(text.as_bytes()),
        Err(Error::Schema(_))
    ));
    let text = "task_id,estimator,objective,seed,metric,value,s\n0,a,b,1,bogus,1.0,32\n";
    assert!(matches!(
        read_reports_from(text.as_bytes()),
        Err(Error::Schema(_))
    ));
}
