#![allow(clippy::needless_range_loop)]

use approx::assert_relative_eq;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use incontext::baselines::{
    hmc, hmc_target, langevin, langevin_step, leapfrog, optimize_mle, random_baseline,
    true_posterior_samples, ChainConfig,
};
use incontext::models::{
    exact_posterior, sample_data, sample_prior, ObservationSet, ProbModelSpec, Targets,
};
use incontext::Error;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gm_data(d: usize, k: usize, seed: u64) -> (ProbModelSpec, ObservationSet) {
    let spec = ProbModelSpec::gm(d);
    let mut r = rng(seed);
    let theta = sample_prior(&spec, &mut r);
    let data = sample_data(&spec, &theta, k, &mut r).unwrap();
    (spec, data)
}

fn column(samples: &[Vec<f64>], j: usize) -> Vec<f64> {
    samples.iter().map(|s| s[j]).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
}

/// Standard error of the mean of a correlated series via 50 batch means.
fn batch_se(v: &[f64]) -> f64 {
    let b = 50;
    let len = v.len() / b;
    let means: Vec<f64> = (0..b).map(|i| mean(&v[i * len..(i + 1) * len])).collect();
    (var(&means) * b as f64 / (b - 1) as f64 / b as f64).sqrt()
}

#[test]
fn random_baseline_is_prior_sampling() {
    let spec = ProbModelSpec::lc(3, 2);
    let a = random_baseline(&spec, 5, &mut rng(1));
    let mut r = rng(1);
    let b: Vec<Vec<f64>> = (0..5).map(|_| sample_prior(&spec, &mut r).values).collect();
    assert_eq!(a, b);
    assert_eq!(random_baseline(&spec, 5, &mut rng(1)), a);
}

#[test]
fn true_posterior_with_no_data_is_the_prior() {
    let spec = ProbModelSpec::lr(2);
    let s =
        true_posterior_samples(&spec, &ObservationSet::empty(&spec), 40000, &mut rng(2)).unwrap();
    for j in 0..3 {
        let c = column(&s, j);
        assert!(mean(&c).abs() < 0.02);
        assert!((var(&c) - 1.0).abs() < 0.03);
    }
}

#[test]
fn true_posterior_covariance_and_mean_match() {
    let spec = ProbModelSpec::lr(2);
    let mut r = rng(3);
    let theta = sample_prior(&spec, &mut r);
    let data = sample_data(&spec, &theta, 10, &mut r).unwrap();
    let post = exact_posterior(&spec, &data).unwrap();
    let cov = post.covariance_matrix();
    let n = 100_000;
    let s = true_posterior_samples(&spec, &data, n, &mut r).unwrap();
    let means: Vec<f64> = (0..3).map(|j| mean(&column(&s, j))).collect();
    for j in 0..3 {
        let se = (cov[(j, j)] / n as f64).sqrt();
        assert!((means[j] - post.mean[j]).abs() < 3.0 * se, "mean {j}");
        for l in 0..3 {
            let c = s
                .iter()
                .map(|v| (v[j] - means[j]) * (v[l] - means[l]))
                .sum::<f64>()
                / n as f64;
            let scale = (cov[(j, j)] * cov[(l, l)]).sqrt();
            assert!(
                (c - cov[(j, l)]).abs() < 0.03 * scale,
                "cov {j},{l}: {c} vs {}",
                cov[(j, l)]
            );
        }
    }
    let unsupported = true_posterior_samples(
        &ProbModelSpec::lc(1, 2),
        &ObservationSet::empty(&ProbModelSpec::lc(1, 2)),
        1,
        &mut r,
    );
    assert!(matches!(unsupported, Err(Error::UnsupportedFamily { .. })));
}

#[test]
fn mle_recovers_the_sample_mean() {
    let (spec, data) = gm_data(3, 50, 4);
    let xbar: Vec<f64> = (0..3)
        .map(|j| mean(&(0..50).map(|i| data.x(i)[j]).collect::<Vec<_>>()))
        .collect();
    let est = optimize_mle(&spec, &data, 500, &mut rng(5)).unwrap();
    for j in 0..3 {
        assert!((est[j] - xbar[j]).abs() < 1e-3, "{} vs {}", est[j], xbar[j]);
    }
}

#[test]
fn mle_solves_the_normal_equations() {
    let spec = ProbModelSpec::lr(2);
    let mut r = rng(6);
    let theta = sample_prior(&spec, &mut r);
    let data = sample_data(&spec, &theta, 80, &mut r).unwrap();
    let Targets::Real(y) = &data.targets else {
        unreachable!()
    };
    let phi = nalgebra::DMatrix::from_fn(80, 3, |i, j| if j < 2 { data.x(i)[j] } else { 1.0 });
    let yv = nalgebra::DVector::from_column_slice(y);
    let ls = (phi.transpose() * &phi)
        .lu()
        .solve(&(phi.transpose() * yv))
        .unwrap();
    let est = optimize_mle(&spec, &data, 500, &mut rng(7)).unwrap();
    for j in 0..3 {
        assert!((est[j] - ls[j]).abs() < 1e-2, "{} vs {}", est[j], ls[j]);
    }
}

#[test]
fn zero_mle_steps_return_the_initialisation() {
    let (spec, data) = gm_data(2, 5, 8);
    let est = optimize_mle(&spec, &data, 0, &mut rng(9)).unwrap();
    assert_eq!(est, sample_prior(&spec, &mut rng(9)).values);
}

#[test]
fn langevin_step_arithmetic() {
    assert_eq!(
        langevin_step(&[1.0, -2.0], &[0.0, 0.0], 0.1, &[0.0, 0.0]),
        vec![1.0, -2.0]
    );
    let out = langevin_step(&[1.0, -2.0], &[0.5, 3.0], 0.02, &[1.0, -0.5]);
    assert_relative_eq!(out[0], 1.0 + 0.01 + 0.2, max_relative = 1e-15);
    assert_relative_eq!(out[1], -2.0 + 0.06 - 0.1, max_relative = 1e-15);
}

fn check_moments(samples: &[Vec<f64>], spec: &ProbModelSpec, data: &ObservationSet, var_tol: f64) {
    let post = exact_posterior(spec, data).unwrap();
    let pv = post.variances();
    for j in 0..spec.num_params() {
        let c = column(samples, j);
        let se = batch_se(&c);
        assert!(
            (mean(&c) - post.mean[j]).abs() < 3.0 * se,
            "mean {j}: {} vs {} (se {se})",
            mean(&c),
            post.mean[j]
        );
        assert!(
            (var(&c) / pv[j] - 1.0).abs() < var_tol,
            "var {j}: {} vs {}",
            var(&c),
            pv[j]
        );
    }
}

#[test]
fn langevin_recovers_gm_posterior() {
    let (spec, data) = gm_data(2, 64, 10);
    let cfg = ChainConfig {
        kept: 50_000,
        ..ChainConfig::langevin()
    };
    let out = langevin(&spec, &data, &cfg, &mut rng(11)).unwrap();
    assert_eq!(out.samples.len(), 50_000);
    assert_eq!(out.failed_chains, 0);
    check_moments(&out.samples, &spec, &data, 0.1);
}

#[test]
fn hmc_recovers_gm_posterior_with_sane_acceptance() {
    let (spec, data) = gm_data(2, 64, 12);
    let out = hmc(
        &spec,
        &data,
        &ChainConfig {
            kept: 5000,
            ..ChainConfig::hmc()
        },
        &mut rng(13),
    )
    .unwrap();
    check_moments(&out.samples, &spec, &data, 0.1);
    let acc = out.acceptance_rate.unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn hmc_default_acceptance_on_gm() {
    let (spec, data) = gm_data(2, 64, 14);
    let cfg = ChainConfig {
        step_size: 0.2,
        ..ChainConfig::hmc()
    };
    let acc = hmc(&spec, &data, &cfg, &mut rng(15))
        .unwrap()
        .acceptance_rate
        .unwrap();
    assert!((0.0..=1.0).contains(&acc));
    for k in [64, 128] {
        let (spec, data) = gm_data(100, k, 14);
        let acc = hmc(&spec, &data, &ChainConfig::hmc(), &mut rng(15))
            .unwrap()
            .acceptance_rate
            .unwrap();
        assert!((0.4..=0.95).contains(&acc), "acceptance {acc} at k={k}");
    }
}

#[test]
fn tiny_leapfrog_steps_are_always_accepted() {
    let (spec, data) = gm_data(2, 64, 16);
    let cfg = ChainConfig {
        step_size: 1e-5,
        leapfrog_steps: 1,
        burn_in: 0,
        kept: 200,
        ..ChainConfig::hmc()
    };
    let acc = hmc(&spec, &data, &cfg, &mut rng(17))
        .unwrap()
        .acceptance_rate
        .unwrap();
    assert!(acc > 1.0 - 1e-6, "acceptance {acc}");
}

#[test]
fn leapfrog_energy_error_is_second_order() {
    let target = |q: &[f64]| -> incontext::Result<(f64, Vec<f64>)> {
        Ok((
            -0.5 * (q[0] * q[0] + 4.0 * q[1] * q[1]),
            vec![-q[0], -4.0 * q[1]],
        ))
    };
    let energy = |q: &[f64], p: &[f64]| {
        0.5 * (q[0] * q[0] + 4.0 * q[1] * q[1]) + 0.5 * (p[0] * p[0] + p[1] * p[1])
    };
    let (q0, p0) = ([1.0, 0.5], [0.3, -0.7]);
    let e0 = energy(&q0, &p0);
    let drift = |eps: f64| {
        let mut q = q0.to_vec();
        let mut p = p0.to_vec();
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            (q, p) = leapfrog(&target, &q, &p, eps, 1).unwrap();
            worst = worst.max((energy(&q, &p) - e0).abs());
        }
        worst
    };
    let (a, b) = (drift(0.02), drift(0.01));
    assert!(a < 0.01, "drift {a}");
    let ratio = a / b;
    assert!((3.0..5.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn more_samples_reduce_moment_error() {
    let (spec, data) = gm_data(2, 64, 18);
    let post = exact_posterior(&spec, &data).unwrap();
    let err = |kept: usize, seed: u64| {
        let cfg = ChainConfig {
            kept,
            ..ChainConfig::hmc()
        };
        let s = hmc(&spec, &data, &cfg, &mut rng(seed)).unwrap().samples;
        (0..2)
            .map(|j| (mean(&column(&s, j)) - post.mean[j]).powi(2))
            .sum::<f64>()
    };
    let small: f64 = (0..20).map(|s| err(250, 100 + s)).sum();
    let large: f64 = (0..20).map(|s| err(1000, 200 + s)).sum();
    assert!(large < small, "{large} vs {small}");
}

#[test]
fn pooled_chains_match_a_restarted_chain() {
    let (spec, data) = gm_data(2, 64, 19);
    let pooled = hmc(
        &spec,
        &data,
        &ChainConfig {
            kept: 200,
            ..ChainConfig::hmc().with_chains(10)
        },
        &mut rng(20),
    )
    .unwrap();
    assert_eq!(pooled.samples.len(), 2000);
    let mut restarted = Vec::new();
    for c in 0..10 {
        let out = hmc(
            &spec,
            &data,
            &ChainConfig {
                kept: 200,
                ..ChainConfig::hmc()
            },
            &mut rng(300 + c),
        )
        .unwrap();
        restarted.extend(out.samples);
    }
    let post = exact_posterior(&spec, &data).unwrap();
    for j in 0..2 {
        let se = (post.variances()[j] / 2000.0).sqrt();
        let diff = mean(&column(&pooled.samples, j)) - mean(&column(&restarted, j));
        assert!(diff.abs() < 5.0 * se, "{diff} vs se {se}");
        assert!((var(&column(&pooled.samples, j)) / var(&column(&restarted, j)) - 1.0).abs() < 0.2);
    }
}

#[test]
fn divergent_chains_are_reported() {
    let spec = ProbModelSpec::lr(2);
    let mut r = rng(21);
    let theta = sample_prior(&spec, &mut r);
    let data = sample_data(&spec, &theta, 100, &mut r).unwrap();
    let cfg = ChainConfig {
        step_size: 1.0,
        ..ChainConfig::langevin()
    };
    assert!(matches!(
        langevin(&spec, &data, &cfg, &mut r),
        Err(Error::Divergence { .. })
    ));
}

#[test]
fn chains_on_a_generic_target() {
    let target = |q: &[f64]| -> incontext::Result<(f64, Vec<f64>)> {
        Ok((-0.5 * (q[0] - 3.0).powi(2), vec![-(q[0] - 3.0)]))
    };
    let cfg = ChainConfig {
        step_size: 0.3,
        kept: 4000,
        ..ChainConfig::hmc()
    };
    let out = hmc_target(&target, &mut |_| vec![0.0], &[true], &cfg, &mut rng(22)).unwrap();
    let c = column(&out.samples, 0);
    assert!((mean(&c) - 3.0).abs() < 3.0 * batch_se(&c));
    assert!(ChainConfig { kept: 0, ..cfg }.validate().is_err());
    assert!(ChainConfig {
        step_size: 0.0,
        ..cfg
    }
    .validate()
    .is_err());
}
