//! Non-amortised reference procedures: prior draws, exact posterior draws,
//! per-dataset MLE by gradient ascent, and Langevin / HMC chains.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{
    exact_posterior, log_joint_and_grad, log_likelihood_and_grad, sample_prior, ObservationSet,
    ProbModelSpec,
};
use crate::nn::{AdamConfig, AdamState, Grads, ParamStore, Tensor};
use crate::rng;

/// Chains whose state norm exceeds this are declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e6;

/// `(log density, gradient)` of an unnormalised target.
pub type Target<'a> = dyn Fn(&[f64]) -> Result<(f64, Vec<f64>)> + 'a;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub step_size: f64,
    /// Leapfrog steps per HMC proposal; ignored by Langevin.
    pub leapfrog_steps: usize,
    pub burn_in: usize,
    /// Samples kept per chain.
    pub kept: usize,
    pub chains: usize,
    pub thin: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self::hmc()
    }
}

impl ChainConfig {
    pub fn langevin() -> Self {
        Self {
            step_size: 1e-3,
            leapfrog_steps: 1,
            burn_in: 500,
            kept: 1000,
            chains: 1,
            thin: 1,
        }
    }

    pub fn hmc() -> Self {
        Self {
            step_size: 0.05,
            leapfrog_steps: 10,
            burn_in: 500,
            kept: 1000,
            chains: 1,
            thin: 1,
        }
    }

    /// Multiple-chain mode: `chains` independent chains, pooled.
    pub fn with_chains(mut self, chains: usize) -> Self {
        self.chains = chains;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidConfig(
                "chain step size must be positive".into(),
            ));
        }
        if self.kept == 0 || self.chains == 0 || self.thin == 0 || self.leapfrog_steps == 0 {
            return Err(Error::InvalidConfig(
                "kept samples, chains, thinning and leapfrog steps must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainOutput {
    /// Pooled kept samples, chain by chain.
    pub samples: Vec<Vec<f64>>,
    /// Mean Metropolis acceptance probability (HMC only).
    pub acceptance_rate: Option<f64>,
    pub failed_chains: usize,
}

/// `n` prior draws.
pub fn random_baseline(spec: &ProbModelSpec, n: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..n).map(|_| sample_prior(spec, rng).values).collect()
}

/// `n` draws from the closed-form posterior (GM and LR only).
pub fn true_posterior_samples(
    spec: &ProbModelSpec,
    data: &ObservationSet,
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<f64>>> {
    Ok(exact_posterior(spec, data)?.sample(n, rng))
}

pub const MLE_LEARNING_RATE: f64 = 0.05;

/// Maximum likelihood by Adam ascent from a prior draw.
pub fn optimize_mle(
    spec: &ProbModelSpec,
    data: &ObservationSet,
    steps: usize,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    optimize_mle_with(
        spec,
        data,
        steps,
        AdamConfig {
            lr: MLE_LEARNING_RATE,
            ..AdamConfig::default()
        },
        rng,
    )
}

pub fn optimize_mle_with(
    spec: &ProbModelSpec,
    data: &ObservationSet,
    steps: usize,
    adam: AdamConfig,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let mask = spec.param_mask(data.native_dim);
    let mut init = sample_prior(spec, rng).values;
    zero_inactive(&mut init, &mask);
    let mut store = ParamStore::new();
    let id = store.add("theta", Tensor::row(init));
    let mut opt = AdamState::new(adam, &store);
    for step in 0..steps {
        let (ll, grad) = log_likelihood_and_grad(spec, store.get(id).data(), data)?;
        if !ll.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                iteration: step,
                reason: "non-finite log-likelihood".into(),
            });
        }
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        opt.update(
            &mut store,
            &Grads {
                tensors: vec![Some(Tensor::row(neg))],
            },
        )?;
    }
    Ok(store.get(id).data().to_vec())
}

/// One unadjusted Langevin step `θ + ε∇ + √(2ε) ξ`.
pub fn langevin_step(theta: &[f64], grad: &[f64], step_size: f64, xi: &[f64]) -> Vec<f64> {
    let sd = (2.0 * step_size).sqrt();
    theta
        .iter()
        .zip(grad)
        .zip(xi)
        .map(|((t, g), x)| t + step_size * g + sd * x)
        .collect()
}

/// Leapfrog integration with unit mass. Returns the final `(θ, p)`.
pub fn leapfrog(
    target: &Target<'_>,
    theta: &[f64],
    momentum: &[f64],
    step_size: f64,
    steps: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut q = theta.to_vec();
    let mut p = momentum.to_vec();
    let (_, mut g) = target(&q)?;
    for _ in 0..steps {
        for (pi, gi) in p.iter_mut().zip(&g) {
            *pi += 0.5 * step_size * gi;
        }
        for (qi, pi) in q.iter_mut().zip(&p) {
            *qi += step_size * pi;
        }
        g = target(&q)?.1;
        for (pi, gi) in p.iter_mut().zip(&g) {
            *pi += 0.5 * step_size * gi;
        }
    }
    Ok((q, p))
}

fn masked_normal(active: &[bool], rng: &mut impl Rng) -> Vec<f64> {
    active
        .iter()
        .map(|&a| {
            let z: f64 = StandardNormal.sample(rng);
            if a {
                z
            } else {
                0.0
            }
        })
        .collect()
}

fn zero_inactive(v: &mut [f64], active: &[bool]) {
    for (x, &a) in v.iter_mut().zip(active) {
        if !a {
            *x = 0.0;
        }
    }
}

fn diverged(theta: &[f64]) -> bool {
    let n2: f64 = theta.iter().map(|v| v * v).sum();
    !n2.is_finite() || n2.sqrt() > DIVERGENCE_NORM
}

enum Kernel {
    Langevin,
    Hmc,
}

struct ChainRun {
    samples: Vec<Vec<f64>>,
    accept_sum: f64,
    proposals: usize,
}

fn run_chain(
    kernel: &Kernel,
    target: &Target<'_>,
    init: Vec<f64>,
    active: &[bool],
    config: &ChainConfig,
    rng: &mut impl Rng,
) -> Result<Option<ChainRun>> {
    let mut theta = init;
    let (mut lp, mut grad) = target(&theta)?;
    let total = config.burn_in + config.kept * config.thin;
    let mut run = ChainRun {
        samples: Vec::with_capacity(config.kept),
        accept_sum: 0.0,
        proposals: 0,
    };
    for it in 0..total {
        match kernel {
            Kernel::Langevin => {
                let xi = masked_normal(active, rng);
                theta = langevin_step(&theta, &grad, config.step_size, &xi);
                if diverged(&theta) {
                    return Ok(None);
                }
                (lp, grad) = target(&theta)?;
            }
            Kernel::Hmc => {
                let p0 = masked_normal(active, rng);
                let (q, p) =
                    leapfrog(target, &theta, &p0, config.step_size, config.leapfrog_steps)?;
                if diverged(&q) {
                    return Ok(None);
                }
                let (lq, gq) = target(&q)?;
                let h0 = -lp + 0.5 * p0.iter().map(|v| v * v).sum::<f64>();
                let h1 = -lq + 0.5 * p.iter().map(|v| v * v).sum::<f64>();
                let accept = if (h0 - h1).is_finite() {
                    (h0 - h1).exp().min(1.0)
                } else {
                    0.0
                };
                run.accept_sum += accept;
                run.proposals += 1;
                if rng.random::<f64>() < accept {
                    theta = q;
                    lp = lq;
                    grad = gq;
                }
            }
        }
        if !lp.is_finite() {
            return Ok(None);
        }
        if it >= config.burn_in && (it - config.burn_in) % config.thin == config.thin - 1 {
            run.samples.push(theta.clone());
        }
    }
    Ok(Some(run))
}

fn run_chains(
    kernel: Kernel,
    target: &Target<'_>,
    init: &mut dyn FnMut(&mut rng::StreamRng) -> Vec<f64>,
    active: &[bool],
    config: &ChainConfig,
    rng: &mut impl Rng,
) -> Result<ChainOutput> {
    config.validate()?;
    let base: u64 = rng.random();
    let mut out = ChainOutput {
        samples: Vec::new(),
        acceptance_rate: None,
        failed_chains: 0,
    };
    let (mut acc, mut props) = (0.0, 0usize);
    for c in 0..config.chains {
        let mut chain_rng = rng::stream(base, c as u64);
        let start = init(&mut chain_rng);
        match run_chain(&kernel, target, start, active, config, &mut chain_rng)? {
            Some(run) => {
                out.samples.extend(run.samples);
                acc += run.accept_sum;
                props += run.proposals;
            }
            None => out.failed_chains += 1,
        }
    }
    if out.failed_chains == config.chains {
        return Err(Error::Divergence {
            iteration: 0,
            reason: format!("all {} chains diverged", config.chains),
        });
    }
    if matches!(kernel, Kernel::Hmc) && props > 0 {
        out.acceptance_rate = Some(acc / props as f64);
    }
    Ok(out)
}

/// Unadjusted Langevin on an arbitrary target, chains started at `init`.
pub fn langevin_target(
    target: &Target<'_>,
    init: &mut dyn FnMut(&mut rng::StreamRng) -> Vec<f64>,
    active: &[bool],
    config: &ChainConfig,
    rng: &mut impl Rng,
) -> Result<ChainOutput> {
    run_chains(Kernel::Langevin, target, init, active, config, rng)
}

/// Leapfrog HMC with Metropolis correction on an arbitrary target.
pub fn hmc_target(
    target: &Target<'_>,
    init: &mut dyn FnMut(&mut rng::StreamRng) -> Vec<f64>,
    active: &[bool],
    config: &ChainConfig,
    rng: &mut impl Rng,
) -> Result<ChainOutput> {
    run_chains(Kernel::Hmc, target, init, active, config, rng)
}

fn posterior_chains(
    kernel: Kernel,
    spec: &ProbModelSpec,
    data: &ObservationSet,
    config: &ChainConfig,
    rng: &mut impl Rng,
) -> Result<ChainOutput> {
    let active = spec.param_mask(data.native_dim);
    let target = |th: &[f64]| log_joint_and_grad(spec, th, data);
    let mut init = |r: &mut rng::StreamRng| {
        let mut v = sample_prior(spec, r).values;
        zero_inactive(&mut v, &active);
        v
    };
    run_chains(kernel, &target, &mut init, &active, config, rng)
}

/// Langevin chains on `p(θ | D)`, started from prior draws.
pub fn langevin(
    spec: &ProbModelSpec,
    data: &ObservationSet,
    config: &ChainConfig,
    rng: &mut impl Rng,
) -> Result<ChainOutput> {
    posterior_chains(Kernel::Langevin, spec, data, config, rng)
}

/// HMC chains on `p(θ | D)`, started from prior draws.
pub fn hmc(
    spec: &ProbModelSpec,
    data: &ObservationSet,
    config: &ChainConfig,
    rng: &mut impl Rng,
) -> Result<ChainOutput> {
    posterior_chains(Kernel::Hmc, spec, data, config, rng)
}

/// Doubling search for a chain step size that does not diverge.
///
/// Starting from `config.step_size`, the step is halved until a pilot run
/// (burn-in plus one kept sample) stays finite, or, if the start is already
/// stable, doubled while the pilot stays stable. At most `max_doublings`
/// moves are made in either direction.
pub fn tune_step_size(
    config: &ChainConfig,
    max_doublings: usize,
    pilot: &mut dyn FnMut(&ChainConfig) -> Result<ChainOutput>,
) -> Result<f64> {
    config.validate()?;
    let mut stable = |eps: f64| -> Result<bool> {
        match pilot(&ChainConfig {
            step_size: eps,
            kept: 1,
            chains: 1,
            ..*config
        }) {
            Ok(_) => Ok(true),
            Err(Error::Divergence { .. }) => Ok(false),
            Err(e) => Err(e),
        }
    };
    let mut eps = config.step_size;
    if !stable(eps)? {
        for _ in 0..max_doublings {
            eps *= 0.5;
            if stable(eps)? {
                return Ok(eps);
            }
        }
        return Err(Error::Divergence {
            iteration: 0,
            reason: format!("no stable step size down to {eps:e}"),
        });
    }
    for _ in 0..max_doublings {
        if !stable(2.0 * eps)? {
            break;
        }
        eps *= 2.0;
    }
    Ok(eps)
}
