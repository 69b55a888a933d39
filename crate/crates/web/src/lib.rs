//! Browser demo. Each operation returns a JSON string; failures come back
//! as `{"error": "..."}` so the page never has to catch exceptions.
//!
//! Operations:
//! - `posterior_json`: a Gaussian-mean dataset in 2-D with its exact posterior,
//!   MLE and HMC samples.
//! - `predictive_risk_json`: Random versus True Posterior predictive L2.
//! - `diffusion_json`: reverse VE-SDE sampling with the exact noised score.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use incontext::baselines::{
    hmc, optimize_mle, random_baseline, true_posterior_samples, ChainConfig,
};
use incontext::estimators::{sde_sample, VeSchedule};
use incontext::metrics::{ensemble_l2, single_l2};
use incontext::models::{exact_posterior, sample_data, sample_prior, ProbModelSpec};
use incontext::nn::Tensor;
use incontext::rng::{self, streams};
use incontext::tasks::{make_task, TaskSpec};
use incontext::Result;

/// Points drawn on the page are capped at this many.
pub const MAX_PLOTTED: usize = 400;

#[derive(Debug, Serialize)]
pub struct PosteriorDemo {
    pub data: Vec<Vec<f64>>,
    pub theta_star: Vec<f64>,
    pub exact_mean: Vec<f64>,
    pub exact_sd: Vec<f64>,
    pub mle: Vec<f64>,
    pub posterior_samples: Vec<Vec<f64>>,
    pub hmc_samples: Vec<Vec<f64>>,
    pub hmc_mean: Vec<f64>,
    pub hmc_acceptance: f64,
}

/// GM 2-D with `k` observations.
pub fn posterior(seed: u64, k: usize) -> Result<PosteriorDemo> {
    let spec = ProbModelSpec::gm(2);
    let mut r = rng::stream(seed, streams::TEST_SET);
    let theta = sample_prior(&spec, &mut r);
    let data = sample_data(&spec, &theta, k, &mut r)?;
    let post = exact_posterior(&spec, &data)?;
    let mut b = rng::stream(seed, streams::BASELINE);
    let mle = optimize_mle(&spec, &data, 500, &mut b)?;
    let chain = ChainConfig {
        burn_in: 200,
        kept: MAX_PLOTTED,
        ..ChainConfig::hmc()
    };
    let out = hmc(&spec, &data, &chain, &mut b)?;
    let n = out.samples.len() as f64;
    let hmc_mean = (0..2)
        .map(|j| out.samples.iter().map(|s| s[j]).sum::<f64>() / n)
        .collect();
    Ok(PosteriorDemo {
        data: (0..data.len()).map(|i| data.x(i).to_vec()).collect(),
        theta_star: theta.values,
        exact_sd: post.variances().iter().map(|v| v.sqrt()).collect(),
        exact_mean: post.mean.clone(),
        mle,
        posterior_samples: true_posterior_samples(&spec, &data, MAX_PLOTTED, &mut b)?,
        hmc_samples: out.samples,
        hmc_mean,
        hmc_acceptance: out.acceptance_rate.unwrap_or(f64::NAN),
    })
}

#[derive(Debug, Serialize)]
pub struct RiskDemo {
    pub dim: usize,
    pub tasks: usize,
    pub samples: usize,
    pub random_ensemble_l2: f64,
    pub true_ensemble_l2: f64,
    pub random_single_l2: f64,
    pub true_single_l2: f64,
    pub ratio: f64,
}

/// Mean predictive L2 of prior draws and exact posterior draws over
/// `tasks` GM datasets of dimension `dim`, with `s` samples each.
pub fn predictive_risk(seed: u64, dim: usize, tasks: usize, s: usize) -> Result<RiskDemo> {
    let spec = TaskSpec::generative(ProbModelSpec::gm(dim));
    let mut tr = rng::stream(seed, streams::TEST_SET);
    let mut br = rng::stream(seed, streams::BASELINE);
    let (mut re, mut te, mut rs, mut ts) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..tasks {
        let task = make_task(&spec, &mut tr)?;
        let rand_s = random_baseline(&spec.model, s, &mut br);
        let true_s = true_posterior_samples(&spec.model, &task.context, s, &mut br)?;
        re += ensemble_l2(&rand_s, &spec.model, &task.query)?;
        te += ensemble_l2(&true_s, &spec.model, &task.query)?;
        rs += single_l2(&rand_s, &spec.model, &task.query)?;
        ts += single_l2(&true_s, &spec.model, &task.query)?;
    }
    let n = tasks.max(1) as f64;
    Ok(RiskDemo {
        dim,
        tasks,
        samples: s,
        random_ensemble_l2: re / n,
        true_ensemble_l2: te / n,
        random_single_l2: rs / n,
        true_single_l2: ts / n,
        ratio: re / te,
    })
}

#[derive(Debug, Serialize)]
pub struct DiffusionDemo {
    pub samples: Vec<Vec<f64>>,
    pub exact_mean: Vec<f64>,
    pub exact_var: f64,
    pub sample_mean: Vec<f64>,
    pub sample_var: Vec<f64>,
}

/// Reverse VE-SDE sampling of a GM 2-D posterior `N(m, v I)` using the
/// exact score of its noised marginals, `-(θ - m) / (v + σ_t²)`.
pub fn diffusion(seed: u64, k: usize, n: usize, steps: usize) -> Result<DiffusionDemo> {
    let spec = ProbModelSpec::gm(2);
    let mut r = rng::stream(seed, streams::TEST_SET);
    let theta = sample_prior(&spec, &mut r);
    let data = sample_data(&spec, &theta, k, &mut r)?;
    let post = exact_posterior(&spec, &data)?;
    let m = post.mean.clone();
    let v = post.variances()[0];
    let schedule = VeSchedule {
        steps: steps.max(1),
        ..VeSchedule::default()
    };
    let mut score = |x: &Tensor, t: f64| {
        let denom = v + schedule.sigma(t).powi(2);
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (j, val) in out.row_slice_mut(i).iter_mut().enumerate() {
                *val = -(*val - m[j]) / denom;
            }
        }
        out
    };
    let mut sr = rng::stream(seed, streams::EVAL_SAMPLES);
    let x = sde_sample(&schedule, &mut score, n.max(2), &[true, true], &mut sr)?;
    let rows: Vec<Vec<f64>> = (0..x.rows()).map(|i| x.row_slice(i).to_vec()).collect();
    let cnt = rows.len() as f64;
    let mean: Vec<f64> = (0..2)
        .map(|j| rows.iter().map(|s| s[j]).sum::<f64>() / cnt)
        .collect();
    let var = (0..2)
        .map(|j| rows.iter().map(|s| (s[j] - mean[j]).powi(2)).sum::<f64>() / (cnt - 1.0))
        .collect();
    Ok(DiffusionDemo {
        samples: rows.into_iter().take(MAX_PLOTTED).collect(),
        exact_mean: m,
        exact_var: v,
        sample_mean: mean,
        sample_var: var,
    })
}

fn to_json<T: Serialize>(r: Result<T>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| error_json(&e.to_string())),
        Err(e) => error_json(&e.to_string()),
    }
}

fn error_json(msg: &str) -> String {
    serde_json::json!({ "error": msg }).to_string()
}

#[wasm_bindgen]
pub fn posterior_json(seed: u32, k: u32) -> String {
    to_json(posterior(seed as u64, (k as usize).clamp(1, 2000)))
}

#[wasm_bindgen]
pub fn predictive_risk_json(seed: u32, dim: u32, tasks: u32, samples: u32) -> String {
    to_json(predictive_risk(
        seed as u64,
        (dim as usize).clamp(1, 100),
        (tasks as usize).clamp(1, 500),
        (samples as usize).clamp(1, 256),
    ))
}

#[wasm_bindgen]
pub fn diffusion_json(seed: u32, k: u32, n: u32, steps: u32) -> String {
    to_json(diffusion(
        seed as u64,
        (k as usize).clamp(1, 2000),
        (n as usize).clamp(2, 5000),
        (steps as usize).clamp(1, 1000),
    ))
}
