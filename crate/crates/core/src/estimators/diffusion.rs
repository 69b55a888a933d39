//! Variance-exploding diffusion, flow matching and importance-sampled score
//! targets.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{active_tensor, masked_normal};
use crate::baselines::Target;
use crate::error::{Error, Result};
use crate::models::ObservationSet;
use crate::nn::{log_sum_exp, Activation, Graph, Mlp, ParamStore, Tensor, Var};

/// `σ_t = β t`, `g(t)² = 2 t β²`, zero drift.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VeSchedule {
    pub beta: f64,
    pub t_min: f64,
    pub steps: usize,
}

impl Default for VeSchedule {
    fn default() -> Self {
        Self {
            beta: 1.0,
            t_min: 1e-3,
            steps: 100,
        }
    }
}

impl VeSchedule {
    pub fn sigma(&self, t: f64) -> f64 {
        self.beta * t
    }

    pub fn g2(&self, t: f64) -> f64 {
        2.0 * t * self.beta * self.beta
    }

    /// `θ_t = θ₀ + σ_t z`.
    pub fn perturb(&self, theta0: &[f64], t: f64, z: &[f64]) -> Vec<f64> {
        let s = self.sigma(t);
        theta0.iter().zip(z).map(|(a, b)| a + s * b).collect()
    }

    pub fn sample_time(&self, rng: &mut impl Rng) -> f64 {
        rng.random_range(self.t_min..1.0)
    }
}

/// How squared score errors are weighted across time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DsmWeighting {
    /// `‖s + z/σ_t‖²` in score units. Its variance grows as `1/σ_t²`.
    Unweighted,
    /// `σ_t² ‖s + z/σ_t‖² = ‖σ_t s + z‖²`: the noise-prediction residual,
    /// weighted equally at every time.
    #[default]
    NoiseVariance,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerNetConfig {
    pub hidden: usize,
    pub hidden_layers: usize,
    pub time_embed_dim: usize,
    /// `(t, z)` draws per dataset in one training step.
    pub noise_draws: usize,
}

impl Default for SamplerNetConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            hidden_layers: 2,
            time_embed_dim: 64,
            noise_draws: 8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemConfig {
    /// Importance samples per score estimate.
    pub proposals: usize,
    /// Normalised weights below this are dropped before renormalising.
    pub weight_floor: f64,
    pub replay_buffer: bool,
    pub buffer_capacity: usize,
    /// Steps between refreshes of the buffer with fresh self-samples.
    pub refresh_every: usize,
    pub samples_per_refresh: usize,
}

impl Default for DemConfig {
    fn default() -> Self {
        Self {
            proposals: 100,
            weight_floor: 1e-12,
            replay_buffer: true,
            buffer_capacity: 512,
            refresh_every: 25,
            samples_per_refresh: 8,
        }
    }
}

impl DemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.proposals < 2 {
            return Err(Error::InvalidConfig(
                "pDEM needs at least 2 proposals".into(),
            ));
        }
        Ok(())
    }
}

/// Sinusoidal features `[sin(ω_j t), cos(ω_j t)]` with `ω_j` log-spaced on
/// `[1, 100]`.
pub fn time_embedding(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for j in 0..half {
        let frac = if half > 1 {
            j as f64 / (half - 1) as f64
        } else {
            0.0
        };
        let w = (frac * 100f64.ln()).exp();
        out[j] = (w * t).sin();
        out[half + j] = (w * t).cos();
    }
    out
}

/// Network mapping `(θ_t, t, context)` to a vector in parameter space.
#[derive(Clone, Debug)]
pub struct VectorField {
    pub net: Mlp,
    pub dim: usize,
    pub time_embed_dim: usize,
}

impl VectorField {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &SamplerNetConfig,
        context_dim: usize,
        dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut dims = vec![dim + cfg.time_embed_dim + context_dim];
        dims.extend(std::iter::repeat_n(cfg.hidden, cfg.hidden_layers));
        dims.push(dim);
        Self {
            net: Mlp::new(store, name, &dims, Activation::Silu, true, rng),
            dim,
            time_embed_dim: cfg.time_embed_dim,
        }
    }

    /// Raw network output for rows `theta_t` (`n × P`) at times `ts`.
    pub fn forward(&self, g: &mut Graph, ctx: Var, theta_t: Var, ts: &[f64]) -> Var {
        let n = ts.len();
        let mut emb = Tensor::zeros(n, self.time_embed_dim);
        for (i, &t) in ts.iter().enumerate() {
            emb.row_slice_mut(i)
                .copy_from_slice(&time_embedding(t, self.time_embed_dim));
        }
        let emb = g.input(emb);
        let ctx_rows = g.broadcast_rows(ctx, n);
        let inp = g.concat_cols(&[theta_t, emb, ctx_rows]);
        self.net.forward(g, inp)
    }

    /// Score `s(θ_t, t) = F(θ_t, t) / σ_t`, zero on inactive coordinates.
    pub fn score(
        &self,
        g: &mut Graph,
        ctx: Var,
        theta_t: Var,
        ts: &[f64],
        schedule: &VeSchedule,
        active: &[bool],
    ) -> Var {
        let f = self.forward(g, ctx, theta_t, ts);
        let n = ts.len();
        let mut scale = active_tensor(n, active);
        for (i, &t) in ts.iter().enumerate() {
            let inv = 1.0 / schedule.sigma(t);
            for v in scale.row_slice_mut(i) {
                *v *= inv;
            }
        }
        let scale = g.input(scale);
        g.mul(f, scale)
    }

    /// Drift `v(θ_t, t)`, zero on inactive coordinates.
    pub fn drift(&self, g: &mut Graph, ctx: Var, theta_t: Var, ts: &[f64], active: &[bool]) -> Var {
        let f = self.forward(g, ctx, theta_t, ts);
        let mask = g.input(active_tensor(ts.len(), active));
        g.mul(f, mask)
    }
}

/// Denoising score matching with explicit noise: rows of `z` pair with
/// `ts`. Returns the mean over rows of the (weighted) squared error.
#[allow(clippy::too_many_arguments)]
pub fn dsm_loss_with(
    g: &mut Graph,
    net: &VectorField,
    ctx: Var,
    theta_star: &[f64],
    ts: &[f64],
    z: &Tensor,
    schedule: &VeSchedule,
    weighting: DsmWeighting,
    active: &[bool],
) -> Var {
    let n = ts.len();
    let p = theta_star.len();
    let mut theta_t = Tensor::zeros(n, p);
    let mut target = Tensor::zeros(n, p);
    let mut w = Tensor::zeros(n, p);
    for (i, &t) in ts.iter().enumerate() {
        let s = schedule.sigma(t);
        let tt = schedule.perturb(theta_star, t, z.row_slice(i));
        theta_t.row_slice_mut(i).copy_from_slice(&tt);
        let weight = match weighting {
            DsmWeighting::Unweighted => 1.0,
            DsmWeighting::NoiseVariance => s * s,
        };
        for (j, _) in active.iter().enumerate().take(p).filter(|(_, &on)| on) {
            target.set(i, j, -z.get(i, j) / s);
            w.set(i, j, weight);
        }
    }
    let theta_t = g.input(theta_t);
    let s = net.score(g, ctx, theta_t, ts, schedule, active);
    let target = g.input(target);
    let r = g.sub(s, target);
    let sq = g.square(r);
    let w = g.input(w);
    let sq = g.mul(sq, w);
    let total = g.sum(sq);
    g.scale(total, 1.0 / n as f64)
}

#[allow(clippy::too_many_arguments)]
pub fn dsm_loss(
    g: &mut Graph,
    net: &VectorField,
    ctx: Var,
    theta_star: &[f64],
    draws: usize,
    schedule: &VeSchedule,
    weighting: DsmWeighting,
    active: &[bool],
    rng: &mut impl Rng,
) -> Var {
    let ts: Vec<f64> = (0..draws).map(|_| schedule.sample_time(rng)).collect();
    let z = masked_normal(draws, active, rng);
    dsm_loss_with(
        g, net, ctx, theta_star, &ts, &z, schedule, weighting, active,
    )
}

/// Linear path from noise at `t = 0` to data at `t = 1`:
/// `θ_t = (1 − t) z + t θ*`, target drift `θ* − z`.
pub fn fm_interpolate(theta_star: &[f64], z: &[f64], t: f64) -> (Vec<f64>, Vec<f64>) {
    let theta_t = theta_star
        .iter()
        .zip(z)
        .map(|(a, b)| (1.0 - t) * b + t * a)
        .collect();
    let drift = theta_star.iter().zip(z).map(|(a, b)| a - b).collect();
    (theta_t, drift)
}

pub fn fm_loss_with(
    g: &mut Graph,
    net: &VectorField,
    ctx: Var,
    theta_star: &[f64],
    ts: &[f64],
    z: &Tensor,
    active: &[bool],
) -> Var {
    let n = ts.len();
    let p = theta_star.len();
    let mut theta_t = Tensor::zeros(n, p);
    let mut target = Tensor::zeros(n, p);
    for (i, &t) in ts.iter().enumerate() {
        let (tt, d) = fm_interpolate(theta_star, z.row_slice(i), t);
        theta_t.row_slice_mut(i).copy_from_slice(&tt);
        for j in 0..p {
            if active[j] {
                target.set(i, j, d[j]);
            }
        }
    }
    let theta_t = g.input(theta_t);
    let v = net.drift(g, ctx, theta_t, ts, active);
    let target = g.input(target);
    let r = g.sub(v, target);
    let sq = g.square(r);
    let total = g.sum(sq);
    g.scale(total, 1.0 / n as f64)
}

pub fn fm_loss(
    g: &mut Graph,
    net: &VectorField,
    ctx: Var,
    theta_star: &[f64],
    draws: usize,
    active: &[bool],
    rng: &mut impl Rng,
) -> Var {
    let ts: Vec<f64> = (0..draws).map(|_| rng.random_range(0.0..1.0)).collect();
    let z = masked_normal(draws, active, rng);
    fm_loss_with(g, net, ctx, theta_star, &ts, &z, active)
}

/// Euler–Maruyama integration of the reverse VE SDE from
/// `θ₁ ~ N(0, (1 + β²) I)` down to `t_min`.
pub fn sde_sample(
    schedule: &VeSchedule,
    score: &mut dyn FnMut(&Tensor, f64) -> Tensor,
    n: usize,
    active: &[bool],
    rng: &mut impl Rng,
) -> Result<Tensor> {
    let init_sd = (1.0 + schedule.beta * schedule.beta).sqrt();
    let mut theta = masked_normal(n, active, rng);
    theta.scale_assign(init_sd);
    let dt = (1.0 - schedule.t_min) / schedule.steps as f64;
    let mut t = 1.0;
    for step in 0..schedule.steps {
        let s = score(&theta, t);
        let g2 = schedule.g2(t);
        let noise = masked_normal(n, active, rng);
        let sd = (g2 * dt).sqrt();
        for ((v, sv), xi) in theta.data_mut().iter_mut().zip(s.data()).zip(noise.data()) {
            *v += g2 * sv * dt + sd * xi;
        }
        if !theta.all_finite() {
            return Err(Error::Divergence {
                iteration: step,
                reason: "reverse SDE state became non-finite".into(),
            });
        }
        t -= dt;
    }
    Ok(theta)
}

/// Forward Euler on `dθ = v(θ, t) dt` from `z ~ N(0, I)` at `t = 0` to `t = 1`.
pub fn ode_sample(
    steps: usize,
    drift: &mut dyn FnMut(&Tensor, f64) -> Tensor,
    n: usize,
    active: &[bool],
    rng: &mut impl Rng,
) -> Result<Tensor> {
    let theta = masked_normal(n, active, rng);
    ode_integrate(steps, drift, theta)
}

pub fn ode_integrate(
    steps: usize,
    drift: &mut dyn FnMut(&Tensor, f64) -> Tensor,
    mut theta: Tensor,
) -> Result<Tensor> {
    let dt = 1.0 / steps as f64;
    for step in 0..steps {
        let t = step as f64 * dt;
        let v = drift(&theta, t);
        for (x, dv) in theta.data_mut().iter_mut().zip(v.data()) {
            *x += dv * dt;
        }
        if !theta.all_finite() {
            return Err(Error::Divergence {
                iteration: step,
                reason: "flow ODE state became non-finite".into(),
            });
        }
    }
    Ok(theta)
}

/// Self-normalised importance estimate of `∇ log p_t(θ_t)`:
/// proposals `θ₀⁽ⁱ⁾ ~ N(θ_t, σ² I)` weighted by `exp(log_joint(θ₀⁽ⁱ⁾))`.
///
/// `target` returns `(log_joint, ∇ log_joint)`.
pub fn dem_score_estimate(
    theta_t: &[f64],
    sigma: f64,
    target: &Target<'_>,
    config: &DemConfig,
    active: &[bool],
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let p = theta_t.len();
    let mut logw = Vec::with_capacity(config.proposals);
    let mut grads = Vec::with_capacity(config.proposals);
    for _ in 0..config.proposals {
        let prop: Vec<f64> = (0..p)
            .map(|j| {
                let z: f64 = StandardNormal.sample(rng);
                if active[j] {
                    theta_t[j] + sigma * z
                } else {
                    theta_t[j]
                }
            })
            .collect();
        let (lj, gr) = target(&prop)?;
        logw.push(if lj.is_nan() { f64::NEG_INFINITY } else { lj });
        grads.push(gr);
    }
    let weights = normalised_weights(&logw, config.weight_floor)?;
    let mut est = vec![0.0; p];
    for (w, gr) in weights.iter().zip(&grads) {
        if *w > 0.0 {
            for (e, v) in est.iter_mut().zip(gr) {
                *e += w * v;
            }
        }
    }
    Ok(est)
}

/// Softmax of log-weights with flooring; errors when nothing survives.
pub fn normalised_weights(logw: &[f64], floor: f64) -> Result<Vec<f64>> {
    let lse = log_sum_exp(logw);
    if !lse.is_finite() {
        return Err(Error::DegenerateProposal(
            "no proposal has a finite log-joint".into(),
        ));
    }
    let mut w: Vec<f64> = logw.iter().map(|l| (l - lse).exp()).collect();
    for v in &mut w {
        if *v < floor {
            *v = 0.0;
        }
    }
    let total: f64 = w.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(Error::DegenerateProposal(
            "all importance weights fell below the floor".into(),
        ));
    }
    for v in &mut w {
        *v /= total;
    }
    Ok(w)
}

/// Squared error between the network score and precomputed targets at the
/// given noisy points.
#[allow(clippy::too_many_arguments)]
pub fn dem_loss_with(
    g: &mut Graph,
    net: &VectorField,
    ctx: Var,
    theta_t: &Tensor,
    ts: &[f64],
    targets: &Tensor,
    schedule: &VeSchedule,
    active: &[bool],
) -> Var {
    let n = ts.len();
    let x = g.input(theta_t.clone());
    let s = net.score(g, ctx, x, ts, schedule, active);
    let mut tg = targets.clone();
    for i in 0..n {
        for (j, &a) in active.iter().enumerate() {
            if !a {
                tg.set(i, j, 0.0);
            }
        }
    }
    let tg = g.input(tg);
    let r = g.sub(s, tg);
    let sq = g.square(r);
    let total = g.sum(sq);
    g.scale(total, 1.0 / n as f64)
}

/// Recent self-samples, grouped with the dataset they were drawn for.
#[derive(Clone, Debug, Default)]
pub struct ReplayBuffer {
    pub capacity: usize,
    entries: VecDeque<(ObservationSet, Vec<Vec<f64>>)>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: VecDeque::new(),
        }
    }

    pub fn push(&mut self, data: ObservationSet, samples: Vec<Vec<f64>>) {
        if self.capacity == 0 {
            return;
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((data, samples));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn pick(&self, rng: &mut impl Rng) -> Option<&(ObservationSet, Vec<Vec<f64>>)> {
        if self.entries.is_empty() {
            None
        } else {
            self.entries.get(rng.random_range(0..self.entries.len()))
        }
    }
}
