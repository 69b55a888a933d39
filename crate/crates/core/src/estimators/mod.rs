//! In-context estimators: a set encoder followed by a point, density or
//! sampler head, and the objectives they are trained with.

pub mod diffusion;
pub mod flow;
pub mod gaussian;
pub mod point;

use std::fmt;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{
    log_joint_and_grad, log_joint_graph, sample_prior, ObservationSet, ProbModelSpec,
};
use crate::nn::{
    clip_global_norm, AdamConfig, AdamState, Dense, EncoderConfig, Grads, Graph, ParamStore,
    SetEncoder, Tensor, Var,
};
use crate::rng::StreamRng;

pub use diffusion::{
    dem_loss_with, dem_score_estimate, dsm_loss, dsm_loss_with, fm_interpolate, fm_loss,
    fm_loss_with, normalised_weights, ode_integrate, ode_sample, sde_sample, time_embedding,
    DemConfig, DsmWeighting, ReplayBuffer, SamplerNetConfig, VeSchedule, VectorField,
};
pub use flow::{CouplingFlow, FlowConfig};
pub use gaussian::{DiagGaussianHead, LOG_SCALE_CLAMP};
pub use point::point_loss;

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `n × P` matrix of ones on active columns and zeros elsewhere.
pub(crate) fn active_tensor(n: usize, active: &[bool]) -> Tensor {
    let row: Vec<f64> = active.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect();
    let mut t = Tensor::zeros(n, active.len());
    for i in 0..n {
        t.row_slice_mut(i).copy_from_slice(&row);
    }
    t
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Point,
    Gaussian,
    Flow,
    Score,
    FlowMatching,
    Pdem,
}

impl HeadKind {
    pub const ALL: [HeadKind; 6] = [
        HeadKind::Point,
        HeadKind::Gaussian,
        HeadKind::Flow,
        HeadKind::Score,
        HeadKind::FlowMatching,
        HeadKind::Pdem,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Point => "point",
            HeadKind::Gaussian => "gaussian",
            HeadKind::Flow => "flow",
            HeadKind::Score => "score",
            HeadKind::FlowMatching => "flow_matching",
            HeadKind::Pdem => "pdem",
        }
    }

    pub fn parse(s: &str) -> Option<HeadKind> {
        HeadKind::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Groups heads the way results are compared: point estimates, explicit
    /// densities and sample-only diffusion models.
    pub fn family(self) -> &'static str {
        match self {
            HeadKind::Point => "point",
            HeadKind::Gaussian => "gaussian",
            HeadKind::Flow => "flow",
            HeadKind::Score | HeadKind::FlowMatching | HeadKind::Pdem => "diffusion",
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Mle,
    Map,
    Fwd,
    Rev,
    Sym,
}

impl Objective {
    pub const ALL: [Objective; 5] = [
        Objective::Mle,
        Objective::Map,
        Objective::Fwd,
        Objective::Rev,
        Objective::Sym,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Objective::Mle => "mle",
            Objective::Map => "map",
            Objective::Fwd => "fwd",
            Objective::Rev => "rev",
            Objective::Sym => "sym",
        }
    }

    pub fn parse(s: &str) -> Option<Objective> {
        Objective::ALL.into_iter().find(|o| o.name() == s)
    }

    /// What the objective learns from: parameter samples (`forward`), the
    /// unnormalised joint (`reverse`), both (`symmetric`), or a point loss.
    pub fn signal(self) -> &'static str {
        match self {
            Objective::Mle | Objective::Map => "point",
            Objective::Fwd => "forward",
            Objective::Rev => "reverse",
            Objective::Sym => "symmetric",
        }
    }

    pub fn needs_theta_star(self) -> bool {
        matches!(self, Objective::Fwd | Objective::Sym)
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn check_combination(kind: HeadKind, objective: Objective) -> Result<()> {
    let ok = match kind {
        HeadKind::Point => matches!(objective, Objective::Mle | Objective::Map),
        HeadKind::Gaussian | HeadKind::Flow => {
            matches!(objective, Objective::Fwd | Objective::Rev | Objective::Sym)
        }
        HeadKind::Score | HeadKind::FlowMatching => objective == Objective::Fwd,
        HeadKind::Pdem => objective == Objective::Rev,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "{kind} estimators cannot be trained with the {objective} objective"
        )))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub encoder: EncoderConfig,
    pub adam: AdamConfig,
    /// Datasets whose gradients are averaged per optimiser step.
    pub datasets_per_step: usize,
    /// Likelihood minibatch size for point losses.
    pub minibatch_size: usize,
    pub rev_kl_samples: usize,
    pub grad_clip: Option<f64>,
    pub flow: FlowConfig,
    pub sampler: SamplerNetConfig,
    pub schedule: VeSchedule,
    pub dsm_weighting: DsmWeighting,
    pub dem: DemConfig,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            adam: AdamConfig::default(),
            datasets_per_step: 1,
            minibatch_size: 64,
            rev_kl_samples: 8,
            grad_clip: None,
            flow: FlowConfig::default(),
            sampler: SamplerNetConfig::default(),
            schedule: VeSchedule::default(),
            dsm_weighting: DsmWeighting::NoiseVariance,
            dem: DemConfig::default(),
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.dem.validate()?;
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.datasets_per_step == 0 {
            return bad("datasets_per_step must be at least 1");
        }
        if self.minibatch_size == 0 {
            return bad("minibatch_size must be at least 1");
        }
        if self.rev_kl_samples == 0 || self.sampler.noise_draws == 0 {
            return bad("sample counts must be at least 1");
        }
        if !(self.schedule.beta > 0.0
            && self.schedule.t_min > 0.0
            && self.schedule.t_min < 1.0
            && self.schedule.steps > 0)
        {
            return bad("diffusion schedule needs beta > 0, 0 < t_min < 1 and steps > 0");
        }
        if self.flow.blocks == 0 || self.flow.hidden == 0 {
            return bad("flow needs at least one block and hidden > 0");
        }
        Ok(())
    }
}

/// One training dataset with its generating parameters when known.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub data: ObservationSet,
    pub theta_star: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Capabilities {
    pub sample: bool,
    pub log_density: bool,
    pub entropy: bool,
}

/// The head that turns a context embedding into an estimate.
#[derive(Clone, Debug)]
pub enum PosteriorApproximation {
    Point(Dense),
    Gaussian(DiagGaussianHead),
    Flow(CouplingFlow),
    Diffusion(VectorField),
    FlowMatching(VectorField),
}

impl PosteriorApproximation {
    pub fn capabilities(&self) -> Capabilities {
        match self {
            PosteriorApproximation::Point(_) => Capabilities {
                sample: true,
                log_density: false,
                entropy: false,
            },
            PosteriorApproximation::Gaussian(_) => Capabilities {
                sample: true,
                log_density: true,
                entropy: true,
            },
            PosteriorApproximation::Flow(_) => Capabilities {
                sample: true,
                log_density: true,
                entropy: false,
            },
            PosteriorApproximation::Diffusion(_) | PosteriorApproximation::FlowMatching(_) => {
                Capabilities {
                    sample: true,
                    log_density: false,
                    entropy: false,
                }
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub losses: Vec<f64>,
}

/// Encoder plus head, with its own parameters and optimiser state.
#[derive(Clone, Debug)]
pub struct InContextEstimator {
    pub spec: ProbModelSpec,
    pub kind: HeadKind,
    pub objective: Objective,
    pub config: EstimatorConfig,
    pub store: ParamStore,
    pub encoder: SetEncoder,
    pub head: PosteriorApproximation,
    adam: AdamState,
    buffer: ReplayBuffer,
    steps_done: usize,
}

impl InContextEstimator {
    pub fn new(
        spec: ProbModelSpec,
        kind: HeadKind,
        objective: Objective,
        config: EstimatorConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        spec.validate()?;
        config.validate()?;
        check_combination(kind, objective)?;
        let mut store = ParamStore::new();
        let encoder = SetEncoder::new(&mut store, config.encoder, spec.token_dim(), rng)?;
        let c = config.encoder.model_dim;
        let p = spec.num_params();
        let head = match kind {
            HeadKind::Point => {
                PosteriorApproximation::Point(Dense::new(&mut store, "point", c, p, rng))
            }
            HeadKind::Gaussian => {
                PosteriorApproximation::Gaussian(DiagGaussianHead::new(&mut store, c, p, rng))
            }
            HeadKind::Flow => {
                PosteriorApproximation::Flow(CouplingFlow::new(&mut store, config.flow, c, p, rng))
            }
            HeadKind::Score | HeadKind::Pdem => PosteriorApproximation::Diffusion(
                VectorField::new(&mut store, "score", &config.sampler, c, p, rng),
            ),
            HeadKind::FlowMatching => PosteriorApproximation::FlowMatching(VectorField::new(
                &mut store,
                "drift",
                &config.sampler,
                c,
                p,
                rng,
            )),
        };
        let adam = AdamState::new(config.adam, &store);
        let buffer = ReplayBuffer::new(if config.dem.replay_buffer {
            config.dem.buffer_capacity
        } else {
            0
        });
        Ok(Self {
            spec,
            kind,
            objective,
            config,
            store,
            encoder,
            head,
            adam,
            buffer,
            steps_done: 0,
        })
    }

    pub fn num_params(&self) -> usize {
        self.spec.num_params()
    }

    pub fn steps_done(&self) -> usize {
        self.steps_done
    }

    pub fn capabilities(&self) -> Capabilities {
        self.head.capabilities()
    }

    pub fn active(&self, data: &ObservationSet) -> Vec<bool> {
        self.spec.param_mask(data.native_dim)
    }

    /// Context embedding (`1 × model_dim`) of a dataset.
    pub fn context(&self, g: &mut Graph, data: &ObservationSet) -> Result<Var> {
        data.check(&self.spec)?;
        let feats = data.token_features(&self.spec);
        self.encoder.encode(g, &feats, &data.mask)
    }

    fn context_value(&self, data: &ObservationSet) -> Result<Tensor> {
        let mut g = Graph::new(&self.store);
        let ctx = self.context(&mut g, data)?;
        Ok(g.value(ctx).clone())
    }

    /// Builds the training loss for one dataset.
    pub fn loss(
        &self,
        g: &mut Graph,
        example: &TrainingExample,
        rng: &mut impl Rng,
    ) -> Result<Var> {
        let data = &example.data;
        let active = self.active(data);
        let theta_star = || -> Result<Vec<f64>> {
            example.theta_star.clone().ok_or_else(|| {
                Error::Capability(format!(
                    "{} with the {} objective needs the generating parameters, which this data source does not provide",
                    self.kind, self.objective
                ))
            })
        };
        if self.objective.needs_theta_star() {
            theta_star()?;
        }
        match (&self.head, self.objective) {
            (PosteriorApproximation::Point(head), obj) => {
                if data.num_valid() == 0 {
                    return Err(Error::EmptyMinibatch);
                }
                let ctx = self.context(g, data)?;
                let theta = head.forward(g, ctx);
                let valid = data.valid_rows();
                let m = self.config.minibatch_size.min(valid.len());
                let mut rows: Vec<usize> = sample_indices(rng, valid.len(), m)
                    .into_iter()
                    .map(|i| valid[i])
                    .collect();
                rows.sort_unstable();
                point_loss(g, &self.spec, theta, data, &rows, obj == Objective::Map)
            }
            (PosteriorApproximation::Gaussian(head), obj) => {
                let ctx = self.context(g, data)?;
                let fwd = if obj.needs_theta_star() {
                    let t = g.input(Tensor::row(theta_star()?));
                    let lq = head.log_prob(g, ctx, t, &active);
                    Some(g.neg(lq))
                } else {
                    None
                };
                let rev = if obj != Objective::Fwd {
                    let eps = g.input(masked_normal(self.config.rev_kl_samples, &active, rng));
                    let theta = head.rsample(g, ctx, eps);
                    let nlj = self.mean_neg_log_joint(g, theta, data);
                    let h = head.entropy(g, ctx, &active);
                    Some(g.sub(nlj, h))
                } else {
                    None
                };
                Ok(combine(g, fwd, rev))
            }
            (PosteriorApproximation::Flow(head), obj) => {
                let ctx = self.context(g, data)?;
                let fwd = if obj.needs_theta_star() {
                    let t = g.input(Tensor::row(theta_star()?));
                    let lq = head.log_prob(g, ctx, t, &active);
                    Some(g.neg(lq))
                } else {
                    None
                };
                let rev = if obj != Objective::Fwd {
                    let z = g.input(masked_normal(self.config.rev_kl_samples, &active, rng));
                    let (theta, lq) = head.rsample(g, ctx, z, &active);
                    let nlj = self.mean_neg_log_joint(g, theta, data);
                    let mlq = g.mean(lq);
                    Some(g.add(nlj, mlq))
                } else {
                    None
                };
                Ok(combine(g, fwd, rev))
            }
            (PosteriorApproximation::Diffusion(net), Objective::Fwd) => {
                let ctx = self.context(g, data)?;
                Ok(dsm_loss(
                    g,
                    net,
                    ctx,
                    &theta_star()?,
                    self.config.sampler.noise_draws,
                    &self.config.schedule,
                    self.config.dsm_weighting,
                    &active,
                    rng,
                ))
            }
            (PosteriorApproximation::Diffusion(net), _) => {
                let (source, samples) = match self.buffer.pick(rng) {
                    Some((d, s)) if rng.random_bool(0.5) => (d, Some(s)),
                    _ => (data, None),
                };
                let active = self.active(source);
                let (theta_t, ts, targets) =
                    self.dem_batch(source, samples.map(|v| v.as_slice()), &active, rng)?;
                let ctx = self.context(g, source)?;
                Ok(dem_loss_with(
                    g,
                    net,
                    ctx,
                    &theta_t,
                    &ts,
                    &targets,
                    &self.config.schedule,
                    &active,
                ))
            }
            (PosteriorApproximation::FlowMatching(net), _) => {
                let ctx = self.context(g, data)?;
                Ok(fm_loss(
                    g,
                    net,
                    ctx,
                    &theta_star()?,
                    self.config.sampler.noise_draws,
                    &active,
                    rng,
                ))
            }
        }
    }

    /// Noisy points and importance-sampled score targets for pDEM.
    fn dem_batch(
        &self,
        data: &ObservationSet,
        samples: Option<&[Vec<f64>]>,
        active: &[bool],
        rng: &mut impl Rng,
    ) -> Result<(Tensor, Vec<f64>, Tensor)> {
        let n = self.config.sampler.noise_draws;
        let p = self.num_params();
        let sched = self.config.schedule;
        let mut theta_t = Tensor::zeros(n, p);
        let mut targets = Tensor::zeros(n, p);
        let mut ts = Vec::with_capacity(n);
        let target = |th: &[f64]| log_joint_and_grad(&self.spec, th, data);
        for i in 0..n {
            let mut theta0 = match samples {
                Some(s) => s[rng.random_range(0..s.len())].clone(),
                None => sample_prior(&self.spec, rng).values,
            };
            for (v, &a) in theta0.iter_mut().zip(active) {
                if !a {
                    *v = 0.0;
                }
            }
            let t = sched.sample_time(rng);
            let z = masked_normal(1, active, rng);
            let tt = sched.perturb(&theta0, t, z.data());
            let est =
                dem_score_estimate(&tt, sched.sigma(t), &target, &self.config.dem, active, rng)?;
            theta_t.row_slice_mut(i).copy_from_slice(&tt);
            targets.row_slice_mut(i).copy_from_slice(&est);
            ts.push(t);
        }
        Ok((theta_t, ts, targets))
    }

    fn mean_neg_log_joint(&self, g: &mut Graph, theta: Var, data: &ObservationSet) -> Var {
        let n = g.shape(theta).0;
        let mut total: Option<Var> = None;
        for i in 0..n {
            let row = g.slice_rows(theta, i, 1);
            let lj = log_joint_graph(g, &self.spec, row, data);
            total = Some(match total {
                Some(t) => g.add(t, lj),
                None => lj,
            });
        }
        let total = total.expect("at least one sample");
        g.scale(total, -1.0 / n as f64)
    }

    /// One optimiser step on a batch of datasets. Returns the mean loss.
    pub fn train_step(&mut self, examples: &[TrainingExample], rng: &mut impl Rng) -> Result<f64> {
        if examples.is_empty() {
            return Err(Error::InvalidConfig(
                "training step without datasets".into(),
            ));
        }
        let mut grads = Grads::zeros_like(&self.store);
        let mut loss_sum = 0.0;
        let w = 1.0 / examples.len() as f64;
        for ex in examples {
            let mut g = Graph::new(&self.store);
            let loss = self.loss(&mut g, ex, rng)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Divergence {
                    iteration: self.steps_done,
                    reason: format!("loss is {value}"),
                });
            }
            loss_sum += value;
            grads.accumulate(&g.backward(loss), w);
        }
        if !grads.all_finite() {
            return Err(Error::Divergence {
                iteration: self.steps_done,
                reason: "non-finite gradient".into(),
            });
        }
        if let Some(max) = self.config.grad_clip {
            clip_global_norm(&mut grads, max);
        }
        self.adam.update(&mut self.store, &grads)?;
        self.steps_done += 1;
        if self.kind == HeadKind::Pdem
            && self.config.dem.replay_buffer
            && self
                .steps_done
                .is_multiple_of(self.config.dem.refresh_every.max(1))
        {
            let data = examples[0].data.clone();
            let samples = self.sample(&data, self.config.dem.samples_per_refresh, rng)?;
            if samples.iter().flatten().all(|v| v.is_finite()) {
                self.buffer.push(data, samples);
            }
        }
        Ok(loss_sum * w)
    }

    /// Runs `iterations` optimiser steps, drawing datasets from `source`.
    pub fn train(
        &mut self,
        source: &mut dyn FnMut(&mut StreamRng) -> Result<TrainingExample>,
        iterations: usize,
        task_rng: &mut StreamRng,
        noise_rng: &mut StreamRng,
    ) -> Result<TrainReport> {
        let mut report = TrainReport::default();
        for _ in 0..iterations {
            let batch = (0..self.config.datasets_per_step)
                .map(|_| source(task_rng))
                .collect::<Result<Vec<_>>>()?;
            report.losses.push(self.train_step(&batch, noise_rng)?);
        }
        Ok(report)
    }

    pub fn replay_buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    /// Deterministic point estimate `θ̂ = f(D)`.
    pub fn infer_point(&self, data: &ObservationSet) -> Result<Vec<f64>> {
        match &self.head {
            PosteriorApproximation::Point(head) => {
                let mut g = Graph::new(&self.store);
                let ctx = self.context(&mut g, data)?;
                let t = head.forward(&mut g, ctx);
                Ok(g.value(t).data().to_vec())
            }
            _ => Err(Error::Capability(format!(
                "{} estimators do not produce a point estimate",
                self.kind
            ))),
        }
    }

    /// `n` posterior draws (a point estimator returns `n` copies).
    pub fn sample(
        &self,
        data: &ObservationSet,
        n: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<Vec<f64>>> {
        let active = self.active(data);
        let rows = match &self.head {
            PosteriorApproximation::Point(_) => {
                let theta = self.infer_point(data)?;
                return Ok(vec![theta; n]);
            }
            PosteriorApproximation::Gaussian(head) => {
                let mut g = Graph::new(&self.store);
                let ctx = self.context(&mut g, data)?;
                let eps = g.input(masked_normal(n, &active, rng));
                let t = head.rsample(&mut g, ctx, eps);
                let mut t = g.value(t).clone();
                zero_inactive_rows(&mut t, &active);
                t
            }
            PosteriorApproximation::Flow(head) => {
                let mut g = Graph::new(&self.store);
                let ctx = self.context(&mut g, data)?;
                let z = g.input(masked_normal(n, &active, rng));
                let (t, _) = head.forward(&mut g, ctx, z, &active);
                g.value(t).clone()
            }
            PosteriorApproximation::Diffusion(_) => {
                let ctx = self.context_value(data)?;
                let mut score = |x: &Tensor, t: f64| self.field_with_context(&ctx, x, t, &active);
                sde_sample(&self.config.schedule, &mut score, n, &active, rng)?
            }
            PosteriorApproximation::FlowMatching(_) => {
                let ctx = self.context_value(data)?;
                let mut drift = |x: &Tensor, t: f64| self.field_with_context(&ctx, x, t, &active);
                ode_sample(self.config.schedule.steps, &mut drift, n, &active, rng)?
            }
        };
        Ok((0..rows.rows())
            .map(|i| rows.row_slice(i).to_vec())
            .collect())
    }

    /// The score (score and pDEM heads) or drift (flow matching) at the rows
    /// of `theta_t`, all at time `t`.
    pub fn vector_field(&self, theta_t: &Tensor, t: f64, data: &ObservationSet) -> Result<Tensor> {
        if !matches!(
            self.head,
            PosteriorApproximation::Diffusion(_) | PosteriorApproximation::FlowMatching(_)
        ) {
            return Err(Error::Capability(format!(
                "{} estimators have no vector field",
                self.kind
            )));
        }
        if theta_t.cols() != self.num_params() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} columns, got {}",
                self.num_params(),
                theta_t.cols()
            )));
        }
        let ctx = self.context_value(data)?;
        Ok(self.field_with_context(&ctx, theta_t, t, &self.active(data)))
    }

    fn field_with_context(&self, ctx: &Tensor, x: &Tensor, t: f64, active: &[bool]) -> Tensor {
        let mut g = Graph::new(&self.store);
        let c = g.input(ctx.clone());
        let xv = g.input(x.clone());
        let ts = vec![t; x.rows()];
        let out = match &self.head {
            PosteriorApproximation::Diffusion(net) => {
                net.score(&mut g, c, xv, &ts, &self.config.schedule, active)
            }
            PosteriorApproximation::FlowMatching(net) => net.drift(&mut g, c, xv, &ts, active),
            _ => unreachable!("checked by callers"),
        };
        g.value(out).clone()
    }

    /// `log q(θ | D)` for density heads.
    pub fn log_prob(&self, theta: &[f64], data: &ObservationSet) -> Result<f64> {
        let active = self.active(data);
        let mut g = Graph::new(&self.store);
        let lq = match &self.head {
            PosteriorApproximation::Gaussian(head) => {
                let ctx = self.context(&mut g, data)?;
                let t = g.input(Tensor::row(theta.to_vec()));
                head.log_prob(&mut g, ctx, t, &active)
            }
            PosteriorApproximation::Flow(head) => {
                let ctx = self.context(&mut g, data)?;
                let t = g.input(Tensor::row(theta.to_vec()));
                head.log_prob(&mut g, ctx, t, &active)
            }
            _ => {
                return Err(Error::Capability(format!(
                    "{} estimators have no tractable density",
                    self.kind
                )))
            }
        };
        Ok(g.value(lq).item())
    }

    /// Entropy of the Gaussian head's approximation.
    pub fn entropy(&self, data: &ObservationSet) -> Result<f64> {
        match &self.head {
            PosteriorApproximation::Gaussian(head) => {
                let mut g = Graph::new(&self.store);
                let ctx = self.context(&mut g, data)?;
                let h = head.entropy(&mut g, ctx, &self.active(data));
                Ok(g.value(h).item())
            }
            _ => Err(Error::Capability(format!(
                "{} estimators have no closed-form entropy",
                self.kind
            ))),
        }
    }

    /// Mean and standard deviations of the Gaussian head.
    pub fn gaussian_params(&self, data: &ObservationSet) -> Result<(Vec<f64>, Vec<f64>)> {
        match &self.head {
            PosteriorApproximation::Gaussian(head) => {
                let mut g = Graph::new(&self.store);
                let ctx = self.context(&mut g, data)?;
                let (m, ls) = head.params(&mut g, ctx);
                Ok((
                    g.value(m).data().to_vec(),
                    g.value(ls).data().iter().map(|v| v.exp()).collect(),
                ))
            }
            _ => Err(Error::Capability(format!(
                "{} is not a Gaussian head",
                self.kind
            ))),
        }
    }

    /// Flow map base → parameters for rows of `z`; returns `(θ, logdet)`.
    pub fn flow_forward(&self, z: &Tensor, data: &ObservationSet) -> Result<(Tensor, Vec<f64>)> {
        self.flow_map(z, data, true)
    }

    /// Inverse flow map parameters → base; returns `(z, logdet)`.
    pub fn flow_inverse(
        &self,
        theta: &Tensor,
        data: &ObservationSet,
    ) -> Result<(Tensor, Vec<f64>)> {
        self.flow_map(theta, data, false)
    }

    fn flow_map(
        &self,
        x: &Tensor,
        data: &ObservationSet,
        forward: bool,
    ) -> Result<(Tensor, Vec<f64>)> {
        let PosteriorApproximation::Flow(head) = &self.head else {
            return Err(Error::Capability(format!("{} is not a flow", self.kind)));
        };
        let active = self.active(data);
        let mut g = Graph::new(&self.store);
        let ctx = self.context(&mut g, data)?;
        let xv = g.input(x.clone());
        let (y, ld) = if forward {
            head.forward(&mut g, ctx, xv, &active)
        } else {
            head.inverse(&mut g, ctx, xv, &active)
        };
        let ld = g.value(ld).data().to_vec();
        if ld.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(
                "flow log-determinant is not finite".into(),
            ));
        }
        Ok((g.value(y).clone(), ld))
    }

    pub fn save(&self, stem: &Path) -> Result<()> {
        self.store.save_checkpoint(stem)
    }

    pub fn load(&mut self, stem: &Path) -> Result<()> {
        self.store.load_checkpoint(stem)
    }
}

fn combine(g: &mut Graph, fwd: Option<Var>, rev: Option<Var>) -> Var {
    match (fwd, rev) {
        (Some(f), Some(r)) => {
            let s = g.add(f, r);
            g.scale(s, 0.5)
        }
        (Some(f), None) => f,
        (None, Some(r)) => r,
        (None, None) => unreachable!("objective selects at least one term"),
    }
}

pub(crate) fn masked_normal(n: usize, active: &[bool], rng: &mut impl Rng) -> Tensor {
    use rand_distr::{Distribution, StandardNormal};
    let mut z = Tensor::zeros(n, active.len());
    for i in 0..n {
        for (j, &a) in active.iter().enumerate() {
            let v: f64 = StandardNormal.sample(rng);
            if a {
                z.set(i, j, v);
            }
        }
    }
    z
}

fn zero_inactive_rows(t: &mut Tensor, active: &[bool]) {
    for i in 0..t.rows() {
        for (v, &a) in t.row_slice_mut(i).iter_mut().zip(active) {
            if !a {
                *v = 0.0;
            }
        }
    }
}
