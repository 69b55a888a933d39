//! Log densities and their gradients evaluated directly on `f64` slices.
//!
//! Used wherever many cheap evaluations are needed (MCMC, importance
//! sampling, metrics). The graph versions in `graph_density` build the same
//! quantities as differentiable nodes for training.

use std::f64::consts::PI;

use super::data::{ObservationSet, Targets};
use super::spec::{Family, ParamVector, ProbModelSpec};
use crate::error::{Error, Result};
use crate::nn::{log_sum_exp, Activation, Tensor};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub(crate) struct BnnLayer {
    pub(crate) w: usize,
    pub(crate) b: usize,
    pub(crate) fan_in: usize,
    pub(crate) fan_out: usize,
}

pub(crate) fn bnn_layers(spec: &ProbModelSpec) -> Vec<BnnLayer> {
    let layout = spec.layout();
    let mut out = Vec::new();
    let mut names: Vec<String> = (0..spec.hidden_layers.unwrap_or(1))
        .map(|l| format!("layer{l}"))
        .collect();
    names.push("out".into());
    for n in names {
        let w = layout.entry(&format!("{n}.w")).expect("bnn layout");
        let b = layout.entry(&format!("{n}.b")).expect("bnn layout");
        out.push(BnnLayer {
            w: w.offset,
            b: b.offset,
            fan_in: w.rows,
            fan_out: w.cols,
        });
    }
    out
}

/// Per-row model outputs for every input row: the regression mean
/// (`k × 1`) or the class logits before temperature scaling (`k × C`).
/// GM/GMM have no conditional output and return an empty matrix.
pub fn forward_outputs(spec: &ProbModelSpec, theta: &[f64], x: &Tensor) -> Tensor {
    let k = x.rows();
    let d = spec.input_dim;
    match spec.family {
        Family::Gm | Family::Gmm => Tensor::zeros(k, 0),
        Family::Lr => {
            let w = &theta[..d];
            let b = theta[d];
            Tensor::from_vec(k, 1, (0..k).map(|i| dot(w, x.row_slice(i)) + b).collect())
        }
        Family::Lc => {
            let c = spec.num_classes();
            let mut out = Tensor::zeros(k, c);
            for i in 0..k {
                for j in 0..c {
                    out.set(i, j, dot(&theta[j * d..(j + 1) * d], x.row_slice(i)));
                }
            }
            out
        }
        Family::Nlr | Family::Nlc => {
            let act = spec.activation.unwrap_or(Activation::Tanh);
            let mut h = x.clone();
            let layers = bnn_layers(spec);
            let last = layers.len() - 1;
            for (l, layer) in layers.iter().enumerate() {
                h = affine(&h, theta, layer);
                if l != last {
                    h = h.map(|v| act.eval(v));
                }
            }
            h
        }
    }
}

/// `f_θ(x)` of a BNN for a single input.
pub fn bnn_forward(spec: &ProbModelSpec, theta: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
    if !spec.family.is_bnn() {
        return Err(Error::UnsupportedFamily {
            family: spec.family.name(),
            op: "bnn_forward",
        });
    }
    check_theta(spec, &theta.values)?;
    if x.len() != spec.input_dim {
        return Err(Error::DimensionMismatch(format!(
            "input has {} entries, model expects {}",
            x.len(),
            spec.input_dim
        )));
    }
    Ok(forward_outputs(spec, &theta.values, &Tensor::row(x.to_vec())).into_vec())
}

fn affine(h: &Tensor, theta: &[f64], layer: &BnnLayer) -> Tensor {
    let w = Tensor::from_vec(
        layer.fan_in,
        layer.fan_out,
        theta[layer.w..layer.w + layer.fan_in * layer.fan_out].to_vec(),
    );
    let mut out = h.matmul(&w);
    let b = &theta[layer.b..layer.b + layer.fan_out];
    for i in 0..out.rows() {
        for (v, bj) in out.row_slice_mut(i).iter_mut().zip(b) {
            *v += bj;
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn check_theta(spec: &ProbModelSpec, theta: &[f64]) -> Result<()> {
    let p = spec.num_params();
    if theta.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "θ has {} entries, model has {p}",
            theta.len()
        )));
    }
    Ok(())
}

/// `log N(θ_active | 0, I)`; inactive entries are ignored.
pub fn log_prior(spec: &ProbModelSpec, theta: &[f64], param_mask: Option<&[bool]>) -> Result<f64> {
    check_theta(spec, theta)?;
    let mut acc = 0.0;
    let mut n = 0usize;
    for (i, v) in theta.iter().enumerate() {
        if param_mask.is_none_or(|m| m[i]) {
            acc += v * v;
            n += 1;
        }
    }
    Ok(-0.5 * acc - 0.5 * n as f64 * LN_2PI)
}

/// Sum of `log p(y_i | x_i, θ)` over the valid rows of `data` (or over
/// `rows`, if given; those must be valid).
pub fn log_likelihood(spec: &ProbModelSpec, theta: &[f64], data: &ObservationSet) -> Result<f64> {
    let rows = data.valid_rows();
    log_likelihood_rows(spec, theta, data, &rows)
}

pub fn log_likelihood_rows(
    spec: &ProbModelSpec,
    theta: &[f64],
    data: &ObservationSet,
    rows: &[usize],
) -> Result<f64> {
    check_theta(spec, theta)?;
    data.check(spec)?;
    Ok(likelihood_and_grad(spec, theta, data, rows, None))
}

pub fn log_joint(spec: &ProbModelSpec, theta: &[f64], data: &ObservationSet) -> Result<f64> {
    let mask = spec.param_mask(data.native_dim);
    Ok(log_prior(spec, theta, Some(&mask))? + log_likelihood(spec, theta, data)?)
}

/// `∇_θ log p(θ, D)`. Inactive (padded) parameters get zero gradient.
pub fn grad_log_joint(
    spec: &ProbModelSpec,
    theta: &[f64],
    data: &ObservationSet,
) -> Result<Vec<f64>> {
    Ok(log_joint_and_grad(spec, theta, data)?.1)
}

/// `(log p(D | θ), ∇_θ log p(D | θ))`; inactive parameters get zero gradient.
pub fn log_likelihood_and_grad(
    spec: &ProbModelSpec,
    theta: &[f64],
    data: &ObservationSet,
) -> Result<(f64, Vec<f64>)> {
    check_theta(spec, theta)?;
    data.check(spec)?;
    let mask = spec.param_mask(data.native_dim);
    let mut grad = vec![0.0; theta.len()];
    let rows = data.valid_rows();
    let ll = likelihood_and_grad(spec, theta, data, &rows, Some(&mut grad));
    for (g, &m) in grad.iter_mut().zip(&mask) {
        if !m {
            *g = 0.0;
        }
    }
    Ok((ll, grad))
}

pub fn log_joint_and_grad(
    spec: &ProbModelSpec,
    theta: &[f64],
    data: &ObservationSet,
) -> Result<(f64, Vec<f64>)> {
    check_theta(spec, theta)?;
    data.check(spec)?;
    let mask = spec.param_mask(data.native_dim);
    let mut grad = vec![0.0; theta.len()];
    let rows = data.valid_rows();
    let ll = likelihood_and_grad(spec, theta, data, &rows, Some(&mut grad));
    let lp = log_prior(spec, theta, Some(&mask))?;
    for i in 0..theta.len() {
        if mask[i] {
            grad[i] -= theta[i];
        } else {
            grad[i] = 0.0;
        }
    }
    Ok((lp + ll, grad))
}

/// Shared implementation: returns the log-likelihood and, when `grad` is
/// given, adds its gradient into it.
fn likelihood_and_grad(
    spec: &ProbModelSpec,
    theta: &[f64],
    data: &ObservationSet,
    rows: &[usize],
    mut grad: Option<&mut Vec<f64>>,
) -> f64 {
    let d = spec.input_dim;
    let nd = data.native_dim.min(d);
    let mut total = 0.0;
    match spec.family {
        Family::Gm => {
            for &i in rows {
                let x = data.x(i);
                let mut sq = 0.0;
                for j in 0..nd {
                    let r = x[j] - theta[j];
                    sq += r * r;
                    if let Some(g) = grad.as_deref_mut() {
                        g[j] += r;
                    }
                }
                total += -0.5 * sq - 0.5 * nd as f64 * LN_2PI;
            }
        }
        Family::Gmm => {
            let kc = spec.num_clusters();
            let log_pi = -(kc as f64).ln();
            let mut comps = vec![0.0; kc];
            for &i in rows {
                let x = data.x(i);
                for (c, comp) in comps.iter_mut().enumerate() {
                    let mu = &theta[c * d..c * d + nd];
                    let sq: f64 = mu.iter().zip(x).map(|(m, v)| (v - m) * (v - m)).sum();
                    *comp = log_pi - 0.5 * sq - 0.5 * nd as f64 * LN_2PI;
                }
                let lse = log_sum_exp(&comps);
                total += lse;
                if let Some(g) = grad.as_deref_mut() {
                    for (c, comp) in comps.iter().enumerate() {
                        let r = (comp - lse).exp();
                        for j in 0..nd {
                            g[c * d + j] += r * (x[j] - theta[c * d + j]);
                        }
                    }
                }
            }
        }
        Family::Lr | Family::Nlr | Family::Lc | Family::Nlc => {
            let sub = data.subset(rows);
            let (ll, dout) = output_loglik(spec, theta, &sub);
            total = ll;
            if let Some(g) = grad {
                backprop_outputs(spec, theta, &sub.inputs, &dout, g);
            }
        }
    }
    total
}

/// Log-likelihood of conditional models and its gradient w.r.t. the model
/// outputs (`k × out`).
fn output_loglik(spec: &ProbModelSpec, theta: &[f64], data: &ObservationSet) -> (f64, Tensor) {
    let out = forward_outputs(spec, theta, &data.inputs);
    let k = data.len();
    let mut dout = Tensor::zeros(k, out.cols());
    let mut total = 0.0;
    match &data.targets {
        Targets::Real(y) => {
            let s2 = spec.obs_noise_var;
            for (i, &yi) in y.iter().enumerate().take(k) {
                let r = yi - out.get(i, 0);
                total += -0.5 * r * r / s2 - 0.5 * (2.0 * PI * s2).ln();
                dout.set(i, 0, r / s2);
            }
        }
        Targets::Class(y) => {
            let tau = spec.temperature;
            for i in 0..k {
                let scaled: Vec<f64> = out.row_slice(i).iter().map(|l| l / tau).collect();
                let lse = log_sum_exp(&scaled);
                total += scaled[y[i]] - lse;
                for (c, s) in scaled.iter().enumerate() {
                    let p = (s - lse).exp();
                    let ind = if c == y[i] { 1.0 } else { 0.0 };
                    dout.set(i, c, (ind - p) / tau);
                }
            }
        }
        Targets::None => unreachable!("conditional model without targets"),
    }
    (total, dout)
}

fn backprop_outputs(
    spec: &ProbModelSpec,
    theta: &[f64],
    x: &Tensor,
    dout: &Tensor,
    grad: &mut [f64],
) {
    let d = spec.input_dim;
    match spec.family {
        Family::Lr => {
            for i in 0..x.rows() {
                let r = dout.get(i, 0);
                for (j, gj) in grad.iter_mut().enumerate().take(d) {
                    *gj += r * x.get(i, j);
                }
                grad[d] += r;
            }
        }
        Family::Lc => {
            // ∂/∂W = doutᵀ · x
            let gw = dout.matmul_at(x);
            for (g, v) in grad.iter_mut().zip(gw.data()) {
                *g += v;
            }
        }
        Family::Nlr | Family::Nlc => {
            let act = spec.activation.unwrap_or(Activation::Tanh);
            let layers = bnn_layers(spec);
            let last = layers.len() - 1;
            // Forward pass keeping pre-activations and layer inputs.
            let mut inputs = vec![x.clone()];
            let mut pre = Vec::new();
            for (l, layer) in layers.iter().enumerate() {
                let z = affine(inputs.last().expect("input"), theta, layer);
                if l != last {
                    inputs.push(z.map(|v| act.eval(v)));
                }
                pre.push(z);
            }
            let mut delta = dout.clone();
            for l in (0..layers.len()).rev() {
                let layer = &layers[l];
                if l != last {
                    delta = delta.zip_map(&pre[l], |dl, z| dl * activation_derivative(act, z));
                }
                let gw = inputs[l].matmul_at(&delta);
                for (g, v) in grad[layer.w..layer.w + gw.len()].iter_mut().zip(gw.data()) {
                    *g += v;
                }
                for i in 0..delta.rows() {
                    for (g, v) in grad[layer.b..layer.b + layer.fan_out]
                        .iter_mut()
                        .zip(delta.row_slice(i))
                    {
                        *g += v;
                    }
                }
                if l > 0 {
                    let w = Tensor::from_vec(
                        layer.fan_in,
                        layer.fan_out,
                        theta[layer.w..layer.w + layer.fan_in * layer.fan_out].to_vec(),
                    );
                    delta = delta.matmul_bt(&w);
                }
            }
        }
        Family::Gm | Family::Gmm => unreachable!(),
    }
}

fn activation_derivative(act: Activation, z: f64) -> f64 {
    match act {
        Activation::Tanh => 1.0 - z.tanh().powi(2),
        Activation::Relu => {
            if z > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Silu => {
            let s = 1.0 / (1.0 + (-z).exp());
            s * (1.0 + z * (1.0 - s))
        }
    }
}

/// Mode of `p(y | x, θ)` for one input.
#[derive(Clone, Debug, PartialEq)]
pub enum Prediction {
    Real(f64),
    Class(usize),
    /// GM: `θ` itself.
    Vector(Vec<f64>),
    /// GMM: the cluster means.
    Clusters(Vec<Vec<f64>>),
}

pub fn predict_mode(
    spec: &ProbModelSpec,
    theta: &ParamVector,
    x: Option<&[f64]>,
) -> Result<Prediction> {
    check_theta(spec, &theta.values)?;
    let d = spec.input_dim;
    match spec.family {
        Family::Gm => Ok(Prediction::Vector(theta.values.clone())),
        Family::Gmm => Ok(Prediction::Clusters(
            theta.values.chunks(d).map(<[f64]>::to_vec).collect(),
        )),
        _ => {
            let x = x.ok_or_else(|| {
                Error::DimensionMismatch("conditional model needs an input".into())
            })?;
            if x.len() != d {
                return Err(Error::DimensionMismatch(format!(
                    "input has {} entries, model expects {d}",
                    x.len()
                )));
            }
            let out = forward_outputs(spec, &theta.values, &Tensor::row(x.to_vec()));
            Ok(if spec.family.is_regression() {
                Prediction::Real(out.item())
            } else {
                Prediction::Class(argmax(out.data()))
            })
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
