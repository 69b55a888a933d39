//! Differentiable log densities: `θ` is a `1 × P` graph node, data are
//! constants.

use super::data::{ObservationSet, Targets};
use super::likelihood::bnn_layers;
use super::spec::{Family, ProbModelSpec};
use crate::nn::{Activation, Graph, Tensor, Var};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `log N(θ_active | 0, I)` as a scalar node.
pub fn log_prior_graph(g: &mut Graph, theta: Var, param_mask: &[bool]) -> Var {
    let active = param_mask.iter().filter(|&&m| m).count();
    let t = if active == param_mask.len() {
        theta
    } else {
        let m = g.input(Tensor::row(
            param_mask
                .iter()
                .map(|&m| if m { 1.0 } else { 0.0 })
                .collect(),
        ));
        g.mul(theta, m)
    };
    let sq = g.square(t);
    let s = g.sum(sq);
    let s = g.scale(s, -0.5);
    g.add_scalar(s, -0.5 * active as f64 * LN_2PI)
}

/// `Σ_{i ∈ rows} log p(y_i | x_i, θ)` as a scalar node.
pub fn log_likelihood_graph(
    g: &mut Graph,
    spec: &ProbModelSpec,
    theta: Var,
    data: &ObservationSet,
    rows: &[usize],
) -> Var {
    let d = spec.input_dim;
    let nd = data.native_dim.min(d);
    let sub = data.subset(rows);
    let k = sub.len();
    if k == 0 {
        return g.input(Tensor::scalar(0.0));
    }
    match spec.family {
        Family::Gm => {
            let x = g.input(native_cols(&sub.inputs, nd));
            let mu = g.slice_cols(theta, 0, nd);
            let neg_mu = g.neg(mu);
            let r = g.add_row(x, neg_mu);
            let sq = g.square(r);
            let s = g.sum(sq);
            let s = g.scale(s, -0.5);
            g.add_scalar(s, -0.5 * (k * nd) as f64 * LN_2PI)
        }
        Family::Gmm => {
            let kc = spec.num_clusters();
            let xt = native_cols(&sub.inputs, nd);
            let xsq: Vec<f64> = (0..k)
                .map(|i| xt.row_slice(i).iter().map(|v| v * v).sum())
                .collect();
            let x = g.input(xt);
            let m = g.reshape(theta, kc, d);
            let m = g.slice_cols(m, 0, nd);
            let cross = g.matmul_bt(x, m);
            let ones = g.input(Tensor::full(1, nd, 1.0));
            let msq = g.square(m);
            let msq = g.matmul_bt(ones, msq);
            let msq = g.scale(msq, -0.5);
            let comps = g.add_row(cross, msq);
            let offs = g.input(Tensor::from_vec(
                k,
                1,
                xsq.iter().map(|s| -0.5 * s).collect(),
            ));
            let comps = g.add_col(comps, offs);
            let lse = g.log_sum_exp_rows(comps);
            let s = g.sum(lse);
            g.add_scalar(s, k as f64 * (-(kc as f64).ln() - 0.5 * nd as f64 * LN_2PI))
        }
        _ => {
            let x = g.input(sub.inputs.clone());
            let out = outputs_graph(g, spec, theta, x);
            match &sub.targets {
                Targets::Real(y) => {
                    let s2 = spec.obs_noise_var;
                    let y = g.input(Tensor::from_vec(k, 1, y.clone()));
                    let r = g.sub(y, out);
                    let sq = g.square(r);
                    let s = g.sum(sq);
                    let s = g.scale(s, -0.5 / s2);
                    g.add_scalar(s, -0.5 * k as f64 * (2.0 * std::f64::consts::PI * s2).ln())
                }
                Targets::Class(y) => {
                    let c = spec.num_classes();
                    let mut onehot = Tensor::zeros(k, c);
                    for (i, &yi) in y.iter().enumerate() {
                        onehot.set(i, yi, 1.0);
                    }
                    let scaled = g.scale(out, 1.0 / spec.temperature);
                    let lp = g.log_softmax_rows(scaled);
                    let oh = g.input(onehot);
                    let picked = g.mul(lp, oh);
                    g.sum(picked)
                }
                Targets::None => unreachable!("conditional model without targets"),
            }
        }
    }
}

/// Log-joint over all valid rows.
pub fn log_joint_graph(
    g: &mut Graph,
    spec: &ProbModelSpec,
    theta: Var,
    data: &ObservationSet,
) -> Var {
    let mask = spec.param_mask(data.native_dim);
    let lp = log_prior_graph(g, theta, &mask);
    let ll = log_likelihood_graph(g, spec, theta, data, &data.valid_rows());
    g.add(lp, ll)
}

/// Regression means (`k × 1`) or raw logits (`k × C`) of the conditional
/// families for inputs `x`.
pub fn outputs_graph(g: &mut Graph, spec: &ProbModelSpec, theta: Var, x: Var) -> Var {
    let d = spec.input_dim;
    match spec.family {
        Family::Lr => {
            let w = g.slice_cols(theta, 0, d);
            let b = g.slice_cols(theta, d, 1);
            let xw = g.matmul_bt(x, w);
            g.add_row(xw, b)
        }
        Family::Lc => {
            let w = g.reshape(theta, spec.num_classes(), d);
            g.matmul_bt(x, w)
        }
        Family::Nlr | Family::Nlc => {
            let act = spec.activation.unwrap_or(Activation::Tanh);
            let layers = bnn_layers(spec);
            let last = layers.len() - 1;
            let mut h = x;
            for (l, layer) in layers.iter().enumerate() {
                let (fi, fo) = (layer.fan_in, layer.fan_out);
                let w = g.slice_cols(theta, layer.w, fi * fo);
                let w = g.reshape(w, fi, fo);
                let b = g.slice_cols(theta, layer.b, fo);
                let z = g.matmul(h, w);
                h = g.add_row(z, b);
                if l != last {
                    h = act.apply(g, h);
                }
            }
            h
        }
        Family::Gm | Family::Gmm => panic!("{} has no conditional outputs", spec.family),
    }
}

fn native_cols(x: &Tensor, nd: usize) -> Tensor {
    if nd == x.cols() {
        return x.clone();
    }
    let rows: Vec<Vec<f64>> = (0..x.rows())
        .map(|i| x.row_slice(i)[..nd].to_vec())
        .collect();
    if rows.is_empty() {
        Tensor::zeros(0, nd)
    } else {
        Tensor::from_rows(&rows)
    }
}
