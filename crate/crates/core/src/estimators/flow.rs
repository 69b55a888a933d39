//! Conditional affine coupling flow.
//!
//! Block `b` keeps the coordinates with `(i + b)` even and transforms the
//! rest: `y = x ⊙ m + (1 − m) ⊙ (x · exp(s) + t)`, where `(s, t)` come from a
//! one-hidden-layer relu subnet fed with `[x ⊙ m, context]`. The subnet's
//! last layer starts at zero, so a fresh flow is the identity. Inactive
//! (padded) coordinates pass through every block unchanged.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{active_tensor, LN_2PI};
use crate::nn::{Activation, Graph, Mlp, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub blocks: usize,
    pub hidden: usize,
    /// Log-scales pass through `bound · tanh(s / bound)`.
    pub scale_bound: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            blocks: 6,
            hidden: 128,
            scale_bound: 3.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CouplingFlow {
    pub config: FlowConfig,
    pub dim: usize,
    subnets: Vec<Mlp>,
}

impl CouplingFlow {
    pub fn new(
        store: &mut ParamStore,
        config: FlowConfig,
        context_dim: usize,
        dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let subnets = (0..config.blocks)
            .map(|b| {
                Mlp::new(
                    store,
                    &format!("flow.{b}"),
                    &[dim + context_dim, config.hidden, 2 * dim],
                    Activation::Relu,
                    true,
                    rng,
                )
            })
            .collect();
        Self {
            config,
            dim,
            subnets,
        }
    }

    fn keep_mask(&self, block: usize) -> Vec<bool> {
        (0..self.dim)
            .map(|i| (i + block).is_multiple_of(2))
            .collect()
    }

    /// `(s, t)` for one block, zero on kept and inactive coordinates.
    fn scale_shift(
        &self,
        g: &mut Graph,
        block: usize,
        ctx_rows: Var,
        x: Var,
        active: &[bool],
    ) -> (Var, Var) {
        let n = g.shape(x).0;
        let keep = self.keep_mask(block);
        let keep_t = g.input(active_tensor(n, &keep));
        let free: Vec<bool> = keep.iter().zip(active).map(|(&k, &a)| !k && a).collect();
        let free_t = g.input(active_tensor(n, &free));
        let kept = g.mul(x, keep_t);
        let inp = g.concat_cols(&[kept, ctx_rows]);
        let out = self.subnets[block].forward(g, inp);
        let s = g.slice_cols(out, 0, self.dim);
        let s = g.soft_clamp(s, self.config.scale_bound);
        let s = g.mul(s, free_t);
        let t = g.slice_cols(out, self.dim, self.dim);
        let t = g.mul(t, free_t);
        (s, t)
    }

    /// Base → parameter space. Returns `(θ, log|det ∂θ/∂z|)` with the
    /// determinant per row (`n × 1`).
    pub fn forward(&self, g: &mut Graph, ctx: Var, z: Var, active: &[bool]) -> (Var, Var) {
        let n = g.shape(z).0;
        let ctx_rows = g.broadcast_rows(ctx, n);
        let mut x = z;
        let mut logdet = g.input(Tensor::zeros(n, 1));
        for b in 0..self.subnets.len() {
            let (s, t) = self.scale_shift(g, b, ctx_rows, x, active);
            let es = g.exp(s);
            let y = g.mul(x, es);
            x = g.add(y, t);
            let ld = g.sum_rows(s);
            logdet = g.add(logdet, ld);
        }
        (x, logdet)
    }

    /// Parameter → base space. Returns `(z, log|det ∂z/∂θ|)`.
    pub fn inverse(&self, g: &mut Graph, ctx: Var, theta: Var, active: &[bool]) -> (Var, Var) {
        let n = g.shape(theta).0;
        let ctx_rows = g.broadcast_rows(ctx, n);
        let mut y = theta;
        let mut logdet = g.input(Tensor::zeros(n, 1));
        for b in (0..self.subnets.len()).rev() {
            let (s, t) = self.scale_shift(g, b, ctx_rows, y, active);
            let r = g.sub(y, t);
            let neg_s = g.neg(s);
            let es = g.exp(neg_s);
            y = g.mul(r, es);
            let ld = g.sum_rows(neg_s);
            logdet = g.add(logdet, ld);
        }
        (y, logdet)
    }

    /// Standard-normal log density of the active coordinates, per row.
    pub fn base_log_prob(g: &mut Graph, z: Var, active: &[bool]) -> Var {
        let n = g.shape(z).0;
        let mask = g.input(active_tensor(n, active));
        let zm = g.mul(z, mask);
        let sq = g.square(zm);
        let s = g.sum_rows(sq);
        let s = g.scale(s, -0.5);
        let n_active = active.iter().filter(|&&a| a).count();
        g.add_scalar(s, -0.5 * n_active as f64 * LN_2PI)
    }

    /// `log q(θ) = log N(g⁻¹(θ)) + log|det ∂g⁻¹/∂θ|`, per row.
    pub fn log_prob(&self, g: &mut Graph, ctx: Var, theta: Var, active: &[bool]) -> Var {
        let (z, ld) = self.inverse(g, ctx, theta, active);
        let base = Self::base_log_prob(g, z, active);
        g.add(base, ld)
    }

    /// Draws from the flow for base noise `z`; returns `(θ, log q(θ))`.
    pub fn rsample(&self, g: &mut Graph, ctx: Var, z: Var, active: &[bool]) -> (Var, Var) {
        let (theta, ld) = self.forward(g, ctx, z, active);
        let base = Self::base_log_prob(g, z, active);
        let lq = g.sub(base, ld);
        (theta, lq)
    }
}
