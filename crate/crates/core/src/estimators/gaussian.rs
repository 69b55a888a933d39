//! Diagonal Gaussian posterior head.

use rand::Rng;

use super::{active_tensor, LN_2PI};
use crate::nn::{Dense, Graph, ParamStore, Var};

pub const LOG_SCALE_CLAMP: f64 = 7.0;

#[derive(Clone, Debug)]
pub struct DiagGaussianHead {
    pub mean: Dense,
    pub log_scale: Dense,
    pub dim: usize,
}

impl DiagGaussianHead {
    pub fn new(store: &mut ParamStore, context_dim: usize, dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            mean: Dense::new(store, "gauss.mean", context_dim, dim, rng),
            log_scale: Dense::new(store, "gauss.log_scale", context_dim, dim, rng),
            dim,
        }
    }

    /// `(mean, log_scale)`, both `1 × P`.
    pub fn params(&self, g: &mut Graph, ctx: Var) -> (Var, Var) {
        let m = self.mean.forward(g, ctx);
        let ls = self.log_scale.forward(g, ctx);
        let ls = g.clamp(ls, -LOG_SCALE_CLAMP, LOG_SCALE_CLAMP);
        (m, ls)
    }

    /// Per-row `log q(θ)` (`n × 1`) over active coordinates.
    pub fn log_prob(&self, g: &mut Graph, ctx: Var, theta: Var, active: &[bool]) -> Var {
        let n = g.shape(theta).0;
        let (m, ls) = self.params(g, ctx);
        let neg_m = g.neg(m);
        let r = g.add_row(theta, neg_m);
        let neg_ls = g.neg(ls);
        let inv_s = g.exp(neg_ls);
        let z = g.mul_row(r, inv_s);
        let zsq = g.square(z);
        let zsq = g.scale(zsq, -0.5);
        let neg_ls_rows = g.broadcast_rows(neg_ls, n);
        let per = g.add(zsq, neg_ls_rows);
        let mask = g.input(active_tensor(n, active));
        let per = g.mul(per, mask);
        let lp = g.sum_rows(per);
        let n_active = active.iter().filter(|&&a| a).count();
        g.add_scalar(lp, -0.5 * n_active as f64 * LN_2PI)
    }

    /// Reparameterised draws `mean + exp(log_scale) ⊙ ε` for `ε` (`n × P`).
    pub fn rsample(&self, g: &mut Graph, ctx: Var, eps: Var) -> Var {
        let (m, ls) = self.params(g, ctx);
        let s = g.exp(ls);
        let scaled = g.mul_row(eps, s);
        g.add_row(scaled, m)
    }

    /// Entropy over active coordinates: `Σ log σ_i + ½(1 + log 2π)`.
    pub fn entropy(&self, g: &mut Graph, ctx: Var, active: &[bool]) -> Var {
        let (_, ls) = self.params(g, ctx);
        let mask = g.input(active_tensor(1, active));
        let ls = g.mul(ls, mask);
        let h = g.sum(ls);
        let n_active = active.iter().filter(|&&a| a).count();
        g.add_scalar(h, 0.5 * n_active as f64 * (1.0 + LN_2PI))
    }
}
