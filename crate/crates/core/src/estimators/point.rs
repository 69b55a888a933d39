//! Point-estimate losses.

use crate::error::{Error, Result};
use crate::models::{log_likelihood_graph, log_prior_graph, ObservationSet, ProbModelSpec};
use crate::nn::{Graph, Var};

/// Negative (penalised) log-likelihood of `θ̂` on a minibatch.
///
/// The minibatch sum is scaled by `|D| / |B|` so it estimates the full-data
/// log-likelihood; with `map` the log prior is added once.
pub fn point_loss(
    g: &mut Graph,
    spec: &ProbModelSpec,
    theta: Var,
    data: &ObservationSet,
    rows: &[usize],
    map: bool,
) -> Result<Var> {
    if rows.is_empty() {
        return Err(Error::EmptyMinibatch);
    }
    let ll = log_likelihood_graph(g, spec, theta, data, rows);
    let mut obj = g.scale(ll, data.num_valid() as f64 / rows.len() as f64);
    if map {
        let lp = log_prior_graph(g, theta, &spec.param_mask(data.native_dim));
        obj = g.add(obj, lp);
    }
    Ok(g.neg(obj))
}
