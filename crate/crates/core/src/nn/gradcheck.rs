//! Central finite-difference checks for graph gradients.
//!
//! Steps are `1e-4 · max(1, |x|)`. A coordinate's relative error is
//! `|analytic − numeric| / max(|analytic|, |numeric|, floor)` with
//! `floor = 1e-6 · max(1, ‖analytic‖∞)`, so coordinates whose true gradient is
//! zero are compared on the scale of the whole gradient. Relu kinks are not
//! differentiable: callers keep pre-activations away from exactly zero.

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-4;

fn relative_errors(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-6 * scale;
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Checks the gradient of a scalar function of one differentiable input.
pub fn check_leaf_gradient(build: &dyn Fn(&mut Graph, Var) -> Var, x: &Tensor, step: f64) -> f64 {
    let store = ParamStore::new();
    let eval = |x: &Tensor| {
        let mut g = Graph::new(&store);
        let v = g.leaf(x.clone());
        let out = build(&mut g, v);
        g.value(out).item()
    };
    let mut g = Graph::new(&store);
    let v = g.leaf(x.clone());
    let out = build(&mut g, v);
    let analytic = g.backward_full(out, v);

    let mut numeric = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let h = step * x.data()[i].abs().max(1.0);
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        numeric.push((eval(&plus) - eval(&minus)) / (2.0 * h));
    }
    relative_errors(analytic.data(), &numeric)
}

/// Compares backward-pass parameter gradients with central differences.
///
/// `loss_fn` builds the scalar loss on a graph over the given store. At most
/// `max_coords` scalar coordinates are checked (evenly strided over the flat
/// parameter vector); pass `usize::MAX` to check all of them. Returns the
/// maximum relative error.
pub fn finite_diff_check(
    store: &ParamStore,
    loss_fn: &dyn Fn(&mut Graph) -> Var,
    step: f64,
    max_coords: usize,
) -> f64 {
    let mut g = Graph::new(store);
    let loss = loss_fn(&mut g);
    let analytic = g.backward(loss).flatten(store);
    drop(g);

    let base = store.flatten();
    let n = base.len();
    let stride = if max_coords >= n {
        1
    } else {
        n.div_ceil(max_coords)
    };
    let mut probe = store.clone();
    let mut eval = |flat: &[f64]| {
        probe.load_flat(flat).expect("same layout");
        let mut g = Graph::new(&probe);
        let loss = loss_fn(&mut g);
        g.value(loss).item()
    };

    let mut a_sel = Vec::new();
    let mut n_sel = Vec::new();
    let mut flat = base.clone();
    for i in (0..n).step_by(stride) {
        let h = step * base[i].abs().max(1.0);
        flat[i] = base[i] + h;
        let up = eval(&flat);
        flat[i] = base[i] - h;
        let down = eval(&flat);
        flat[i] = base[i];
        a_sel.push(analytic[i]);
        n_sel.push((up - down) / (2.0 * h));
    }
    relative_errors(&a_sel, &n_sel)
}
