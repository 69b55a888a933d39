use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::likelihood::forward_outputs;
use super::spec::{Family, ParamVector, ProbModelSpec};
use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    /// GM/GMM: the observations are the rows of `inputs`.
    None,
    Real(Vec<f64>),
    Class(Vec<usize>),
}

impl Targets {
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> Option<usize> {
        match self {
            Targets::None => None,
            Targets::Real(v) => Some(v.len()),
            Targets::Class(v) => Some(v.len()),
        }
    }
}

/// A dataset `D = {(x_i, y_i)}` with a row validity mask.
///
/// Inputs may be zero-padded beyond `native_dim` up to `ambient_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    pub inputs: Tensor,
    pub targets: Targets,
    pub mask: Vec<bool>,
    pub ambient_dim: usize,
    pub native_dim: usize,
}

impl ObservationSet {
    pub fn new(inputs: Tensor, targets: Targets) -> Result<Self> {
        let k = inputs.rows();
        if let Some(n) = targets.len() {
            if n != k {
                return Err(Error::DimensionMismatch(format!(
                    "{k} inputs but {n} targets"
                )));
            }
        }
        let d = inputs.cols();
        Ok(Self {
            inputs,
            targets,
            mask: vec![true; k],
            ambient_dim: d,
            native_dim: d,
        })
    }

    pub fn unsupervised(inputs: Tensor) -> Self {
        Self::new(inputs, Targets::None).expect("no targets to mismatch")
    }

    pub fn empty(spec: &ProbModelSpec) -> Self {
        let targets = match spec.family {
            Family::Gm | Family::Gmm => Targets::None,
            Family::Lr | Family::Nlr => Targets::Real(Vec::new()),
            Family::Lc | Family::Nlc => Targets::Class(Vec::new()),
        };
        Self {
            inputs: Tensor::zeros(0, spec.input_dim),
            targets,
            mask: Vec::new(),
            ambient_dim: spec.input_dim,
            native_dim: spec.input_dim,
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn valid_rows(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.mask[i]).collect()
    }

    pub fn num_valid(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        self.inputs.row_slice(i)
    }

    pub fn real_target(&self, i: usize) -> f64 {
        match &self.targets {
            Targets::Real(y) => y[i],
            _ => panic!("dataset has no real-valued targets"),
        }
    }

    pub fn class_target(&self, i: usize) -> usize {
        match &self.targets {
            Targets::Class(y) => y[i],
            _ => panic!("dataset has no class targets"),
        }
    }

    /// Keeps only `rows`, in the given order.
    pub fn subset(&self, rows: &[usize]) -> ObservationSet {
        let data: Vec<Vec<f64>> = rows.iter().map(|&i| self.x(i).to_vec()).collect();
        let inputs = if data.is_empty() {
            Tensor::zeros(0, self.inputs.cols())
        } else {
            Tensor::from_rows(&data)
        };
        let targets = match &self.targets {
            Targets::None => Targets::None,
            Targets::Real(y) => Targets::Real(rows.iter().map(|&i| y[i]).collect()),
            Targets::Class(y) => Targets::Class(rows.iter().map(|&i| y[i]).collect()),
        };
        ObservationSet {
            inputs,
            targets,
            mask: rows.iter().map(|&i| self.mask[i]).collect(),
            ambient_dim: self.ambient_dim,
            native_dim: self.native_dim,
        }
    }

    /// Checks that the inputs and targets agree with `spec`.
    pub fn check(&self, spec: &ProbModelSpec) -> Result<()> {
        if self.inputs.cols() != spec.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "dataset has {} input columns, model expects {}",
                self.inputs.cols(),
                spec.input_dim
            )));
        }
        if self.mask.len() != self.len() {
            return Err(Error::DimensionMismatch(
                "mask length differs from row count".into(),
            ));
        }
        let ok = match (&self.targets, spec.family) {
            (Targets::None, f) => f.is_unsupervised(),
            (Targets::Real(_), f) => f.is_regression(),
            (Targets::Class(y), f) => {
                f.is_classification() && y.iter().all(|&c| c < spec.num_classes())
            }
        };
        if !ok {
            return Err(Error::DimensionMismatch(format!(
                "targets do not fit a {} model",
                spec.family
            )));
        }
        Ok(())
    }

    /// One feature row per observation for the set encoder: `x` followed by
    /// `y` (one-hot for classes, nothing for GM/GMM).
    pub fn token_features(&self, spec: &ProbModelSpec) -> Tensor {
        let d = self.inputs.cols();
        let width = spec.token_dim();
        let mut out = Tensor::zeros(self.len(), width);
        for i in 0..self.len() {
            let row = out.row_slice_mut(i);
            row[..d].copy_from_slice(self.x(i));
            match &self.targets {
                Targets::None => {}
                Targets::Real(y) => row[d] = y[i],
                Targets::Class(y) => row[d + y[i]] = 1.0,
            }
        }
        out
    }
}

pub fn standard_normal_vec(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// `θ ~ N(0, I_P)`.
pub fn sample_prior(spec: &ProbModelSpec, rng: &mut impl Rng) -> ParamVector {
    let mut theta = ParamVector::zeros(spec);
    for v in &mut theta.values {
        *v = StandardNormal.sample(rng);
    }
    theta
}

/// Draws `k` inputs from `N(0, I)` (GM/GMM: draws from the model itself).
pub fn sample_inputs(d: usize, k: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::from_vec(k, d, standard_normal_vec(k * d, rng))
}

/// Draws `k` i.i.d. observations from `p(D | θ)`.
pub fn sample_data(
    spec: &ProbModelSpec,
    theta: &ParamVector,
    k: usize,
    rng: &mut impl Rng,
) -> Result<ObservationSet> {
    if theta.len() != spec.num_params() {
        return Err(Error::DimensionMismatch(format!(
            "θ has {} entries, model has {}",
            theta.len(),
            spec.num_params()
        )));
    }
    let d = spec.input_dim;
    match spec.family {
        Family::Gm => {
            let mut x = sample_inputs(d, k, rng);
            for i in 0..k {
                for (v, m) in x.row_slice_mut(i).iter_mut().zip(&theta.values) {
                    *v += m;
                }
            }
            Ok(ObservationSet::unsupervised(x))
        }
        Family::Gmm => {
            let kc = spec.num_clusters();
            let mut x = sample_inputs(d, k, rng);
            for i in 0..k {
                let c = rng.random_range(0..kc);
                let mu = &theta.values[c * d..(c + 1) * d];
                for (v, m) in x.row_slice_mut(i).iter_mut().zip(mu) {
                    *v += m;
                }
            }
            Ok(ObservationSet::unsupervised(x))
        }
        Family::Lr | Family::Nlr => {
            let x = sample_inputs(d, k, rng);
            let means = forward_outputs(spec, &theta.values, &x);
            let sd = spec.obs_noise_var.sqrt();
            let y = (0..k)
                .map(|i| {
                    let z: f64 = StandardNormal.sample(rng);
                    means.get(i, 0) + sd * z
                })
                .collect();
            ObservationSet::new(x, Targets::Real(y))
        }
        Family::Lc | Family::Nlc => {
            let x = sample_inputs(d, k, rng);
            let logits = forward_outputs(spec, &theta.values, &x);
            let y = (0..k)
                .map(|i| sample_categorical(logits.row_slice(i), spec.temperature, rng))
                .collect();
            ObservationSet::new(x, Targets::Class(y))
        }
    }
}

/// Draws a class from `softmax(logits / τ)`.
pub fn sample_categorical(logits: &[f64], temperature: f64, rng: &mut impl Rng) -> usize {
    let probs = softmax_scaled(logits, temperature);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (c, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return c;
        }
    }
    probs.len() - 1
}

pub fn softmax_scaled(logits: &[f64], temperature: f64) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits
        .iter()
        .map(|l| ((l - m) / temperature).exp())
        .collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}
