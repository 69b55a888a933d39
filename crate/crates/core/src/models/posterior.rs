use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;

use super::data::{standard_normal_vec, ObservationSet, Targets};
use super::spec::{Family, ProbModelSpec};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq)]
pub enum Covariance {
    Diagonal(Vec<f64>),
    Full(DMatrix<f64>),
}

/// A multivariate normal over parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPosterior {
    pub mean: Vec<f64>,
    pub covariance: Covariance,
}

impl GaussianPosterior {
    pub fn diagonal(mean: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if mean.len() != variances.len() {
            return Err(Error::DimensionMismatch(
                "mean and variance lengths differ".into(),
            ));
        }
        if variances.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Numerical(
                "diagonal covariance entries must be positive".into(),
            ));
        }
        Ok(Self {
            mean,
            covariance: Covariance::Diagonal(variances),
        })
    }

    pub fn full(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::DimensionMismatch(
                "covariance shape differs from mean length".into(),
            ));
        }
        if Cholesky::new(cov.clone()).is_none() {
            return Err(Error::Numerical(
                "covariance is not positive definite".into(),
            ));
        }
        Ok(Self {
            mean,
            covariance: Covariance::Full(cov),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn variances(&self) -> Vec<f64> {
        match &self.covariance {
            Covariance::Diagonal(v) => v.clone(),
            Covariance::Full(c) => (0..c.nrows()).map(|i| c[(i, i)]).collect(),
        }
    }

    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        match &self.covariance {
            Covariance::Diagonal(v) => DMatrix::from_diagonal(&DVector::from_vec(v.clone())),
            Covariance::Full(c) => c.clone(),
        }
    }

    fn cholesky(&self) -> Cholesky<f64, Dyn> {
        Cholesky::new(self.covariance_matrix()).expect("covariance checked SPD at construction")
    }

    pub fn log_density(&self, theta: &[f64]) -> Result<f64> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "θ has {} entries, posterior has {}",
                theta.len(),
                self.dim()
            )));
        }
        let n = self.dim() as f64;
        match &self.covariance {
            Covariance::Diagonal(v) => {
                let mut acc = 0.0;
                for ((t, m), var) in theta.iter().zip(&self.mean).zip(v) {
                    acc += (t - m).powi(2) / var + var.ln();
                }
                Ok(-0.5 * acc - 0.5 * n * LN_2PI)
            }
            Covariance::Full(_) => {
                let chol = self.cholesky();
                let r = DVector::from_iterator(
                    self.dim(),
                    theta.iter().zip(&self.mean).map(|(t, m)| t - m),
                );
                let l = chol.l();
                let z = l.solve_lower_triangular(&r).expect("nonsingular factor");
                let logdet: f64 = 2.0 * (0..self.dim()).map(|i| l[(i, i)].ln()).sum::<f64>();
                Ok(-0.5 * z.norm_squared() - 0.5 * logdet - 0.5 * n * LN_2PI)
            }
        }
    }

    /// `n` draws `mean + L z`.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
        let p = self.dim();
        match &self.covariance {
            Covariance::Diagonal(v) => (0..n)
                .map(|_| {
                    let z = standard_normal_vec(p, rng);
                    (0..p).map(|i| self.mean[i] + v[i].sqrt() * z[i]).collect()
                })
                .collect(),
            Covariance::Full(_) => {
                let l = self.cholesky().l();
                (0..n)
                    .map(|_| {
                        let z = DVector::from_vec(standard_normal_vec(p, rng));
                        let s = &l * z;
                        (0..p).map(|i| self.mean[i] + s[i]).collect()
                    })
                    .collect()
            }
        }
    }
}

/// Closed-form posterior for the conjugate families GM and LR.
///
/// GM: `N(Σx_i / (k+1), I / (k+1))`. LR with design `Φ = [x, 1]`:
/// precision `Λ = I + ΦᵀΦ/σ²`, mean `Λ⁻¹Φᵀy/σ²`. Padded coordinates keep
/// their prior.
pub fn exact_posterior(spec: &ProbModelSpec, data: &ObservationSet) -> Result<GaussianPosterior> {
    data.check(spec)?;
    let d = spec.input_dim;
    let nd = data.native_dim.min(d);
    let rows = data.valid_rows();
    match spec.family {
        Family::Gm => {
            let k = rows.len() as f64;
            let mut mean = vec![0.0; d];
            let mut var = vec![1.0; d];
            for j in 0..nd {
                mean[j] = rows.iter().map(|&i| data.x(i)[j]).sum::<f64>() / (k + 1.0);
                var[j] = 1.0 / (k + 1.0);
            }
            GaussianPosterior::diagonal(mean, var)
        }
        Family::Lr => {
            let p = d + 1;
            let s2 = spec.obs_noise_var;
            let y = match &data.targets {
                Targets::Real(y) => y,
                _ => unreachable!("checked"),
            };
            let mut precision = DMatrix::<f64>::identity(p, p);
            let mut rhs = DVector::<f64>::zeros(p);
            let mut phi = vec![0.0; p];
            for &i in &rows {
                phi[..d].copy_from_slice(data.x(i));
                phi[d] = 1.0;
                for a in 0..p {
                    rhs[a] += phi[a] * y[i] / s2;
                    for b in 0..p {
                        precision[(a, b)] += phi[a] * phi[b] / s2;
                    }
                }
            }
            let chol = Cholesky::new(precision)
                .ok_or_else(|| Error::Numerical("posterior precision is not SPD".into()))?;
            let mean = chol.solve(&rhs);
            let cov = chol.inverse();
            let cov = (&cov + cov.transpose()) * 0.5;
            GaussianPosterior::full(mean.iter().copied().collect(), cov)
        }
        f => Err(Error::UnsupportedFamily {
            family: f.name(),
            op: "exact_posterior",
        }),
    }
}
