use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Activation;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "GM", alias = "gm")]
    Gm,
    #[serde(rename = "GMM", alias = "gmm")]
    Gmm,
    #[serde(rename = "LR", alias = "lr")]
    Lr,
    #[serde(rename = "NLR", alias = "nlr")]
    Nlr,
    #[serde(rename = "LC", alias = "lc")]
    Lc,
    #[serde(rename = "NLC", alias = "nlc")]
    Nlc,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Gm,
        Family::Gmm,
        Family::Lr,
        Family::Nlr,
        Family::Lc,
        Family::Nlc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Gm => "GM",
            Family::Gmm => "GMM",
            Family::Lr => "LR",
            Family::Nlr => "NLR",
            Family::Lc => "LC",
            Family::Nlc => "NLC",
        }
    }

    pub fn parse(s: &str) -> Option<Family> {
        Family::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
    }

    pub fn is_classification(self) -> bool {
        matches!(self, Family::Lc | Family::Nlc)
    }

    pub fn is_regression(self) -> bool {
        matches!(self, Family::Lr | Family::Nlr)
    }

    /// GM and GMM observe `x` alone.
    pub fn is_unsupervised(self) -> bool {
        matches!(self, Family::Gm | Family::Gmm)
    }

    pub fn is_bnn(self) -> bool {
        matches!(self, Family::Nlr | Family::Nlc)
    }

    pub fn has_exact_posterior(self) -> bool {
        matches!(self, Family::Gm | Family::Lr)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const DEFAULT_OBS_NOISE_VAR: f64 = 0.25;
pub const DEFAULT_TEMPERATURE: f64 = 0.1;
pub const DEFAULT_HIDDEN_WIDTH: usize = 32;

fn default_noise() -> f64 {
    DEFAULT_OBS_NOISE_VAR
}

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}

/// Family and hyperparameters of a generative model `p(θ) p(D | θ)`.
///
/// All priors are standard normal. GMM clusters have identity covariance and
/// uniform mixing weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbModelSpec {
    pub family: Family,
    pub input_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_clusters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_layers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<Activation>,
    #[serde(default = "default_noise")]
    pub obs_noise_var: f64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

impl ProbModelSpec {
    fn base(family: Family, input_dim: usize) -> Self {
        Self {
            family,
            input_dim,
            num_classes: None,
            num_clusters: None,
            hidden_layers: None,
            hidden_width: None,
            activation: None,
            obs_noise_var: DEFAULT_OBS_NOISE_VAR,
            temperature: DEFAULT_TEMPERATURE,
        }
    }

    pub fn gm(dim: usize) -> Self {
        Self::base(Family::Gm, dim)
    }

    pub fn gmm(dim: usize, clusters: usize) -> Self {
        Self {
            num_clusters: Some(clusters),
            ..Self::base(Family::Gmm, dim)
        }
    }

    pub fn lr(dim: usize) -> Self {
        Self::base(Family::Lr, dim)
    }

    pub fn lc(dim: usize, classes: usize) -> Self {
        Self {
            num_classes: Some(classes),
            ..Self::base(Family::Lc, dim)
        }
    }

    pub fn nlr(dim: usize, hidden_layers: usize, width: usize, activation: Activation) -> Self {
        Self {
            hidden_layers: Some(hidden_layers),
            hidden_width: Some(width),
            activation: Some(activation),
            ..Self::base(Family::Nlr, dim)
        }
    }

    pub fn nlc(
        dim: usize,
        classes: usize,
        hidden_layers: usize,
        width: usize,
        activation: Activation,
    ) -> Self {
        Self {
            num_classes: Some(classes),
            hidden_layers: Some(hidden_layers),
            hidden_width: Some(width),
            activation: Some(activation),
            ..Self::base(Family::Nlc, dim)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.input_dim == 0 {
            return bad("input_dim must be positive".into());
        }
        if !(self.obs_noise_var > 0.0 && self.obs_noise_var.is_finite()) {
            return bad(format!(
                "obs_noise_var must be positive, got {}",
                self.obs_noise_var
            ));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!(
                "temperature must be positive, got {}",
                self.temperature
            ));
        }
        let f = self.family;
        match (f.is_classification(), self.num_classes) {
            (true, Some(c)) if c >= 2 => {}
            (true, _) => return bad(format!("{f} needs num_classes >= 2")),
            (false, Some(_)) => return bad(format!("{f} does not take num_classes")),
            (false, None) => {}
        }
        match (f == Family::Gmm, self.num_clusters) {
            (true, Some(k)) if k >= 2 => {}
            (true, _) => return bad("GMM needs num_clusters >= 2".into()),
            (false, Some(_)) => return bad(format!("{f} does not take num_clusters")),
            (false, None) => {}
        }
        let hidden = (self.hidden_layers, self.hidden_width, self.activation);
        if f.is_bnn() {
            match hidden {
                (Some(1 | 2), Some(w), Some(Activation::Tanh | Activation::Relu)) if w > 0 => {}
                _ => return bad(format!("{f} needs hidden_layers in {{1,2}}, hidden_width > 0 and a tanh or relu activation")),
            }
        } else if hidden != (None, None, None) {
            return bad(format!("{f} does not take hidden layer settings"));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes.unwrap_or(0)
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters.unwrap_or(1)
    }

    /// Width of the model output: classes for classifiers, 1 for regressors.
    pub fn output_dim(&self) -> usize {
        if self.family.is_classification() {
            self.num_classes()
        } else {
            1
        }
    }

    /// Feature count of one encoder token: `x` plus `y` (one-hot for classes).
    pub fn token_dim(&self) -> usize {
        match self.family {
            Family::Gm | Family::Gmm => self.input_dim,
            Family::Lr | Family::Nlr => self.input_dim + 1,
            Family::Lc | Family::Nlc => self.input_dim + self.num_classes(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.layout().len()
    }

    pub fn layout(&self) -> Layout {
        let d = self.input_dim;
        let mut b = LayoutBuilder::default();
        match self.family {
            Family::Gm => b.push("mu", 1, d),
            Family::Gmm => {
                for k in 0..self.num_clusters() {
                    b.push(&format!("mu_{k}"), 1, d);
                }
            }
            Family::Lr => {
                b.push("w", 1, d);
                b.push("b", 1, 1);
            }
            Family::Lc => b.push("W", self.num_classes(), d),
            Family::Nlr | Family::Nlc => {
                let h = self.hidden_width.unwrap_or(DEFAULT_HIDDEN_WIDTH);
                let mut fan_in = d;
                for l in 0..self.hidden_layers.unwrap_or(1) {
                    b.push(&format!("layer{l}.w"), fan_in, h);
                    b.push(&format!("layer{l}.b"), 1, h);
                    fan_in = h;
                }
                b.push("out.w", fan_in, self.output_dim());
                b.push("out.b", 1, self.output_dim());
            }
        }
        b.finish()
    }

    /// Marks the parameters that are live when only the first `native_dim`
    /// input coordinates are real and the rest are zero padding.
    pub fn param_mask(&self, native_dim: usize) -> Vec<bool> {
        let d = self.input_dim;
        let nd = native_dim.min(d);
        let layout = self.layout();
        let mut mask = vec![true; layout.len()];
        for e in layout.entries() {
            let input_rows = matches!(e.role.as_str(), "layer0.w");
            let input_cols = matches!(
                self.family,
                Family::Gm | Family::Gmm | Family::Lr | Family::Lc
            ) && e.role != "b";
            for r in 0..e.rows {
                for c in 0..e.cols {
                    let dead = (input_rows && r >= nd) || (input_cols && c >= nd);
                    if dead {
                        mask[e.offset + r * e.cols + c] = false;
                    }
                }
            }
        }
        mask
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayoutEntry {
    pub role: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl LayoutEntry {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Maps slices of a flat parameter vector to named model roles.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    entries: Vec<LayoutEntry>,
    len: usize,
}

impl Layout {
    pub fn entries(&self) -> &[LayoutEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn entry(&self, role: &str) -> Option<&LayoutEntry> {
        self.entries.iter().find(|e| e.role == role)
    }
}

#[derive(Default)]
struct LayoutBuilder {
    entries: Vec<LayoutEntry>,
    offset: usize,
}

impl LayoutBuilder {
    fn push(&mut self, role: &str, rows: usize, cols: usize) {
        self.entries.push(LayoutEntry {
            role: role.to_string(),
            offset: self.offset,
            rows,
            cols,
        });
        self.offset += rows * cols;
    }

    fn finish(self) -> Layout {
        Layout {
            entries: self.entries,
            len: self.offset,
        }
    }
}

/// A flat parameter vector together with its layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: Arc<Layout>,
}

impl ParamVector {
    pub fn new(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::DimensionMismatch(format!(
                "parameter vector has {} entries, layout expects {}",
                values.len(),
                layout.len()
            )));
        }
        Ok(Self { values, layout })
    }

    pub fn for_spec(spec: &ProbModelSpec, values: Vec<f64>) -> Result<Self> {
        Self::new(Arc::new(spec.layout()), values)
    }

    pub fn zeros(spec: &ProbModelSpec) -> Self {
        let layout = spec.layout();
        let n = layout.len();
        Self {
            values: vec![0.0; n],
            layout: Arc::new(layout),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn role(&self, role: &str) -> Option<&[f64]> {
        self.layout.entry(role).map(|e| &self.values[e.range()])
    }

    /// Splits into one `(role, rows × cols matrix)` block per layout entry.
    pub fn unflatten(&self) -> Vec<(String, crate::nn::Tensor)> {
        self.layout
            .entries()
            .iter()
            .map(|e| {
                (
                    e.role.clone(),
                    crate::nn::Tensor::from_vec(e.rows, e.cols, self.values[e.range()].to_vec()),
                )
            })
            .collect()
    }

    pub fn flatten(layout: Arc<Layout>, blocks: &[(String, crate::nn::Tensor)]) -> Result<Self> {
        if blocks.len() != layout.entries().len() {
            return Err(Error::DimensionMismatch(
                "block count differs from layout".into(),
            ));
        }
        let mut values = Vec::with_capacity(layout.len());
        for ((role, t), e) in blocks.iter().zip(layout.entries()) {
            if *role != e.role || t.shape() != (e.rows, e.cols) {
                return Err(Error::DimensionMismatch(format!(
                    "block {role} does not match layout entry {}",
                    e.role
                )));
            }
            values.extend_from_slice(t.data());
        }
        Self::new(layout, values)
    }

    /// Sets every parameter outside `mask` to zero.
    pub fn zero_inactive(&mut self, mask: &[bool]) {
        for (v, &m) in self.values.iter_mut().zip(mask) {
            if !m {
                *v = 0.0;
            }
        }
    }
}
