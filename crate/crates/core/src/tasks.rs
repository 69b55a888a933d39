//! Training and evaluation tasks: generative draws at fixed or variable
//! dimension, misspecified regression sources, and tabular CSV folds.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{HeadKind, Objective, TrainingExample};
use crate::models::{
    sample_data, sample_inputs, sample_prior, ObservationSet, ProbModelSpec, Targets,
};
use crate::nn::{Activation, Tensor};
use crate::rng::{self, StreamRng};

pub const MAX_TABULAR_FEATURES: usize = 100;
pub const GP_JITTER: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DimPolicy {
    /// Every task uses the model's input dimension.
    Fixed,
    /// Native dimension uniform on `[1, max]`, zero-padded to `max`.
    Variable { max: usize },
    /// A fixed native dimension zero-padded to the model input dimension,
    /// used to evaluate variable-dimension estimators at one size.
    Padded { native: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MisspecKind {
    Linear,
    MlpTanh,
    GpRbf,
}

/// A regression data source outside (or inside, for `Linear`) the assumed
/// model class. Inputs are standard normal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MisspecSource {
    pub kind: MisspecKind,
    pub lengthscale: f64,
    pub signal_var: f64,
    pub noise_var: f64,
    pub mlp_width: usize,
}

impl Default for MisspecSource {
    fn default() -> Self {
        Self {
            kind: MisspecKind::GpRbf,
            lengthscale: 1.0,
            signal_var: 1.0,
            noise_var: 0.25,
            mlp_width: 32,
        }
    }
}

impl MisspecSource {
    pub fn new(kind: MisspecKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DataSource {
    Generative,
    Misspec(MisspecSource),
    Tabular {
        path: PathBuf,
        target_column: String,
        fold: usize,
        folds: usize,
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSpec {
    pub model: ProbModelSpec,
    pub context_min: usize,
    pub context_max: usize,
    pub dim: DimPolicy,
    pub query_size: usize,
    pub source: DataSource,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self::generative(ProbModelSpec::gm(2))
    }
}

impl TaskSpec {
    pub fn generative(model: ProbModelSpec) -> Self {
        Self {
            model,
            context_min: 64,
            context_max: 128,
            dim: DimPolicy::Fixed,
            query_size: 100,
            source: DataSource::Generative,
        }
    }

    pub fn variable(model: ProbModelSpec) -> Self {
        let max = model.input_dim;
        Self {
            dim: DimPolicy::Variable { max },
            ..Self::generative(model)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.context_min < 1 || self.context_max < self.context_min {
            return Err(Error::InvalidConfig(
                "context range must satisfy 1 ≤ min ≤ max".into(),
            ));
        }
        if let DimPolicy::Variable { max } = self.dim {
            if max != self.model.input_dim || max == 0 {
                return Err(Error::InvalidConfig(format!(
                    "variable-dimension max ({max}) must equal the model input dimension ({})",
                    self.model.input_dim
                )));
            }
        }
        if let DimPolicy::Padded { native } = self.dim {
            if native == 0 || native > self.model.input_dim {
                return Err(Error::InvalidConfig(format!(
                    "padded native dimension {native} must lie in [1, {}]",
                    self.model.input_dim
                )));
            }
        }
        if matches!(self.source, DataSource::Misspec(_)) && !self.model.family.is_regression() {
            return Err(Error::InvalidConfig(
                "misspecified sources produce real targets; assume LR or NLR".into(),
            ));
        }
        Ok(())
    }

    /// Whether tasks from this source expose the generating parameters.
    pub fn exposes_theta(&self) -> bool {
        matches!(self.source, DataSource::Generative)
    }
}

/// One task: context, held-out queries, and `θ*` when known.
#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub theta_star: Option<Vec<f64>>,
    pub context: ObservationSet,
    pub query: ObservationSet,
}

impl Task {
    pub fn training_example(&self) -> TrainingExample {
        TrainingExample {
            data: self.context.clone(),
            theta_star: self.theta_star.clone(),
        }
    }
}

/// The same model family at a smaller input dimension.
pub fn native_spec(spec: &ProbModelSpec, native_dim: usize) -> ProbModelSpec {
    ProbModelSpec {
        input_dim: native_dim,
        ..spec.clone()
    }
}

/// Zero-pads `x` to `ambient` entries and returns the parameter mask of the
/// padded model.
pub fn embed_variable_dim(
    spec: &ProbModelSpec,
    x: &[f64],
    ambient: usize,
) -> Result<(Vec<f64>, Vec<bool>)> {
    if x.len() > ambient {
        return Err(Error::DimensionMismatch(format!(
            "cannot embed {} features into {ambient}",
            x.len()
        )));
    }
    let mut out = x.to_vec();
    out.resize(ambient, 0.0);
    let ambient_spec = native_spec(spec, ambient);
    Ok((out, ambient_spec.param_mask(x.len())))
}

/// Scatters native-dimension parameters into the active slots of the
/// ambient layout (inactive slots are zero).
pub fn embed_params(ambient: &ProbModelSpec, native_dim: usize, theta: &[f64]) -> Result<Vec<f64>> {
    let mask = ambient.param_mask(native_dim);
    let active = mask.iter().filter(|&&m| m).count();
    if active != theta.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} native parameters for {active} active slots",
            theta.len()
        )));
    }
    let mut it = theta.iter();
    Ok(mask
        .iter()
        .map(|&m| if m { *it.next().expect("counted") } else { 0.0 })
        .collect())
}

/// Zero-pads the inputs of a native-dimension dataset.
pub fn embed_observations(data: &ObservationSet, ambient: usize) -> Result<ObservationSet> {
    let nd = data.ambient_dim;
    if nd > ambient {
        return Err(Error::DimensionMismatch(format!(
            "cannot embed {nd} features into {ambient}"
        )));
    }
    let n = data.len();
    let mut inputs = Tensor::zeros(n, ambient);
    for i in 0..n {
        inputs.row_slice_mut(i)[..nd].copy_from_slice(data.x(i));
    }
    Ok(ObservationSet {
        inputs,
        targets: data.targets.clone(),
        mask: data.mask.clone(),
        ambient_dim: ambient,
        native_dim: data.native_dim.min(nd),
    })
}

fn split_set(
    inputs: &Tensor,
    targets: &Targets,
    k: usize,
) -> Result<(ObservationSet, ObservationSet)> {
    let n = inputs.rows();
    let d = inputs.cols();
    let rows = |r: std::ops::Range<usize>| {
        let v: Vec<Vec<f64>> = r.clone().map(|i| inputs.row_slice(i).to_vec()).collect();
        if v.is_empty() {
            Tensor::zeros(0, d)
        } else {
            Tensor::from_rows(&v)
        }
    };
    let make = |r: std::ops::Range<usize>| -> Result<ObservationSet> {
        let x = rows(r.clone());
        match targets {
            Targets::None => Ok(ObservationSet::unsupervised(x)),
            Targets::Real(y) => ObservationSet::new(x, Targets::Real(y[r].to_vec())),
            Targets::Class(y) => ObservationSet::new(x, Targets::Class(y[r].to_vec())),
        }
    };
    Ok((make(0..k)?, make(k..n)?))
}

/// Draws one task: context size uniform on `[context_min, context_max]`,
/// plus `query_size` fresh points from the same source.
pub fn make_task(spec: &TaskSpec, rng: &mut impl Rng) -> Result<Task> {
    spec.validate()?;
    if let DataSource::Tabular {
        path,
        target_column,
        fold,
        folds,
        seed,
    } = &spec.source
    {
        let kind = if spec.model.family.is_classification() {
            TabularKind::Classification
        } else {
            TabularKind::Regression
        };
        let task = load_tabular(path, target_column, kind)?;
        let splits = kfold(task.len(), *folds, *seed)?;
        let (context, query) = tabular_fold(&task, &splits, *fold, &spec.model)?;
        return Ok(Task {
            theta_star: None,
            context,
            query,
        });
    }
    let ambient = spec.model.input_dim;
    let native_dim = match spec.dim {
        DimPolicy::Fixed => ambient,
        DimPolicy::Variable { max } => rng.random_range(1..=max),
        DimPolicy::Padded { native } => native,
    };
    let k = rng.random_range(spec.context_min..=spec.context_max);
    let nspec = native_spec(&spec.model, native_dim);
    let (theta_star, all) = match &spec.source {
        DataSource::Generative => {
            let theta = sample_prior(&nspec, rng);
            let data = sample_data(&nspec, &theta, k + spec.query_size, rng)?;
            (
                Some(embed_params(&spec.model, native_dim, &theta.values)?),
                data,
            )
        }
        DataSource::Misspec(src) => (
            None,
            sample_misspec(src, native_dim, k + spec.query_size, rng)?,
        ),
        DataSource::Tabular { .. } => unreachable!("handled above"),
    };
    let (context, query) = split_set(&all.inputs, &all.targets, k)?;
    let mut context = embed_observations(&context, ambient)?;
    let mut query = embed_observations(&query, ambient)?;
    context.native_dim = native_dim;
    query.native_dim = native_dim;
    Ok(Task {
        theta_star,
        context,
        query,
    })
}

/// `k` input/target pairs from a misspecified regression source.
pub fn sample_misspec(
    src: &MisspecSource,
    d: usize,
    k: usize,
    rng: &mut impl Rng,
) -> Result<ObservationSet> {
    let x = sample_inputs(d, k, rng);
    let sd = src.noise_var.sqrt();
    let noise = |rng: &mut dyn rand::RngCore| -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        sd * z
    };
    let y = match src.kind {
        MisspecKind::Linear => {
            let spec = ProbModelSpec::lr(d);
            let theta = sample_prior(&spec, rng);
            (0..k)
                .map(|i| {
                    let f: f64 = x
                        .row_slice(i)
                        .iter()
                        .zip(&theta.values)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                        + theta.values[d];
                    f + noise(rng)
                })
                .collect()
        }
        MisspecKind::MlpTanh => {
            let spec = ProbModelSpec::nlr(d, 1, src.mlp_width, Activation::Tanh);
            let theta = sample_prior(&spec, rng);
            let f = crate::models::forward_outputs(&spec, &theta.values, &x);
            (0..k).map(|i| f.get(i, 0) + noise(rng)).collect()
        }
        MisspecKind::GpRbf => sample_gp_rbf(src, &x, rng)?,
    };
    ObservationSet::new(x, Targets::Real(y))
}

/// `y ~ N(0, K + σ² I)` with the RBF kernel `s² exp(−‖x−x'‖² / 2ℓ²)`.
pub fn sample_gp_rbf(src: &MisspecSource, xs: &Tensor, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let cov = gp_covariance(src, xs);
    let n = xs.rows();
    let chol = Cholesky::new(cov)
        .ok_or_else(|| Error::Numerical("GP covariance is not positive definite".into()))?;
    let z = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)));
    Ok((chol.l() * z).iter().copied().collect())
}

/// `K + (σ² + jitter) I`.
pub fn gp_covariance(src: &MisspecSource, xs: &Tensor) -> DMatrix<f64> {
    let n = xs.rows();
    DMatrix::from_fn(n, n, |i, j| {
        let d2: f64 = xs
            .row_slice(i)
            .iter()
            .zip(xs.row_slice(j))
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        let k = src.signal_var * (-d2 / (2.0 * src.lengthscale * src.lengthscale)).exp();
        if i == j {
            k + src.noise_var + GP_JITTER
        } else {
            k
        }
    })
}

/// Train and evaluation task specs for a misspecification experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct MisspecPair {
    pub train: TaskSpec,
    pub eval: TaskSpec,
    pub switched: bool,
}

/// Trains under the assumed (generative) model and evaluates on `test`.
/// With `switched`, training datasets also come from `test`; the assumed
/// likelihood is still used in the losses.
pub fn make_misspec_pair(
    assumed: &TaskSpec,
    test: MisspecSource,
    switched: bool,
) -> Result<MisspecPair> {
    assumed.validate()?;
    if assumed.source != DataSource::Generative {
        return Err(Error::InvalidConfig(
            "the assumed model must use the generative source".into(),
        ));
    }
    if !assumed.model.family.is_regression() {
        return Err(Error::InvalidConfig(
            "misspecification experiments assume LR or NLR".into(),
        ));
    }
    let eval = TaskSpec {
        source: DataSource::Misspec(test),
        ..assumed.clone()
    };
    let train = if switched {
        eval.clone()
    } else {
        assumed.clone()
    };
    Ok(MisspecPair {
        train,
        eval,
        switched,
    })
}

/// Rejects estimators whose objective needs `θ*` on a source that hides it.
pub fn check_trainable(spec: &TaskSpec, kind: HeadKind, objective: Objective) -> Result<()> {
    if objective.needs_theta_star() && !spec.exposes_theta() {
        return Err(Error::Capability(format!(
            "{kind} with the {objective} objective needs parameter samples, which this data source does not expose"
        )));
    }
    Ok(())
}

/// A reproducible stream of training examples.
pub fn training_source(spec: TaskSpec) -> impl FnMut(&mut StreamRng) -> Result<TrainingExample> {
    move |r: &mut StreamRng| Ok(make_task(&spec, r)?.training_example())
}

pub const TEST_SET_SIZE: usize = 100;

/// The held-out tasks. They depend only on `test_seed`, never on the
/// training seed.
pub fn test_set(spec: &TaskSpec, n: usize, test_seed: u64) -> Result<Vec<Task>> {
    let mut r = rng::stream(test_seed, rng::streams::TEST_SET);
    (0..n).map(|_| make_task(spec, &mut r)).collect()
}

/// Canonical byte encoding of a task list (IEEE-754 little-endian), used
/// for content hashing.
pub fn task_bytes(tasks: &[Task]) -> Vec<u8> {
    fn put_set(out: &mut Vec<u8>, s: &ObservationSet) {
        out.extend((s.len() as u64).to_le_bytes());
        out.extend((s.ambient_dim as u64).to_le_bytes());
        out.extend((s.native_dim as u64).to_le_bytes());
        for v in s.inputs.data() {
            out.extend(v.to_le_bytes());
        }
        match &s.targets {
            Targets::None => out.push(0),
            Targets::Real(y) => {
                out.push(1);
                for v in y {
                    out.extend(v.to_le_bytes());
                }
            }
            Targets::Class(y) => {
                out.push(2);
                for v in y {
                    out.extend((*v as u64).to_le_bytes());
                }
            }
        }
        out.extend(s.mask.iter().map(|&m| m as u8));
    }
    let mut out = Vec::new();
    for t in tasks {
        match &t.theta_star {
            Some(th) => {
                out.push(1);
                for v in th {
                    out.extend(v.to_le_bytes());
                }
            }
            None => out.push(0),
        }
        put_set(&mut out, &t.context);
        put_set(&mut out, &t.query);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TabularKind {
    Regression,
    Classification,
}

/// A numeric table with one target column.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularTask {
    pub feature_names: Vec<String>,
    pub features: Tensor,
    /// Raw regression targets, or class indices `0/1` as floats.
    pub target: Vec<f64>,
    pub kind: TabularKind,
    /// Original labels in index order (classification only).
    pub class_labels: Vec<String>,
}

impl TabularTask {
    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }
}

/// Reads a header-first, comma-separated CSV. Features must be numeric and
/// complete; at most 100 of them. Classification targets may be any two
/// distinct labels, mapped to 0/1 in sorted order.
pub fn load_tabular(path: &Path, target_column: &str, kind: TabularKind) -> Result<TabularTask> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    parse_tabular(&mut reader, target_column, kind)
}

pub fn parse_tabular_str(
    text: &str,
    target_column: &str,
    kind: TabularKind,
) -> Result<TabularTask> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    parse_tabular(&mut reader, target_column, kind)
}

fn parse_tabular<R: std::io::Read>(
    reader: &mut csv::Reader<R>,
    target_column: &str,
    kind: TabularKind,
) -> Result<TabularTask> {
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let target_idx = headers
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| {
            Error::Schema(format!(
                "no column named '{target_column}' (columns: {})",
                headers.join(", ")
            ))
        })?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != target_idx)
        .map(|(_, h)| h.clone())
        .collect();
    if feature_names.len() > MAX_TABULAR_FEATURES {
        return Err(Error::Tabular(format!(
            "{} features exceeds the limit of {MAX_TABULAR_FEATURES}",
            feature_names.len()
        )));
    }
    let mut rows = Vec::new();
    let mut raw_targets = Vec::new();
    let mut missing = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row_no = line + 2;
        if rec.len() != headers.len() {
            return Err(Error::Schema(format!(
                "row {row_no} has {} fields, header has {}",
                rec.len(),
                headers.len()
            )));
        }
        let mut feats = Vec::with_capacity(feature_names.len());
        for (i, cell) in rec.iter().enumerate() {
            let cell = cell.trim();
            let is_missing = cell.is_empty()
                || cell.eq_ignore_ascii_case("nan")
                || cell == "?"
                || cell.eq_ignore_ascii_case("na");
            if is_missing {
                missing.push(format!("row {row_no}, column '{}'", headers[i]));
                continue;
            }
            if i == target_idx {
                raw_targets.push(cell.to_string());
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    Error::Tabular(format!(
                        "non-numeric value '{cell}' in feature '{}' at row {row_no}",
                        headers[i]
                    ))
                })?;
                if !v.is_finite() {
                    return Err(Error::Tabular(format!(
                        "non-finite value in feature '{}' at row {row_no}",
                        headers[i]
                    )));
                }
                feats.push(v);
            }
        }
        rows.push(feats);
    }
    if !missing.is_empty() {
        return Err(Error::MissingCells(missing.join("; ")));
    }
    if rows.is_empty() {
        return Err(Error::Tabular("the table has no data rows".into()));
    }
    let (target, class_labels) = match kind {
        TabularKind::Regression => {
            let mut y = Vec::with_capacity(raw_targets.len());
            for (i, t) in raw_targets.iter().enumerate() {
                let v: f64 = t.parse().map_err(|_| {
                    Error::Tabular(format!(
                        "non-numeric regression target '{t}' at row {}",
                        i + 2
                    ))
                })?;
                y.push(v);
            }
            (y, Vec::new())
        }
        TabularKind::Classification => {
            let labels: BTreeSet<&str> = raw_targets.iter().map(|s| s.as_str()).collect();
            if labels.len() != 2 {
                return Err(Error::Tabular(format!(
                    "binary classification needs 2 labels, found {}",
                    labels.len()
                )));
            }
            let labels: Vec<String> = labels.into_iter().map(String::from).collect();
            let y = raw_targets
                .iter()
                .map(|t| if *t == labels[0] { 0.0 } else { 1.0 })
                .collect();
            (y, labels)
        }
    };
    let features = if feature_names.is_empty() {
        Tensor::zeros(rows.len(), 0)
    } else {
        Tensor::from_rows(&rows)
    };
    Ok(TabularTask {
        feature_names,
        features,
        target,
        kind,
        class_labels,
    })
}

/// Fold index per row; folds are as equal in size as possible.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSplits {
    pub folds: usize,
    pub assignment: Vec<usize>,
}

impl FoldSplits {
    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] != fold)
            .collect()
    }

    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == fold)
            .collect()
    }
}

/// Deterministic shuffled `k`-fold assignment for `n` rows.
pub fn kfold(n: usize, k: usize, seed: u64) -> Result<FoldSplits> {
    if k < 2 || k > n {
        return Err(Error::InvalidConfig(format!(
            "cannot make {k} folds from {n} rows"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, rng::streams::FOLDS));
    let mut assignment = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        assignment[row] = pos % k;
    }
    Ok(FoldSplits {
        folds: k,
        assignment,
    })
}

/// Column means and population standard deviations of selected rows.
/// Constant columns get a scale of 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Tensor, rows: &[usize]) -> Self {
        let d = x.cols();
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for &i in rows {
            for (m, v) in mean.iter_mut().zip(x.row_slice(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for &i in rows {
            for ((s, v), m) in var.iter_mut().zip(x.row_slice(i)).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        let scale = var
            .iter()
            .map(|s| if *s > 0.0 { (s / n).sqrt() } else { 1.0 })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, x: &Tensor, rows: &[usize]) -> Tensor {
        let d = x.cols();
        let mut out = Tensor::zeros(rows.len(), d);
        for (r, &i) in rows.iter().enumerate() {
            for j in 0..d {
                out.set(r, j, (x.get(i, j) - self.mean[j]) / self.scale[j]);
            }
        }
        out
    }
}

/// Z-scored features (and regression targets) for one fold, fit on the
/// fold-train rows only. Returns `(train_x, train_y, test_x, test_y)`.
pub fn zscore(
    task: &TabularTask,
    splits: &FoldSplits,
    fold: usize,
) -> (Tensor, Vec<f64>, Tensor, Vec<f64>) {
    let train = splits.train_rows(fold);
    let test = splits.test_rows(fold);
    let sx = Standardizer::fit(&task.features, &train);
    let ycol = Tensor::from_vec(task.len(), 1, task.target.clone());
    let (ytr, yte) = match task.kind {
        TabularKind::Regression => {
            let sy = Standardizer::fit(&ycol, &train);
            (
                sy.apply(&ycol, &train).into_vec(),
                sy.apply(&ycol, &test).into_vec(),
            )
        }
        TabularKind::Classification => (
            train.iter().map(|&i| task.target[i]).collect(),
            test.iter().map(|&i| task.target[i]).collect(),
        ),
    };
    (
        sx.apply(&task.features, &train),
        ytr,
        sx.apply(&task.features, &test),
        yte,
    )
}

/// Context (fold-train) and query (fold-test) sets for `model`, padded to
/// its input dimension.
pub fn tabular_fold(
    task: &TabularTask,
    splits: &FoldSplits,
    fold: usize,
    model: &ProbModelSpec,
) -> Result<(ObservationSet, ObservationSet)> {
    let p = task.num_features();
    if p > model.input_dim {
        return Err(Error::DimensionMismatch(format!(
            "{p} features but the model takes {}",
            model.input_dim
        )));
    }
    match (task.kind, model.family.is_classification()) {
        (TabularKind::Regression, false) if model.family.is_regression() => {}
        (TabularKind::Classification, true) if model.num_classes() == 2 => {}
        _ => {
            return Err(Error::InvalidConfig(format!(
                "{:?} table does not fit a {} model",
                task.kind, model.family
            )))
        }
    }
    let (xtr, ytr, xte, yte) = zscore(task, splits, fold);
    let make = |x: Tensor, y: Vec<f64>| -> Result<ObservationSet> {
        let targets = match task.kind {
            TabularKind::Regression => Targets::Real(y),
            TabularKind::Classification => Targets::Class(y.iter().map(|v| *v as usize).collect()),
        };
        let mut s = embed_observations(&ObservationSet::new(x, targets)?, model.input_dim)?;
        s.native_dim = p;
        Ok(s)
    };
    Ok((make(xtr, ytr)?, make(xte, yte)?))
}

/// The bundled toy regression table used in tests and the demo.
pub const TOY_CSV: &str = include_str!("../data/toy_regression.csv");
