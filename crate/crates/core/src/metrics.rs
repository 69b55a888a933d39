//! Predictive metrics over posterior samples and their CSV reports.
//!
//! L2 metrics are squared Euclidean errors averaged over query points;
//! accuracies are percentages. A point estimate is a single sample.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{argmax, forward_outputs, Family, ObservationSet, ProbModelSpec, Targets};

/// Posterior samples per task unless configured otherwise.
pub const DEFAULT_NUM_SAMPLES: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    EnsembleL2,
    SingleL2,
    EnsembleAcc,
    SingleAcc,
    GmmSingleL2,
}

impl MetricName {
    pub const ALL: [MetricName; 5] = [
        MetricName::EnsembleL2,
        MetricName::SingleL2,
        MetricName::EnsembleAcc,
        MetricName::SingleAcc,
        MetricName::GmmSingleL2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricName::EnsembleL2 => "ensemble_l2",
            MetricName::SingleL2 => "single_l2",
            MetricName::EnsembleAcc => "ensemble_acc",
            MetricName::SingleAcc => "single_acc",
            MetricName::GmmSingleL2 => "gmm_single_l2",
        }
    }

    pub fn parse(s: &str) -> Option<MetricName> {
        MetricName::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn higher_is_better(self) -> bool {
        matches!(self, MetricName::EnsembleAcc | MetricName::SingleAcc)
    }

    /// The metrics defined for a model family.
    pub fn applicable(family: Family) -> &'static [MetricName] {
        match family {
            Family::Gm | Family::Lr | Family::Nlr => {
                &[MetricName::EnsembleL2, MetricName::SingleL2]
            }
            Family::Lc | Family::Nlc => &[MetricName::EnsembleAcc, MetricName::SingleAcc],
            Family::Gmm => &[MetricName::GmmSingleL2],
        }
    }

    pub fn compute(
        self,
        samples: &[Vec<f64>],
        spec: &ProbModelSpec,
        query: &ObservationSet,
    ) -> Result<f64> {
        match self {
            MetricName::EnsembleL2 => ensemble_l2(samples, spec, query),
            MetricName::SingleL2 => single_l2(samples, spec, query),
            MetricName::EnsembleAcc => ensemble_acc(samples, spec, query),
            MetricName::SingleAcc => single_acc(samples, spec, query),
            MetricName::GmmSingleL2 => gmm_single_l2(samples, spec, query),
        }
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn check_inputs(
    samples: &[Vec<f64>],
    spec: &ProbModelSpec,
    query: &ObservationSet,
) -> Result<Vec<usize>> {
    if samples.is_empty() {
        return Err(Error::InvalidConfig(
            "metrics need at least one parameter sample".into(),
        ));
    }
    let p = spec.num_params();
    if let Some(bad) = samples.iter().find(|s| s.len() != p) {
        return Err(Error::DimensionMismatch(format!(
            "sample has {} entries, model has {p}",
            bad.len()
        )));
    }
    query.check(spec)?;
    let rows = query.valid_rows();
    if rows.is_empty() {
        return Err(Error::InvalidConfig("empty query set".into()));
    }
    Ok(rows)
}

/// Per-sample predicted vectors on the valid query rows: `[sample][row]`.
/// Regression predicts the mean; GM predicts the mean vector over the
/// native coordinates.
fn regression_predictions(
    samples: &[Vec<f64>],
    spec: &ProbModelSpec,
    query: &ObservationSet,
    rows: &[usize],
) -> Result<Vec<Vec<Vec<f64>>>> {
    match spec.family {
        Family::Gm => {
            let nd = query.native_dim.min(spec.input_dim);
            Ok(samples
                .iter()
                .map(|s| vec![s[..nd].to_vec(); rows.len()])
                .collect())
        }
        Family::Lr | Family::Nlr => {
            let sub = query.subset(rows);
            Ok(samples
                .iter()
                .map(|s| {
                    let out = forward_outputs(spec, s, &sub.inputs);
                    (0..rows.len()).map(|i| vec![out.get(i, 0)]).collect()
                })
                .collect())
        }
        f => Err(Error::Capability(format!(
            "L2 metrics are not defined for {f}; use the matching metric"
        ))),
    }
}

fn regression_truth(spec: &ProbModelSpec, query: &ObservationSet, rows: &[usize]) -> Vec<Vec<f64>> {
    match &query.targets {
        Targets::Real(y) => rows.iter().map(|&i| vec![y[i]]).collect(),
        _ => {
            let nd = query.native_dim.min(spec.input_dim);
            rows.iter().map(|&i| query.x(i)[..nd].to_vec()).collect()
        }
    }
}

/// Mean taken relative to the first value, so identical inputs average to
/// themselves bit for bit.
fn shifted_mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut it = values;
    let Some(first) = it.next() else {
        return f64::NAN;
    };
    let (mut acc, mut n) = (0.0, 1usize);
    for v in it {
        acc += v - first;
        n += 1;
    }
    first + acc / n as f64
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// `E_y ‖y − E_q[ŷ]‖²`.
pub fn ensemble_l2(
    samples: &[Vec<f64>],
    spec: &ProbModelSpec,
    query: &ObservationSet,
) -> Result<f64> {
    if spec.family == Family::Gmm {
        return Err(Error::Capability(
            "GMM has no ensemble metric; use gmm_single_l2".into(),
        ));
    }
    let rows = check_inputs(samples, spec, query)?;
    let preds = regression_predictions(samples, spec, query, &rows)?;
    let truth = regression_truth(spec, query, &rows);
    let mut total = 0.0;
    for (r, y) in truth.iter().enumerate() {
        let avg: Vec<f64> = (0..y.len())
            .map(|j| shifted_mean(preds.iter().map(|p| p[r][j])))
            .collect();
        total += sq_dist(y, &avg);
    }
    Ok(total / rows.len() as f64)
}

/// `E_q E_y ‖y − ŷ‖²`.
pub fn single_l2(
    samples: &[Vec<f64>],
    spec: &ProbModelSpec,
    query: &ObservationSet,
) -> Result<f64> {
    if spec.family == Family::Gmm {
        return Err(Error::Capability("GMM uses gmm_single_l2".into()));
    }
    let rows = check_inputs(samples, spec, query)?;
    let preds = regression_predictions(samples, spec, query, &rows)?;
    let truth = regression_truth(spec, query, &rows);
    let total: f64 = truth
        .iter()
        .enumerate()
        .map(|(r, y)| shifted_mean(preds.iter().map(|p| sq_dist(y, &p[r]))))
        .sum();
    Ok(total / rows.len() as f64)
}

fn class_predictions(
    samples: &[Vec<f64>],
    spec: &ProbModelSpec,
    query: &ObservationSet,
    rows: &[usize],
) -> Result<Vec<Vec<usize>>> {
    if !spec.family.is_classification() {
        return Err(Error::Capability(format!(
            "accuracy is not defined for {}",
            spec.family
        )));
    }
    let sub = query.subset(rows);
    Ok(samples
        .iter()
        .map(|s| {
            let logits = forward_outputs(spec, s, &sub.inputs);
            (0..rows.len())
                .map(|i| argmax(logits.row_slice(i)))
                .collect()
        })
        .collect())
}

fn class_truth(query: &ObservationSet, rows: &[usize]) -> Vec<usize> {
    rows.iter().map(|&i| query.class_target(i)).collect()
}

/// Majority vote with ties going to the lowest class index.
pub fn vote(classes: &[usize], num_classes: usize) -> usize {
    let mut counts = vec![0usize; num_classes];
    for &c in classes {
        counts[c] += 1;
    }
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best
}

/// `100 · P_y[vote(ŷ) = y]`.
pub fn ensemble_acc(
    samples: &[Vec<f64>],
    spec: &ProbModelSpec,
    query: &ObservationSet,
) -> Result<f64> {
    let rows = check_inputs(samples, spec, query)?;
    let preds = class_predictions(samples, spec, query, &rows)?;
    let truth = class_truth(query, &rows);
    let c = spec.num_classes();
    let correct = (0..rows.len())
        .filter(|&r| {
            let votes: Vec<usize> = preds.iter().map(|p| p[r]).collect();
            vote(&votes, c) == truth[r]
        })
        .count();
    Ok(100.0 * correct as f64 / rows.len() as f64)
}

/// `100 · E_q P_y[ŷ = y]`.
pub fn single_acc(
    samples: &[Vec<f64>],
    spec: &ProbModelSpec,
    query: &ObservationSet,
) -> Result<f64> {
    let rows = check_inputs(samples, spec, query)?;
    let preds = class_predictions(samples, spec, query, &rows)?;
    let truth = class_truth(query, &rows);
    let total: f64 = (0..rows.len())
        .map(|r| {
            shifted_mean(
                preds
                    .iter()
                    .map(|p| if p[r] == truth[r] { 1.0 } else { 0.0 }),
            )
        })
        .sum();
    Ok(100.0 * total / rows.len() as f64)
}

/// `E_q E_y min_k ‖y − μ̂_k‖²` over the native coordinates.
pub fn gmm_single_l2(
    samples: &[Vec<f64>],
    spec: &ProbModelSpec,
    query: &ObservationSet,
) -> Result<f64> {
    if spec.family != Family::Gmm {
        return Err(Error::Capability(format!(
            "gmm_single_l2 needs a GMM, got {}",
            spec.family
        )));
    }
    let rows = check_inputs(samples, spec, query)?;
    let d = spec.input_dim;
    let nd = query.native_dim.min(d);
    let kc = spec.num_clusters();
    let mut total = 0.0;
    for s in samples {
        for &i in &rows {
            let y = &query.x(i)[..nd];
            total += (0..kc)
                .map(|k| sq_dist(y, &s[k * d..k * d + nd]))
                .fold(f64::INFINITY, f64::min);
        }
    }
    Ok(total / (rows.len() * samples.len()) as f64)
}

/// One metric value for one (task, estimator, seed). `value` is `None`
/// for failed runs, written as `N/A`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub task_id: String,
    pub estimator: String,
    pub objective: String,
    pub seed: u64,
    pub metric: MetricName,
    pub value: Option<f64>,
    pub s: usize,
}

pub const REPORT_HEADER: [&str; 7] = [
    "task_id",
    "estimator",
    "objective",
    "seed",
    "metric",
    "value",
    "s",
];
pub const NOT_AVAILABLE: &str = "N/A";

pub fn write_reports_to<W: Write>(w: W, reports: &[MetricReport]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(REPORT_HEADER)?;
    for r in reports {
        let value = r
            .value
            .map_or_else(|| NOT_AVAILABLE.to_string(), |v| v.to_string());
        out.write_record([
            r.task_id.as_str(),
            r.estimator.as_str(),
            r.objective.as_str(),
            &r.seed.to_string(),
            r.metric.name(),
            &value,
            &r.s.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_reports_from<R: Read>(r: R) -> Result<Vec<MetricReport>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    if header != REPORT_HEADER {
        return Err(Error::Schema(format!(
            "expected header {}, found {}",
            REPORT_HEADER.join(","),
            header.join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |what: &str| Error::Schema(format!("line {line}: invalid {what}"));
        if rec.len() != REPORT_HEADER.len() {
            return Err(bad("field count"));
        }
        let value = match &rec[5] {
            NOT_AVAILABLE => None,
            v => Some(v.parse::<f64>().map_err(|_| bad("value"))?),
        };
        out.push(MetricReport {
            task_id: rec[0].to_string(),
            estimator: rec[1].to_string(),
            objective: rec[2].to_string(),
            seed: rec[3].parse().map_err(|_| bad("seed"))?,
            metric: MetricName::parse(&rec[4]).ok_or_else(|| bad("metric"))?,
            value,
            s: rec[6].parse().map_err(|_| bad("s"))?,
        });
    }
    Ok(out)
}

pub fn write_reports(path: &Path, reports: &[MetricReport]) -> Result<()> {
    write_reports_to(std::fs::File::create(path)?, reports)
}

pub fn read_reports(path: &Path) -> Result<Vec<MetricReport>> {
    read_reports_from(std::fs::File::open(path)?)
}
