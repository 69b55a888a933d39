//! Config-driven experiment runner.
//!
//! One experiment trains (or, for baselines, directly applies) a method on a
//! task for several seeds and evaluates it on frozen held-out task sets.
//! Each `(config, seed)` cell is single-threaded and uses its own random
//! streams, so results do not depend on how cells are scheduled.

pub mod presets;
pub mod rank;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{self, ChainConfig, ChainOutput};
use crate::error::{Error, Result};
use crate::estimators::{
    check_combination, EstimatorConfig, HeadKind, InContextEstimator, Objective,
};
use crate::metrics::{write_reports, MetricName, MetricReport, DEFAULT_NUM_SAMPLES};
use crate::models::{ObservationSet, ProbModelSpec};
use crate::rng::{self, streams, StreamRng};
use crate::tasks::{
    check_trainable, embed_params, native_spec, task_bytes, test_set, training_source, DataSource,
    DimPolicy, Task, TaskSpec, TEST_SET_SIZE,
};

pub use rank::{
    aggregate_rank, aggregate_rank_files, read_rank_csv, write_rank_csv, Grouping, RankShare,
};

/// Non-amortised reference procedures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    Random,
    TruePosterior,
    Optimization,
    LangevinSingle,
    LangevinMulti,
    HmcSingle,
    HmcMulti,
}

impl Baseline {
    pub const ALL: [Baseline; 7] = [
        Baseline::Random,
        Baseline::TruePosterior,
        Baseline::Optimization,
        Baseline::LangevinSingle,
        Baseline::LangevinMulti,
        Baseline::HmcSingle,
        Baseline::HmcMulti,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::Random => "random",
            Baseline::TruePosterior => "true_posterior",
            Baseline::Optimization => "optimization",
            Baseline::LangevinSingle => "langevin_single",
            Baseline::LangevinMulti => "langevin_multi",
            Baseline::HmcSingle => "hmc_single",
            Baseline::HmcMulti => "hmc_multi",
        }
    }

    pub fn parse(s: &str) -> Option<Baseline> {
        Baseline::ALL.into_iter().find(|b| b.name() == s)
    }
}

/// What an experiment runs: an in-context estimator or a baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Method {
    Estimator {
        head: HeadKind,
        objective: Objective,
    },
    Baseline {
        baseline: Baseline,
    },
}

impl Default for Method {
    fn default() -> Self {
        Method::Baseline {
            baseline: Baseline::Random,
        }
    }
}

impl Method {
    /// Parses a CLI estimator name: a head kind (which needs an objective)
    /// or a baseline name.
    pub fn parse(estimator: &str, objective: Option<&str>) -> Result<Method> {
        if let Some(head) = HeadKind::parse(estimator) {
            let objective = objective.ok_or_else(|| {
                Error::InvalidConfig(format!("estimator {estimator} needs an objective"))
            })?;
            let objective = Objective::parse(objective)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown objective {objective}")))?;
            check_combination(head, objective)?;
            return Ok(Method::Estimator { head, objective });
        }
        if let Some(baseline) = Baseline::parse(estimator) {
            return Ok(Method::Baseline { baseline });
        }
        let heads: Vec<&str> = HeadKind::ALL.iter().map(|h| h.name()).collect();
        let bases: Vec<&str> = Baseline::ALL.iter().map(|b| b.name()).collect();
        Err(Error::InvalidConfig(format!(
            "unknown estimator {estimator}; expected one of {} or a baseline ({})",
            heads.join(", "),
            bases.join(", ")
        )))
    }

    pub fn estimator_id(self) -> &'static str {
        match self {
            Method::Estimator { head, .. } => head.name(),
            Method::Baseline { baseline } => baseline.name(),
        }
    }

    /// The objective column of a report; `-` for baselines.
    pub fn objective_id(self) -> &'static str {
        match self {
            Method::Estimator { objective, .. } => objective.name(),
            Method::Baseline { .. } => "-",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub langevin: ChainConfig,
    pub hmc: ChainConfig,
    /// Chains in the multiple-chain modes.
    pub multi_chains: usize,
    pub optimization_steps: usize,
    /// Run the doubling step-size search on each dataset before sampling.
    pub tune_step_size: bool,
    pub max_doublings: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            langevin: ChainConfig::langevin(),
            hmc: ChainConfig::hmc(),
            multi_chains: 10,
            optimization_steps: 500,
            tune_step_size: false,
            max_doublings: 8,
        }
    }
}

/// A held-out task set with its report id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalTaskSpec {
    pub id: String,
    pub task: TaskSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Report id of the training task; derived from the model when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task_id: Option<String>,
    /// Overrides the estimator column of reports.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub iterations: usize,
    pub seeds: usize,
    pub first_seed: u64,
    /// Held-out datasets per task set.
    pub eval_datasets: usize,
    pub test_seed: u64,
    /// Posterior samples per dataset for the metrics.
    pub num_samples: usize,
    pub out_dir: PathBuf,
    /// Save an intermediate checkpoint every this many iterations (0: final only).
    pub checkpoint_every: usize,
    /// Worker threads across seeds.
    pub workers: usize,
    pub method: Method,
    pub task: TaskSpec,
    /// Evaluation task sets; empty means the training task itself.
    pub eval: Vec<EvalTaskSpec>,
    pub estimator: EstimatorConfig,
    pub baselines: BaselineConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task_id: None,
            label: None,
            iterations: 0,
            seeds: 6,
            first_seed: 0,
            eval_datasets: TEST_SET_SIZE,
            test_seed: 0,
            num_samples: DEFAULT_NUM_SAMPLES,
            out_dir: PathBuf::from("runs/default"),
            checkpoint_every: 0,
            workers: 1,
            method: Method::default(),
            task: TaskSpec::default(),
            eval: Vec::new(),
            estimator: EstimatorConfig::default(),
            baselines: BaselineConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("config: {}", e.message())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self)
            .map_err(|e| Error::InvalidConfig(format!("cannot serialise config: {e}")))
    }

    /// A config for one preset with the given method.
    pub fn from_preset(preset: &presets::Preset, method: Method) -> Self {
        Self {
            task_id: Some(preset.id.clone()),
            iterations: preset.iterations,
            method,
            task: preset.train.clone(),
            eval: preset.evals.clone(),
            ..Self::default()
        }
    }

    pub fn task_id(&self) -> String {
        self.task_id
            .clone()
            .unwrap_or_else(|| task_label(&self.task))
    }

    pub fn estimator_label(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| self.method.estimator_id().to_string())
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64)
            .map(|i| self.first_seed + i)
            .collect()
    }

    /// The evaluation task sets, defaulting to the training task.
    pub fn eval_specs(&self) -> Vec<EvalTaskSpec> {
        if self.eval.is_empty() {
            vec![EvalTaskSpec {
                id: self.task_id(),
                task: self.task.clone(),
            }]
        } else {
            self.eval.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.seeds == 0 {
            return bad("seeds must be at least 1".into());
        }
        if self.eval_datasets == 0 || self.num_samples == 0 {
            return bad("eval_datasets and num_samples must be at least 1".into());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        self.task.validate()?;
        for e in &self.eval {
            e.task.validate()?;
            if e.task.model != self.task.model {
                return bad(format!(
                    "evaluation set {} uses a different model than training",
                    e.id
                ));
            }
        }
        self.estimator.validate()?;
        match self.method {
            Method::Estimator { head, objective } => {
                check_combination(head, objective)?;
                if self.iterations > 0 {
                    check_trainable(&self.task, head, objective)?;
                }
            }
            Method::Baseline { baseline } => {
                let b = &self.baselines;
                b.langevin.validate()?;
                b.hmc.validate()?;
                if b.multi_chains == 0 {
                    return bad("multi_chains must be at least 1".into());
                }
                if baseline == Baseline::TruePosterior
                    && !self.task.model.family.has_exact_posterior()
                {
                    return Err(Error::UnsupportedFamily {
                        family: self.task.model.family.name(),
                        op: "true_posterior",
                    });
                }
            }
        }
        Ok(())
    }
}

/// A readable id for a task spec, e.g. `nlc_d25_l2_relu_c5`.
pub fn task_label(spec: &TaskSpec) -> String {
    let m = &spec.model;
    let mut s = format!("{}_d{}", m.family.name().to_lowercase(), m.input_dim);
    if let Some(k) = m.num_clusters {
        write!(s, "_k{k}").expect("string write");
    }
    if let Some(l) = m.hidden_layers {
        write!(s, "_l{l}").expect("string write");
    }
    if let Some(a) = m.activation {
        write!(s, "_{}", format!("{a:?}").to_lowercase()).expect("string write");
    }
    if m.family.is_classification() {
        write!(s, "_c{}", m.num_classes()).expect("string write");
    }
    match spec.dim {
        DimPolicy::Fixed => {}
        DimPolicy::Variable { .. } => s.insert_str(0, "var_"),
        DimPolicy::Padded { native } => write!(s, "_n{native}").expect("string write"),
    }
    s
}

/// A frozen held-out task set.
#[derive(Clone, Debug)]
pub struct EvalSet {
    pub id: String,
    pub spec: TaskSpec,
    pub tasks: Vec<Task>,
}

impl EvalSet {
    /// Builds the set; tabular sources yield their single fold.
    pub fn build(id: &str, spec: &TaskSpec, n: usize, test_seed: u64) -> Result<Self> {
        let n = if matches!(spec.source, DataSource::Tabular { .. }) {
            1
        } else {
            n
        };
        Ok(Self {
            id: id.to_string(),
            spec: spec.clone(),
            tasks: test_set(spec, n, test_seed)?,
        })
    }

    pub fn content_hash(&self) -> String {
        content_hash(&task_bytes(&self.tasks))
    }
}

/// Git-style object hash: SHA-256 over `blob <len>\0` followed by the bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// A cell or evaluation set that produced `N/A` rows.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub seed: u64,
    pub task_id: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestSetDigest {
    pub id: String,
    pub datasets: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, Default)]
pub struct ExperimentOutput {
    pub reports: Vec<MetricReport>,
    pub failures: Vec<Failure>,
    pub test_sets: Vec<TestSetDigest>,
    /// Final training loss per seed for estimators that trained.
    pub final_losses: Vec<(u64, f64)>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    estimator: String,
    objective: &'a str,
    seeds: Vec<u64>,
    test_sets: &'a [TestSetDigest],
    failures: &'a [Failure],
    config: &'a ExperimentConfig,
}

/// Errors that mark a run as failed rather than aborting the experiment.
pub fn is_run_failure(e: &Error) -> bool {
    matches!(
        e,
        Error::Divergence { .. } | Error::Numerical(_) | Error::DegenerateProposal(_)
    )
}

pub fn checkpoint_stem(out_dir: &Path, seed: u64) -> PathBuf {
    out_dir.join("checkpoints").join(format!("seed{seed}"))
}

#[derive(Clone, Copy)]
enum Mode<'a> {
    Train { checkpoints: Option<&'a Path> },
    FromCheckpoints(&'a Path),
}

struct CellOutcome {
    reports: Vec<MetricReport>,
    failures: Vec<Failure>,
    final_loss: Option<f64>,
}

/// Trains and evaluates every seed, then writes `metrics.csv`,
/// `failures.csv`, `manifest.toml` and checkpoints under `out_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let evals = build_eval_sets(config)?;
    fs::create_dir_all(config.out_dir.join("checkpoints"))?;
    let out = run_cells(
        config,
        &evals,
        Mode::Train {
            checkpoints: Some(&config.out_dir),
        },
    )?;
    write_outputs(config, &config.out_dir, &out)?;
    Ok(out)
}

/// Like [`run_experiment`] but writes nothing.
pub fn run_in_memory(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let evals = build_eval_sets(config)?;
    run_cells(config, &evals, Mode::Train { checkpoints: None })
}

/// Re-evaluates trained estimators from the checkpoints in `checkpoint_dir`
/// (baselines are simply rerun) and writes the results to `out_dir`.
pub fn evaluate_experiment(
    config: &ExperimentConfig,
    checkpoint_dir: &Path,
    out_dir: &Path,
) -> Result<ExperimentOutput> {
    config.validate()?;
    let evals = build_eval_sets(config)?;
    let out = run_cells(config, &evals, Mode::FromCheckpoints(checkpoint_dir))?;
    write_outputs(config, out_dir, &out)?;
    Ok(out)
}

/// Trains once per seed and evaluates on every fold of a tabular dataset.
/// The model's input dimension must be at least the number of features.
pub fn run_tabular(
    config: &ExperimentConfig,
    path: &Path,
    target_column: &str,
    folds: usize,
) -> Result<ExperimentOutput> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("tabular")
        .to_string();
    let mut cfg = config.clone();
    cfg.eval = (0..folds)
        .map(|fold| EvalTaskSpec {
            id: format!("{stem}/fold{fold}"),
            task: TaskSpec {
                source: DataSource::Tabular {
                    path: path.to_path_buf(),
                    target_column: target_column.to_string(),
                    fold,
                    folds,
                    seed: config.test_seed,
                },
                dim: DimPolicy::Fixed,
                ..config.task.clone()
            },
        })
        .collect();
    run_experiment(&cfg)
}

pub fn build_eval_sets(config: &ExperimentConfig) -> Result<Vec<EvalSet>> {
    config
        .eval_specs()
        .iter()
        .map(|e| EvalSet::build(&e.id, &e.task, config.eval_datasets, config.test_seed))
        .collect()
}

fn write_outputs(config: &ExperimentConfig, out_dir: &Path, out: &ExperimentOutput) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    write_reports(&out_dir.join("metrics.csv"), &out.reports)?;
    let mut w = csv::Writer::from_path(out_dir.join("failures.csv"))?;
    w.write_record(["seed", "task_id", "reason"])?;
    for f in &out.failures {
        w.write_record([f.seed.to_string().as_str(), &f.task_id, &f.reason])?;
    }
    w.flush()?;
    let manifest = Manifest {
        estimator: config.estimator_label(),
        objective: config.method.objective_id(),
        seeds: config.seed_list(),
        test_sets: &out.test_sets,
        failures: &out.failures,
        config,
    };
    let text = toml::to_string(&manifest)
        .map_err(|e| Error::InvalidConfig(format!("cannot serialise manifest: {e}")))?;
    fs::write(out_dir.join("manifest.toml"), text)?;
    Ok(())
}

fn run_cells(
    config: &ExperimentConfig,
    evals: &[EvalSet],
    mode: Mode<'_>,
) -> Result<ExperimentOutput> {
    let seeds = config.seed_list();
    let slots: Vec<Mutex<Option<Result<CellOutcome>>>> =
        seeds.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        if i >= seeds.len() {
            break;
        }
        let outcome = run_cell(config, evals, seeds[i], mode);
        *slots[i].lock().expect("result slot") = Some(outcome);
    };
    let threads = config.workers.min(seeds.len());
    if threads <= 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..threads {
                s.spawn(worker);
            }
        });
    }
    let mut out = ExperimentOutput {
        test_sets: evals
            .iter()
            .map(|e| TestSetDigest {
                id: e.id.clone(),
                datasets: e.tasks.len(),
                sha256: e.content_hash(),
            })
            .collect(),
        ..ExperimentOutput::default()
    };
    for (slot, &seed) in slots.into_iter().zip(&seeds) {
        let cell = slot
            .into_inner()
            .expect("result slot")
            .expect("every seed ran")?;
        out.reports.extend(cell.reports);
        out.failures.extend(cell.failures);
        if let Some(l) = cell.final_loss {
            out.final_losses.push((seed, l));
        }
    }
    Ok(out)
}

fn run_cell(
    config: &ExperimentConfig,
    evals: &[EvalSet],
    seed: u64,
    mode: Mode<'_>,
) -> Result<CellOutcome> {
    let mut cell = CellOutcome {
        reports: Vec::new(),
        failures: Vec::new(),
        final_loss: None,
    };
    let estimator = match config.method {
        Method::Estimator { head, objective } => {
            match prepare_estimator(config, head, objective, seed, mode) {
                Ok((est, loss)) => {
                    cell.final_loss = loss;
                    Some(est)
                }
                Err(e)
                    if is_run_failure(&e)
                        || (matches!(mode, Mode::FromCheckpoints(_))
                            && matches!(e, Error::Io(_))) =>
                {
                    for set in evals {
                        cell.failures.push(Failure {
                            seed,
                            task_id: set.id.clone(),
                            reason: e.to_string(),
                        });
                        cell.reports.extend(na_rows(config, set, seed));
                    }
                    return Ok(cell);
                }
                Err(e) => return Err(e),
            }
        }
        Method::Baseline { .. } => None,
    };
    for set in evals {
        match evaluate_set(config, estimator.as_ref(), set, seed) {
            Ok(values) => {
                for (metric, value) in values {
                    cell.reports
                        .push(report(config, &set.id, seed, metric, Some(value)));
                }
            }
            Err(e) if is_run_failure(&e) => {
                cell.failures.push(Failure {
                    seed,
                    task_id: set.id.clone(),
                    reason: e.to_string(),
                });
                cell.reports.extend(na_rows(config, set, seed));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(cell)
}

fn report(
    config: &ExperimentConfig,
    task_id: &str,
    seed: u64,
    metric: MetricName,
    value: Option<f64>,
) -> MetricReport {
    MetricReport {
        task_id: task_id.to_string(),
        estimator: config.estimator_label(),
        objective: config.method.objective_id().to_string(),
        seed,
        metric,
        value,
        s: config.num_samples,
    }
}

fn na_rows(config: &ExperimentConfig, set: &EvalSet, seed: u64) -> Vec<MetricReport> {
    MetricName::applicable(set.spec.model.family)
        .iter()
        .map(|&m| report(config, &set.id, seed, m, None))
        .collect()
}

fn prepare_estimator(
    config: &ExperimentConfig,
    head: HeadKind,
    objective: Objective,
    seed: u64,
    mode: Mode<'_>,
) -> Result<(InContextEstimator, Option<f64>)> {
    let mut init = rng::stream(seed, streams::INIT);
    let mut est = InContextEstimator::new(
        config.task.model.clone(),
        head,
        objective,
        config.estimator.clone(),
        &mut init,
    )?;
    match mode {
        Mode::FromCheckpoints(dir) => {
            est.load(&checkpoint_stem(dir, seed))?;
            Ok((est, None))
        }
        Mode::Train { checkpoints } => {
            let mut source = training_source(config.task.clone());
            let mut task_rng = rng::stream(seed, streams::TRAIN_TASKS);
            let mut noise_rng = rng::stream(seed, streams::TRAIN_NOISE);
            let chunk = if config.checkpoint_every == 0 {
                config.iterations.max(1)
            } else {
                config.checkpoint_every
            };
            let mut done = 0;
            let mut last = None;
            while done < config.iterations {
                let n = chunk.min(config.iterations - done);
                let report = est.train(&mut source, n, &mut task_rng, &mut noise_rng)?;
                last = report.losses.last().copied().or(last);
                done += n;
                if let (Some(dir), true) = (checkpoints, done < config.iterations) {
                    est.save(
                        &dir.join("checkpoints")
                            .join(format!("seed{seed}_step{done}")),
                    )?;
                }
            }
            if let Some(dir) = checkpoints {
                est.save(&checkpoint_stem(dir, seed))?;
            }
            Ok((est, last))
        }
    }
}

/// Seed-level metric averages over one task set.
fn evaluate_set(
    config: &ExperimentConfig,
    estimator: Option<&InContextEstimator>,
    set: &EvalSet,
    seed: u64,
) -> Result<Vec<(MetricName, f64)>> {
    let spec = &set.spec.model;
    let metrics = MetricName::applicable(spec.family);
    let mut sums = vec![0.0; metrics.len()];
    let mut eval_rng = rng::stream(seed, streams::EVAL_SAMPLES);
    for task in &set.tasks {
        let mut r = rng::split(&mut eval_rng, streams::EVAL_SAMPLES);
        let samples = match (config.method, estimator) {
            (Method::Estimator { .. }, Some(est)) => {
                est.sample(&task.context, config.num_samples, &mut r)?
            }
            (Method::Baseline { baseline }, _) => {
                baseline_samples(config, baseline, spec, &task.context, &mut r)?
            }
            (Method::Estimator { .. }, None) => {
                unreachable!("estimator prepared before evaluation")
            }
        };
        if samples.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite posterior sample".into()));
        }
        for (sum, m) in sums.iter_mut().zip(metrics) {
            let v = m.compute(&samples, spec, &task.query)?;
            if !v.is_finite() {
                return Err(Error::Numerical(format!("{m} is not finite")));
            }
            *sum += v;
        }
    }
    let n = set.tasks.len() as f64;
    Ok(metrics.iter().zip(sums).map(|(&m, s)| (m, s / n)).collect())
}

/// `n` draws from a baseline on one context set, zero on padded slots.
pub fn baseline_samples(
    config: &ExperimentConfig,
    baseline: Baseline,
    spec: &ProbModelSpec,
    context: &ObservationSet,
    rng: &mut StreamRng,
) -> Result<Vec<Vec<f64>>> {
    let n = config.num_samples;
    let b = &config.baselines;
    let native = context.native_dim;
    let mask = spec.param_mask(native);
    let mut samples = match baseline {
        Baseline::Random => baselines::random_baseline(&native_spec(spec, native), n, rng)
            .iter()
            .map(|t| embed_params(spec, native, t))
            .collect::<Result<Vec<_>>>()?,
        Baseline::TruePosterior => baselines::true_posterior_samples(spec, context, n, rng)?,
        Baseline::Optimization => vec![baselines::optimize_mle(
            spec,
            context,
            b.optimization_steps,
            rng,
        )?],
        Baseline::LangevinSingle
        | Baseline::LangevinMulti
        | Baseline::HmcSingle
        | Baseline::HmcMulti => {
            let hmc = matches!(baseline, Baseline::HmcSingle | Baseline::HmcMulti);
            let multi = matches!(baseline, Baseline::LangevinMulti | Baseline::HmcMulti);
            let mut chain = if hmc { b.hmc } else { b.langevin };
            if multi {
                chain.chains = b.multi_chains;
            }
            let run = |cfg: &ChainConfig, r: &mut StreamRng| -> Result<ChainOutput> {
                if hmc {
                    baselines::hmc(spec, context, cfg, r)
                } else {
                    baselines::langevin(spec, context, cfg, r)
                }
            };
            if b.tune_step_size {
                let mut pilot_rng = rng::split(rng, streams::BASELINE);
                chain.step_size = baselines::tune_step_size(&chain, b.max_doublings, &mut |c| {
                    run(c, &mut pilot_rng)
                })?;
            }
            spread(&run(&chain, rng)?.samples, n)
        }
    };
    for s in &mut samples {
        for (v, &m) in s.iter_mut().zip(&mask) {
            if !m {
                *v = 0.0;
            }
        }
    }
    Ok(samples)
}

/// `n` evenly spaced picks from a pooled sample list.
fn spread(pool: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| pool[i * pool.len() / n].clone()).collect()
}
