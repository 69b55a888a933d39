//! `incontext`: train, evaluate and rank in-context estimators.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use incontext::harness::presets;
use incontext::harness::rank::write_rank_file;
use incontext::harness::{
    aggregate_rank_files, evaluate_experiment, run_experiment, run_tabular, ExperimentConfig,
    ExperimentOutput, Grouping, Method,
};
use incontext::metrics::MetricReport;
use incontext::Result;

#[derive(Parser)]
#[command(
    name = "incontext",
    version,
    about = "Amortized parametric inference benchmark harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train (or run a baseline) and evaluate on the held-out task sets.
    Train(RunArgs),
    /// Re-evaluate trained checkpoints without training.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Directory holding `checkpoints/`; defaults to the config's out_dir.
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// Winner-take-all rankings over one or more metrics.csv files.
    Rank {
        /// Report files to rank together.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Directory for rank.csv.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Groupings to compute (all, family, signal); all three by default.
        #[arg(long = "grouping")]
        groupings: Vec<String>,
    },
    /// Evaluate on every fold of a tabular CSV.
    Tabular {
        #[command(flatten)]
        run: RunArgs,
        /// The CSV file.
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "target-column")]
        target_column: String,
        #[arg(long, default_value_t = 5)]
        folds: usize,
    },
    /// List the built-in task presets.
    Presets,
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config; defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run this single seed instead of the configured seed range.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// A preset task id (see `incontext presets`).
    #[arg(long)]
    task: Option<String>,
    /// Estimator head (point, gaussian, flow, score, flow_matching, pdem) or baseline.
    #[arg(long)]
    estimator: Option<String>,
    /// Objective for estimator heads (mle, map, fwd, rev, sym).
    #[arg(long)]
    objective: Option<String>,
    /// Training iterations (overrides config and preset).
    #[arg(long)]
    iterations: Option<usize>,
    /// Worker threads across seeds.
    #[arg(long)]
    workers: Option<usize>,
}

impl RunArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(id) = &self.task {
            let preset = presets::find(id).ok_or_else(|| {
                incontext::Error::InvalidConfig(format!(
                    "unknown task preset {id}; run `incontext presets`"
                ))
            })?;
            let base = ExperimentConfig::from_preset(&preset, c.method);
            c.task_id = base.task_id;
            c.task = base.task;
            c.eval = base.eval;
            if self.config.is_none() {
                c.iterations = base.iterations;
            }
        }
        if let Some(e) = &self.estimator {
            c.method = Method::parse(e, self.objective.as_deref())?;
        } else if let (Some(o), Method::Estimator { head, .. }) = (&self.objective, c.method) {
            c.method = Method::parse(head.name(), Some(o))?;
        }
        if let Some(s) = self.seed {
            c.first_seed = s;
            c.seeds = 1;
        }
        if let Some(o) = &self.out {
            c.out_dir = o.clone();
        }
        if let Some(n) = self.iterations {
            c.iterations = n;
        }
        if let Some(w) = self.workers {
            c.workers = w;
        }
        c.validate()?;
        Ok(c)
    }
}

fn summarise(out: &ExperimentOutput, dir: &Path) {
    for t in &out.test_sets {
        println!("test set {} ({} datasets) {}", t.id, t.datasets, t.sha256);
    }
    print_reports(&out.reports);
    for f in &out.failures {
        println!("seed {} on {} failed: {}", f.seed, f.task_id, f.reason);
    }
    println!("wrote {}", dir.join("metrics.csv").display());
}

fn print_reports(reports: &[MetricReport]) {
    for r in reports {
        let v = r
            .value
            .map_or_else(|| "N/A".to_string(), |v| format!("{v:.4}"));
        println!(
            "{:<28} {:<16} {:<4} seed {:<3} {:<14} {v}",
            r.task_id,
            r.estimator,
            r.objective,
            r.seed,
            r.metric.name()
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let c = args.resolve()?;
            let out = run_experiment(&c)?;
            summarise(&out, &c.out_dir);
        }
        Command::Eval { run, checkpoints } => {
            let c = run.resolve()?;
            let ckpt = checkpoints.unwrap_or_else(|| c.out_dir.clone());
            let out = evaluate_experiment(&c, &ckpt, &c.out_dir)?;
            summarise(&out, &c.out_dir);
        }
        Command::Rank {
            reports,
            out,
            groupings,
        } => {
            let groupings = if groupings.is_empty() {
                Grouping::ALL.to_vec()
            } else {
                groupings
                    .iter()
                    .map(|g| {
                        Grouping::parse(g).ok_or_else(|| {
                            incontext::Error::InvalidConfig(format!("unknown grouping {g}"))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?
            };
            let ranks = groupings
                .iter()
                .map(|&g| aggregate_rank_files(&reports, g))
                .collect::<Result<Vec<_>>>()?;
            std::fs::create_dir_all(&out)?;
            let path = out.join("rank.csv");
            write_rank_file(&path, &ranks)?;
            for r in &ranks {
                println!("[{}] over {} cells", r.grouping, r.cells);
                for (name, share) in &r.shares {
                    println!("  {name:<24} {share:>7.2}%");
                }
            }
            println!("wrote {}", path.display());
        }
        Command::Tabular {
            run,
            data,
            target_column,
            folds,
        } => {
            let c = run.resolve()?;
            let out = run_tabular(&c, &data, &target_column, folds)?;
            summarise(&out, &c.out_dir);
        }
        Command::Presets => {
            for p in presets::all() {
                let evals: Vec<&str> = p.evals.iter().map(|e| e.id.as_str()).collect();
                println!(
                    "{:<32} {:>7} iterations  eval: {}",
                    p.id,
                    p.iterations,
                    evals.join(" ")
                );
            }
            println!("tabular (not bundled; use `incontext tabular --data FILE`):");
            for name in presets::TABULAR_REGRESSION
                .iter()
                .chain(&presets::TABULAR_CLASSIFICATION)
            {
                println!("  {name}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
