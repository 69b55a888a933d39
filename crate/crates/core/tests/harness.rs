use std::collections::{BTreeMap, BTreeSet};
use std::fs;

use proptest::prelude::*;

use incontext::error::Error;
use incontext::estimators::{EstimatorConfig, HeadKind, Objective};
use incontext::harness::presets;
use incontext::harness::rank::{candidate_id, read_rank_csv, write_rank_csv};
use incontext::harness::{
    aggregate_rank, content_hash, evaluate_experiment, run_experiment, run_in_memory, run_tabular,
    task_label, Baseline, ExperimentConfig, Grouping, Method,
};
use incontext::metrics::{read_reports, MetricName, MetricReport};
use incontext::models::ProbModelSpec;
use incontext::nn::EncoderConfig;
use incontext::tasks::{DimPolicy, TaskSpec, TOY_CSV};

fn tiny_estimator() -> EstimatorConfig {
    let mut c = EstimatorConfig {
        encoder: EncoderConfig {
            num_layers: 1,
            model_dim: 8,
            ff_dim: 16,
            num_heads: 2,
            use_positional_embeddings: false,
        },
        rev_kl_samples: 2,
        ..EstimatorConfig::default()
    };
    c.adam.lr = 1e-3;
    c.flow.blocks = 2;
    c.flow.hidden = 8;
    c.sampler.hidden = 8;
    c.sampler.time_embed_dim = 4;
    c.sampler.noise_draws = 2;
    c.schedule.steps = 10;
    c.dem.proposals = 8;
    c
}

fn small_config(method: Method, out: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig {
        method,
        seeds: 2,
        eval_datasets: 4,
        num_samples: 4,
        iterations: 6,
        out_dir: out.to_path_buf(),
        task: TaskSpec {
            context_min: 8,
            context_max: 12,
            query_size: 10,
            ..TaskSpec::generative(ProbModelSpec::gm(2))
        },
        estimator: tiny_estimator(),
        ..ExperimentConfig::default()
    }
}

#[test]
fn config_defaults_and_round_trip() {
    let c = ExperimentConfig::from_toml_str("").unwrap();
    assert_eq!(c.seeds, 6);
    assert_eq!(c.eval_datasets, 100);
    assert_eq!(c.num_samples, 32);
    assert_eq!(c.estimator.adam.lr, 1e-4);
    assert_eq!(c.estimator.encoder.num_layers, 4);
    assert_eq!(c.estimator.encoder.model_dim, 256);
    assert_eq!(c.estimator.encoder.ff_dim, 1024);
    assert_eq!(c.estimator.flow.blocks, 6);
    assert_eq!(c.estimator.dem.proposals, 100);
    assert_eq!(c.estimator.schedule.steps, 100);
    assert_eq!((c.task.context_min, c.task.context_max), (64, 128));
    let mut c = small_config(
        Method::Estimator {
            head: HeadKind::Flow,
            objective: Objective::Rev,
        },
        "x".as_ref(),
    );
    c.eval = presets::find("var/gm").unwrap().evals;
    c.task = presets::find("var/gm").unwrap().train;
    let text = c.to_toml_string().unwrap();
    assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), c);
}

#[test]
fn config_file_parses() {
    let text = r#"
        iterations = 10
        seeds = 3
        out_dir = "runs/gm"

        [method]
        kind = "estimator"
        head = "gaussian"
        objective = "fwd"

        [task.model]
        family = "lc"
        input_dim = 2
        num_classes = 2

        [estimator.encoder]
        num_layers = 2
        model_dim = 64
        ff_dim = 128
        num_heads = 4
    "#;
    let c = ExperimentConfig::from_toml_str(text).unwrap();
    assert_eq!(
        c.method,
        Method::Estimator {
            head: HeadKind::Gaussian,
            objective: Objective::Fwd
        }
    );
    assert_eq!(c.task.model, ProbModelSpec::lc(2, 2));
    assert_eq!(c.seeds, 3);
    assert_eq!(c.seed_list(), vec![0, 1, 2]);
}

#[test]
fn invalid_configs_are_rejected() {
    for text in [
        "seeds = 0",
        "bogus_key = 1",
        "[method]\nkind = \"estimator\"\nhead = \"point\"\nobjective = \"fwd\"",
        "[method]\nkind = \"baseline\"\nbaseline = \"true_posterior\"\n[task.model]\nfamily = \"lc\"\ninput_dim = 2\nnum_classes = 2",
        "[estimator.encoder]\nmodel_dim = 10\nnum_heads = 4",
    ] {
        assert!(ExperimentConfig::from_toml_str(text).is_err(), "{text}");
    }
}

#[test]
fn method_parsing() {
    assert_eq!(
        Method::parse("hmc_multi", None).unwrap(),
        Method::Baseline {
            baseline: Baseline::HmcMulti
        }
    );
    assert_eq!(
        Method::parse("score", Some("fwd")).unwrap(),
        Method::Estimator {
            head: HeadKind::Score,
            objective: Objective::Fwd
        }
    );
    assert!(Method::parse("score", None).is_err());
    assert!(Method::parse("score", Some("rev")).is_err());
    assert!(Method::parse("nope", None).is_err());
}

#[test]
fn random_baseline_is_a_pure_evaluation_run_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let c = small_config(
        Method::Baseline {
            baseline: Baseline::Random,
        },
        dir.path(),
    );
    let out = run_experiment(&c).unwrap();
    assert_eq!(out.reports.len(), 2 * 2);
    assert!(out
        .reports
        .iter()
        .all(|r| r.value.is_some() && r.estimator == "random" && r.objective == "-"));
    let first = fs::read(dir.path().join("metrics.csv")).unwrap();
    let manifest = fs::read_to_string(dir.path().join("manifest.toml")).unwrap();
    assert!(manifest.contains(&out.test_sets[0].sha256));
    run_experiment(&c).unwrap();
    assert_eq!(first, fs::read(dir.path().join("metrics.csv")).unwrap());
    assert_eq!(
        manifest,
        fs::read_to_string(dir.path().join("manifest.toml")).unwrap()
    );
    assert_eq!(
        read_reports(&dir.path().join("metrics.csv")).unwrap(),
        out.reports
    );
}

#[test]
fn test_set_hash_is_independent_of_training_seed() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small_config(
        Method::Baseline {
            baseline: Baseline::Random,
        },
        dir.path(),
    );
    let a = run_in_memory(&c).unwrap();
    c.first_seed = 17;
    let b = run_in_memory(&c).unwrap();
    assert_eq!(a.test_sets, b.test_sets);
    assert_ne!(a.reports, b.reports);
    c.test_seed = 1;
    assert_ne!(run_in_memory(&c).unwrap().test_sets, a.test_sets);
}

#[test]
fn estimator_runs_are_deterministic_across_worker_counts() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let mut c = small_config(
        Method::Estimator {
            head: HeadKind::Gaussian,
            objective: Objective::Sym,
        },
        d1.path(),
    );
    c.checkpoint_every = 4;
    run_experiment(&c).unwrap();
    c.out_dir = d2.path().to_path_buf();
    c.workers = 2;
    run_experiment(&c).unwrap();
    let a = fs::read(d1.path().join("metrics.csv")).unwrap();
    assert_eq!(a, fs::read(d2.path().join("metrics.csv")).unwrap());
    assert!(d1.path().join("checkpoints/seed0_step4.bin").exists());
    assert!(d1.path().join("checkpoints/seed1.bin").exists());
    assert!(!d1.path().join("checkpoints/seed0_step6.bin").exists());
}

#[test]
fn evaluating_from_checkpoints_reproduces_metrics() {
    for (head, objective) in [
        (HeadKind::Point, Objective::Map),
        (HeadKind::Flow, Objective::Fwd),
        (HeadKind::Pdem, Objective::Rev),
    ] {
        let dir = tempfile::tempdir().unwrap();
        let c = small_config(Method::Estimator { head, objective }, dir.path());
        let trained = run_experiment(&c).unwrap();
        let eval_dir = dir.path().join("eval");
        let again = evaluate_experiment(&c, dir.path(), &eval_dir).unwrap();
        assert_eq!(trained.reports, again.reports, "{head}");
        assert_eq!(
            fs::read(dir.path().join("metrics.csv")).unwrap(),
            fs::read(eval_dir.join("metrics.csv")).unwrap()
        );
    }
}

#[test]
fn missing_checkpoints_become_failed_rows() {
    let dir = tempfile::tempdir().unwrap();
    let c = small_config(
        Method::Estimator {
            head: HeadKind::Point,
            objective: Objective::Mle,
        },
        dir.path(),
    );
    let out = evaluate_experiment(&c, &dir.path().join("nowhere"), dir.path()).unwrap();
    assert!(out.reports.iter().all(|r| r.value.is_none()));
    assert_eq!(out.failures.len(), 2);
}

#[test]
fn divergent_baselines_are_recorded_as_not_available() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small_config(
        Method::Baseline {
            baseline: Baseline::LangevinSingle,
        },
        dir.path(),
    );
    c.task.model = ProbModelSpec::lr(2);
    c.baselines.langevin.step_size = 10.0;
    c.baselines.langevin.burn_in = 50;
    c.baselines.langevin.kept = 10;
    let out = run_experiment(&c).unwrap();
    assert!(out.reports.iter().all(|r| r.value.is_none()));
    assert_eq!(out.failures.len(), 2);
    assert!(
        out.failures[0].reason.contains("diverged"),
        "{}",
        out.failures[0].reason
    );
    let text = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(text.contains(",N/A,"));
    let failures = fs::read_to_string(dir.path().join("failures.csv")).unwrap();
    assert_eq!(failures.lines().count(), 3);

    // The doubling search recovers a stable step size.
    c.baselines.tune_step_size = true;
    c.baselines.max_doublings = 16;
    let out = run_in_memory(&c).unwrap();
    assert!(out.failures.is_empty());
    assert!(out.reports.iter().all(|r| r.value.is_some()));
}

#[test]
fn every_baseline_runs_on_regression() {
    for b in Baseline::ALL {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small_config(Method::Baseline { baseline: b }, dir.path());
        c.seeds = 1;
        c.task.model = ProbModelSpec::lr(1);
        c.baselines.hmc.burn_in = 20;
        c.baselines.hmc.kept = 20;
        c.baselines.langevin.burn_in = 20;
        c.baselines.langevin.kept = 20;
        c.baselines.multi_chains = 2;
        c.baselines.optimization_steps = 20;
        let out = run_in_memory(&c).unwrap();
        assert_eq!(out.reports.len(), 2, "{}", b.name());
        assert!(
            out.reports.iter().all(|r| r.value.unwrap() >= 0.0),
            "{}",
            b.name()
        );
    }
}

#[test]
fn baselines_on_padded_tasks_leave_inactive_slots_at_zero() {
    let model = ProbModelSpec::lr(6);
    let spec = TaskSpec {
        dim: DimPolicy::Padded { native: 2 },
        context_min: 8,
        context_max: 8,
        ..TaskSpec::generative(model.clone())
    };
    let task = incontext::tasks::make_task(&spec, &mut incontext::rng::stream(0, 0)).unwrap();
    let mask = model.param_mask(2);
    let c = ExperimentConfig {
        num_samples: 5,
        ..ExperimentConfig::default()
    };
    for b in [
        Baseline::Random,
        Baseline::TruePosterior,
        Baseline::Optimization,
    ] {
        let s = incontext::harness::baseline_samples(
            &c,
            b,
            &model,
            &task.context,
            &mut incontext::rng::stream(1, 1),
        )
        .unwrap();
        for v in s {
            for (x, m) in v.iter().zip(&mask) {
                if !m {
                    assert_eq!(*x, 0.0);
                }
            }
        }
    }
}

#[test]
fn tabular_pipeline_runs_every_fold() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("toy.csv");
    fs::write(&csv, TOY_CSV).unwrap();
    let mut c = small_config(
        Method::Baseline {
            baseline: Baseline::Optimization,
        },
        &dir.path().join("run"),
    );
    c.task = TaskSpec::variable(ProbModelSpec::lr(6));
    c.baselines.optimization_steps = 200;
    let out = run_tabular(&c, &csv, "target", 5).unwrap();
    let ids: BTreeSet<_> = out.reports.iter().map(|r| r.task_id.clone()).collect();
    assert_eq!(ids.len(), 5);
    assert!(ids.contains("toy/fold0") && ids.contains("toy/fold4"));
    assert!(out.test_sets.iter().all(|t| t.datasets == 1));
    let again = run_tabular(&c, &csv, "target", 5).unwrap();
    assert_eq!(out.reports, again.reports);
}

#[test]
fn content_hash_follows_git_object_format() {
    assert_eq!(
        content_hash(b""),
        "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
    );
    assert_eq!(
        content_hash(b"hello"),
        "8aec4e4876f854f688d0ebfc8f37598f38e5fd6903cccc850ca36591175aeb60"
    );
}

#[test]
fn preset_task_lists() {
    let fixed = presets::fixed_dim();
    assert_eq!(fixed.len(), 36);
    assert_eq!(fixed.iter().map(|p| p.evals.len()).sum::<usize>(), 36);
    let var = presets::variable_dim();
    assert_eq!(var.len(), 18);
    assert_eq!(var.iter().map(|p| p.evals.len()).sum::<usize>(), 52);
    let all = presets::all();
    let ids: BTreeSet<_> = all.iter().map(|p| p.id.clone()).collect();
    assert_eq!(ids.len(), all.len());
    for p in &all {
        p.train.validate().unwrap();
        for e in &p.evals {
            e.task.validate().unwrap();
        }
        let c = ExperimentConfig::from_preset(
            p,
            Method::Estimator {
                head: HeadKind::Point,
                objective: Objective::Map,
            },
        );
        c.validate().unwrap();
    }
    let gm = presets::find("fixed/gm_d100").unwrap();
    assert_eq!(gm.iterations, 50_000);
    assert_eq!(
        presets::find("var/nlc_l2_relu_c5").unwrap().iterations,
        500_000
    );
    assert_eq!(
        presets::TABULAR_REGRESSION.len() + presets::TABULAR_CLASSIFICATION.len(),
        22
    );
    // Switched training hides θ, so forward-KL training is refused there.
    let sw = presets::find("misspec/lr_on_gp+switched").unwrap();
    let c = ExperimentConfig::from_preset(
        &sw,
        Method::Estimator {
            head: HeadKind::Gaussian,
            objective: Objective::Fwd,
        },
    );
    assert!(matches!(c.validate(), Err(Error::Capability(_))));
}

#[test]
fn task_labels() {
    assert_eq!(
        task_label(&TaskSpec::generative(ProbModelSpec::gm(2))),
        "gm_d2"
    );
    let nlc = ProbModelSpec::nlc(25, 5, 2, 32, incontext::nn::Activation::Relu);
    assert_eq!(
        task_label(&TaskSpec::generative(nlc.clone())),
        "nlc_d25_l2_relu_c5"
    );
    assert_eq!(
        task_label(&TaskSpec::variable(nlc)),
        "var_nlc_d25_l2_relu_c5"
    );
}

fn row(
    task: &str,
    est: &str,
    obj: &str,
    seed: u64,
    metric: MetricName,
    value: Option<f64>,
) -> MetricReport {
    MetricReport {
        task_id: task.into(),
        estimator: est.into(),
        objective: obj.into(),
        seed,
        metric,
        value,
        s: 32,
    }
}

#[test]
fn rank_single_estimator_wins_everything() {
    let r = vec![
        row("t0", "point", "map", 0, MetricName::SingleL2, Some(1.0)),
        row("t1", "point", "map", 0, MetricName::SingleL2, Some(2.0)),
    ];
    let share = aggregate_rank(&r, Grouping::All).unwrap();
    assert_eq!(
        share.shares,
        BTreeMap::from([("point/map".to_string(), 100.0)])
    );
}

#[test]
fn rank_strictly_better_estimator_takes_all() {
    let mut r = Vec::new();
    for t in ["a", "b", "c"] {
        r.push(row(t, "point", "map", 0, MetricName::SingleAcc, Some(80.0)));
        r.push(row(t, "flow", "fwd", 0, MetricName::SingleAcc, Some(70.0)));
    }
    let share = aggregate_rank(&r, Grouping::All).unwrap();
    assert_eq!(share.shares["point/map"], 100.0);
    assert_eq!(share.shares["flow/fwd"], 0.0);
}

/// Three estimators on four tasks: each wins one task outright and the
/// first two tie on the fourth.
fn fixture() -> Vec<MetricReport> {
    let m = MetricName::EnsembleL2;
    let vals = [
        ("t0", [1.0, 2.0, 3.0]),
        ("t1", [2.0, 1.0, 3.0]),
        ("t2", [3.0, 2.0, 1.0]),
        ("t3", [1.0, 1.0, 2.0]),
    ];
    let ests = [("point", "mle"), ("gaussian", "rev"), ("score", "fwd")];
    let mut r = Vec::new();
    for (task, v) in vals {
        for (i, (e, o)) in ests.iter().enumerate() {
            // Two seeds averaging to the listed value.
            r.push(row(task, e, o, 0, m, Some(v[i] - 0.5)));
            r.push(row(task, e, o, 1, m, Some(v[i] + 0.5)));
        }
    }
    r
}

#[test]
fn rank_fixture_with_tie() {
    let share = aggregate_rank(&fixture(), Grouping::All).unwrap();
    assert_eq!(share.cells, 4);
    assert_eq!(share.shares["point/mle"], 37.5);
    assert_eq!(share.shares["gaussian/rev"], 37.5);
    assert_eq!(share.shares["score/fwd"], 25.0);
}

#[test]
fn rank_groupings() {
    let fam = aggregate_rank(&fixture(), Grouping::Family).unwrap();
    assert_eq!(
        fam.shares.keys().cloned().collect::<Vec<_>>(),
        vec!["diffusion", "gaussian", "point"]
    );
    let sig = aggregate_rank(&fixture(), Grouping::Signal).unwrap();
    assert_eq!(sig.shares["point"], 37.5);
    assert_eq!(sig.shares["reverse"], 37.5);
    assert_eq!(sig.shares["forward"], 25.0);
    // Groups take the best member.
    let mut r = fixture();
    r.extend(fixture().into_iter().map(|mut x| {
        x.estimator = "flow".into();
        x.objective = "fwd".into();
        x.value = x.value.map(|v| v - 10.0);
        x
    }));
    let sig = aggregate_rank(&r, Grouping::Signal).unwrap();
    assert_eq!(sig.shares["forward"], 100.0);
    assert_eq!(sig.shares["reverse"], 0.0);
    assert_eq!(sig.shares["point"], 0.0);
    assert_eq!(candidate_id("hmc_multi", "-"), "hmc_multi");
}

#[test]
fn failed_runs_lose() {
    let m = MetricName::SingleL2;
    let r = vec![
        row("t", "point", "map", 0, m, Some(5.0)),
        row("t", "point", "map", 1, m, None),
        row("t", "flow", "rev", 0, m, Some(9.0)),
        row("t", "flow", "rev", 1, m, Some(9.0)),
    ];
    let share = aggregate_rank(&r, Grouping::All).unwrap();
    assert_eq!(share.shares["flow/rev"], 100.0);
    let all_failed = vec![
        row("t", "point", "map", 0, m, None),
        row("t", "flow", "rev", 0, m, None),
    ];
    let share = aggregate_rank(&all_failed, Grouping::All).unwrap();
    assert_eq!(share.shares["flow/rev"], 50.0);
}

#[test]
fn missing_cells_abort_with_listing() {
    let mut r = fixture();
    r.retain(|x| !(x.estimator == "score" && x.task_id == "t2"));
    match aggregate_rank(&r, Grouping::All) {
        Err(Error::MissingCells(msg)) => assert!(msg.contains("score/fwd @ t2"), "{msg}"),
        other => panic!("expected MissingCells, got {other:?}"),
    }
}

#[test]
fn rank_csv_round_trip() {
    let ranks: Vec<_> = Grouping::ALL
        .iter()
        .map(|&g| aggregate_rank(&fixture(), g).unwrap())
        .collect();
    let mut a = Vec::new();
    write_rank_csv(&mut a, &ranks).unwrap();
    assert_eq!(read_rank_csv(a.as_slice()).unwrap(), ranks);
    assert!(read_rank_csv("group,estimator,share,cells\n".as_bytes()).is_err());
}

proptest! {
    #[test]
    fn shares_sum_to_100_and_losers_are_removable(
        values in prop::collection::vec(prop::collection::vec(0u8..4, 4), 1..6),
        higher in any::<bool>(),
    ) {
        let metric = if higher { MetricName::SingleAcc } else { MetricName::SingleL2 };
        let ests = ["point", "gaussian", "flow", "score"];
        let mut r = Vec::new();
        for (t, row_vals) in values.iter().enumerate() {
            for (e, v) in ests.iter().zip(row_vals) {
                r.push(row(&format!("t{t}"), e, "fwd", 0, metric, Some(*v as f64)));
            }
        }
        let share = aggregate_rank(&r, Grouping::All).unwrap();
        prop_assert!((share.total() - 100.0).abs() < 1e-6);
        for (name, s) in &share.shares {
            if *s == 0.0 {
                let est = name.split('/').next().unwrap();
                let kept: Vec<_> = r.iter().filter(|x| x.estimator != est).cloned().collect();
                let reduced = aggregate_rank(&kept, Grouping::All).unwrap();
                for (other, v) in &reduced.shares {
                    prop_assert!((v - share.shares[other]).abs() < 1e-9);
                }
            }
        }
    }
}
