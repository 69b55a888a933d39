use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn incontext(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_incontext"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = incontext(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: &str = r#"
seeds = 2
eval_datasets = 3
num_samples = 4
iterations = 3

[task]
context_min = 8
context_max = 10
query_size = 6

[task.model]
family = "gm"
input_dim = 2

[estimator.encoder]
num_layers = 1
model_dim = 8
ff_dim = 16
num_heads = 2

[estimator.sampler]
hidden = 8
time_embed_dim = 4
noise_draws = 2
"#;

fn write_config(dir: &Path) -> String {
    let p = dir.join("small.toml");
    fs::write(&p, SMALL).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn train_eval_rank_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let a_s = a.to_str().unwrap();
    let b_s = b.to_str().unwrap();
    ok(&[
        "train",
        "--config",
        &cfg,
        "--estimator",
        "gaussian",
        "--objective",
        "fwd",
        "--out",
        a_s,
    ]);
    ok(&[
        "train",
        "--config",
        &cfg,
        "--estimator",
        "true_posterior",
        "--out",
        b_s,
    ]);
    for f in [
        "metrics.csv",
        "failures.csv",
        "manifest.toml",
        "checkpoints/seed0.bin",
        "checkpoints/seed1.manifest",
    ] {
        assert!(a.join(f).exists(), "{f}");
    }
    let metrics = fs::read(a.join("metrics.csv")).unwrap();

    let e = dir.path().join("e");
    ok(&[
        "eval",
        "--config",
        &cfg,
        "--estimator",
        "gaussian",
        "--objective",
        "fwd",
        "--checkpoints",
        a_s,
        "--out",
        e.to_str().unwrap(),
    ]);
    assert_eq!(metrics, fs::read(e.join("metrics.csv")).unwrap());

    let r = dir.path().join("r");
    let stdout = ok(&[
        "rank",
        a.join("metrics.csv").to_str().unwrap(),
        b.join("metrics.csv").to_str().unwrap(),
        "--out",
        r.to_str().unwrap(),
    ]);
    assert!(stdout.contains("[family]"));
    let rank = fs::read_to_string(r.join("rank.csv")).unwrap();
    assert!(rank.starts_with("grouping,estimator,share,cells\n"));
    assert!(rank.contains("all,gaussian/fwd,"));
    assert!(rank.contains("all,true_posterior,"));
}

#[test]
fn single_seed_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let runs: Vec<Vec<u8>> = (0..2)
        .map(|i| {
            let out = dir.path().join(format!("run{i}"));
            ok(&[
                "train",
                "--config",
                &cfg,
                "--seed",
                "4",
                "--estimator",
                "point",
                "--objective",
                "map",
                "--out",
                out.to_str().unwrap(),
            ]);
            fs::read(out.join("metrics.csv")).unwrap()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    let text = String::from_utf8(runs[0].clone()).unwrap();
    assert!(text.lines().skip(1).all(|l| l.contains(",4,")), "{text}");
}

#[test]
fn tabular_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy.csv");
    fs::write(&data, incontext::tasks::TOY_CSV).unwrap();
    let cfg = dir.path().join("lr.toml");
    fs::write(&cfg, "seeds = 1\n[task.model]\nfamily = \"lr\"\ninput_dim = 4\n[baselines]\noptimization_steps = 50\n").unwrap();
    let out = dir.path().join("tab");
    ok(&[
        "tabular",
        "--config",
        cfg.to_str().unwrap(),
        "--estimator",
        "optimization",
        "--data",
        data.to_str().unwrap(),
        "--target-column",
        "target",
        "--folds",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    let text = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 5 * 2);
    assert!(text.contains("toy/fold4"));
}

#[test]
fn presets_and_errors() {
    let list = ok(&["presets"]);
    assert!(list.contains("fixed/nlc_d25_l2_relu_c5"));
    assert!(list.contains("var/gm/d50"));
    assert!(list.contains("credit-g"));
    let bad = incontext(&["train", "--estimator", "score", "--objective", "rev"]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("cannot be trained"));
    let bad = incontext(&["train", "--task", "fixed/nope"]);
    assert!(!bad.status.success());
    let bad = incontext(&["rank", "/nonexistent/metrics.csv"]);
    assert!(!bad.status.success());
}
