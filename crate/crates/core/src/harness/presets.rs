//! Built-in benchmark task lists.
//!
//! Fixed-dimension presets train and evaluate at one input dimension.
//! Variable-dimension presets train one estimator with native dimensions
//! uniform on `[1, 100]` and evaluate it at several padded sizes.
//! Misspecification presets pair an assumed regression model with a
//! different data source, optionally training on that source ("switched").

use super::EvalTaskSpec;
use crate::models::ProbModelSpec;
use crate::nn::Activation;
use crate::tasks::{DataSource, DimPolicy, MisspecKind, MisspecSource, TaskSpec};

/// Maximum native dimension of variable-dimension training.
pub const VARIABLE_MAX_DIM: usize = 100;

/// Tabular datasets used by the benchmark. They are not bundled; supply a
/// CSV export to the `tabular` subcommand.
pub const TABULAR_REGRESSION: [&str; 9] = [
    "airfoil_self_noise",
    "concrete_compressive_strength",
    "energy_efficiency",
    "solar_flare",
    "student_performance_por",
    "QSAR_fish_toxicity",
    "red_wine",
    "socmob",
    "cars",
];

pub const TABULAR_CLASSIFICATION: [&str; 13] = [
    "credit-g",
    "diabetes",
    "tic-tac-toe",
    "pc4",
    "pc3",
    "kc2",
    "pc1",
    "banknote-authentication",
    "blood-transfusion-service-center",
    "ilpd",
    "qsar-biodeg",
    "wdbc",
    "climate-model-simulation-crashes",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Preset {
    pub id: String,
    pub train: TaskSpec,
    pub evals: Vec<EvalTaskSpec>,
    /// Training iterations at full scale.
    pub iterations: usize,
}

const ACTIVATIONS: [(Activation, &str); 2] =
    [(Activation::Tanh, "tanh"), (Activation::Relu, "relu")];
const HIDDEN: usize = crate::models::DEFAULT_HIDDEN_WIDTH;

fn fixed(id: String, model: ProbModelSpec, iterations: usize) -> Preset {
    let train = TaskSpec::generative(model);
    Preset {
        evals: vec![EvalTaskSpec {
            id: id.clone(),
            task: train.clone(),
        }],
        id,
        train,
        iterations,
    }
}

fn variable(id: String, model: ProbModelSpec, eval_dims: &[usize], iterations: usize) -> Preset {
    let train = TaskSpec::variable(model);
    let evals = eval_dims
        .iter()
        .map(|&d| EvalTaskSpec {
            id: format!("{id}/d{d}"),
            task: TaskSpec {
                dim: DimPolicy::Padded { native: d },
                ..train.clone()
            },
        })
        .collect();
    Preset {
        id,
        train,
        evals,
        iterations,
    }
}

/// The fixed-dimension task list (36 tasks).
pub fn fixed_dim() -> Vec<Preset> {
    let mut out = Vec::new();
    for d in [2, 100] {
        out.push(fixed(
            format!("fixed/gm_d{d}"),
            ProbModelSpec::gm(d),
            50_000,
        ));
    }
    for d in [2, 5] {
        for k in [2, 5] {
            out.push(fixed(
                format!("fixed/gmm_d{d}_k{k}"),
                ProbModelSpec::gmm(d, k),
                250_000,
            ));
        }
    }
    for d in [1, 100] {
        out.push(fixed(
            format!("fixed/lr_d{d}"),
            ProbModelSpec::lr(d),
            150_000,
        ));
    }
    for d in [1, 25] {
        for l in [1, 2] {
            for (a, an) in ACTIVATIONS {
                out.push(fixed(
                    format!("fixed/nlr_d{d}_l{l}_{an}"),
                    ProbModelSpec::nlr(d, l, HIDDEN, a),
                    250_000,
                ));
            }
        }
    }
    for d in [2, 100] {
        for c in [2, 5] {
            out.push(fixed(
                format!("fixed/lc_d{d}_c{c}"),
                ProbModelSpec::lc(d, c),
                150_000,
            ));
        }
    }
    for d in [2, 25] {
        for l in [1, 2] {
            for (a, an) in ACTIVATIONS {
                for c in [2, 5] {
                    out.push(fixed(
                        format!("fixed/nlc_d{d}_l{l}_{an}_c{c}"),
                        ProbModelSpec::nlc(d, c, l, HIDDEN, a),
                        250_000,
                    ));
                }
            }
        }
    }
    out
}

/// The variable-dimension models (18) and their evaluation sets (52 tasks).
pub fn variable_dim() -> Vec<Preset> {
    let m = VARIABLE_MAX_DIM;
    let mut out = vec![variable(
        "var/gm".into(),
        ProbModelSpec::gm(m),
        &[2, 50, 100],
        100_000,
    )];
    for k in [2, 5] {
        out.push(variable(
            format!("var/gmm_k{k}"),
            ProbModelSpec::gmm(m, k),
            &[2, 5],
            500_000,
        ));
    }
    out.push(variable(
        "var/lr".into(),
        ProbModelSpec::lr(m),
        &[1, 50, 100],
        250_000,
    ));
    for l in [1, 2] {
        for (a, an) in ACTIVATIONS {
            out.push(variable(
                format!("var/nlr_l{l}_{an}"),
                ProbModelSpec::nlr(m, l, HIDDEN, a),
                &[1, 50, 100],
                500_000,
            ));
        }
    }
    for c in [2, 5] {
        out.push(variable(
            format!("var/lc_c{c}"),
            ProbModelSpec::lc(m, c),
            &[2, 50, 100],
            250_000,
        ));
    }
    for l in [1, 2] {
        for (a, an) in ACTIVATIONS {
            for c in [2, 5] {
                out.push(variable(
                    format!("var/nlc_l{l}_{an}_c{c}"),
                    ProbModelSpec::nlc(m, c, l, HIDDEN, a),
                    &[2, 50, 100],
                    500_000,
                ));
            }
        }
    }
    out
}

fn source_name(k: MisspecKind) -> &'static str {
    match k {
        MisspecKind::Linear => "lr",
        MisspecKind::MlpTanh => "nlr",
        MisspecKind::GpRbf => "gp",
    }
}

/// Assumed LR or one-layer tanh NLR, evaluated on each other source, with
/// and without switched training data. Inputs are one-dimensional.
pub fn misspecification() -> Vec<Preset> {
    let assumed = [
        (ProbModelSpec::lr(1), MisspecKind::Linear),
        (
            ProbModelSpec::nlr(1, 1, HIDDEN, Activation::Tanh),
            MisspecKind::MlpTanh,
        ),
    ];
    let mut out = Vec::new();
    for (model, own) in assumed {
        for test in [
            MisspecKind::Linear,
            MisspecKind::MlpTanh,
            MisspecKind::GpRbf,
        ] {
            if test == own {
                continue;
            }
            let src = DataSource::Misspec(MisspecSource::new(test));
            let eval = TaskSpec {
                source: src.clone(),
                ..TaskSpec::generative(model.clone())
            };
            let id = format!("misspec/{}_on_{}", source_name(own), source_name(test));
            for switched in [false, true] {
                let train = if switched {
                    eval.clone()
                } else {
                    TaskSpec::generative(model.clone())
                };
                let pid = if switched {
                    format!("{id}+switched")
                } else {
                    id.clone()
                };
                out.push(Preset {
                    id: pid,
                    train,
                    evals: vec![EvalTaskSpec {
                        id: id.clone(),
                        task: eval.clone(),
                    }],
                    iterations: 250_000,
                });
            }
        }
    }
    out
}

pub fn all() -> Vec<Preset> {
    let mut v = fixed_dim();
    v.extend(variable_dim());
    v.extend(misspecification());
    v
}

pub fn find(id: &str) -> Option<Preset> {
    all().into_iter().find(|p| p.id == id)
}
