//! The six generative models: GM, GMM, LR, NLR, LC and NLC.

mod data;
mod graph_density;
mod likelihood;
mod posterior;
mod spec;

pub use data::{
    sample_categorical, sample_data, sample_inputs, sample_prior, softmax_scaled,
    standard_normal_vec, ObservationSet, Targets,
};
pub use graph_density::{log_joint_graph, log_likelihood_graph, log_prior_graph, outputs_graph};
pub use likelihood::{
    argmax, bnn_forward, forward_outputs, grad_log_joint, log_joint, log_joint_and_grad,
    log_likelihood, log_likelihood_and_grad, log_likelihood_rows, log_prior, predict_mode,
    Prediction,
};
pub use posterior::{exact_posterior, Covariance, GaussianPosterior};
pub use spec::{
    Family, Layout, LayoutEntry, ParamVector, ProbModelSpec, DEFAULT_HIDDEN_WIDTH,
    DEFAULT_OBS_NOISE_VAR, DEFAULT_TEMPERATURE,
};
