//! End-to-end experiments: config files, problem generation, ground truth,
//! method runs and metric reports.

mod config;
mod defaults;
mod problem;
mod run;

pub use config::{
    ExperimentConfig, KernelConfig, MethodConfig, MethodKind, MethodPlan, OutputConfig, Preset,
    ProblemConfig, ProblemKind, RuleName, RunConfig,
};
pub use defaults::{Family, Hyperparameters, DEFAULT_INITIAL_RADIUS};
pub use problem::{
    ground_truth, GaussianSpec, GroundTruthConfig, ProblemSpec, DEFAULT_GROUND_TRUTH_SAMPLES,
};
pub use run::{
    evaluate_run, evaluate_samples, export_marginals, generate_problem, layout, prepare_problem,
    read_manifest_config, run_experiment, run_method, MethodMetrics, MetricsReport, Prepared,
    RunMetrics, Summary, KL_SEED_MIX, METRIC_NAME,
};
