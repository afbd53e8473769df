use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{
    ExperimentConfig, MethodConfig, MethodKind, MethodPlan, ProblemConfig, ProblemKind,
};
use super::problem::{ground_truth, GaussianSpec, ProblemSpec};
use crate::baselines::{mp_svgd_run, svgd_run, svn_ctr_run, StepSchedule, ADAGRAD_EPSILON};
use crate::error::{Error, Result};
use crate::eval::{MmdReference, MmdReferenceInfo, GROUND_TRUTH_CAP};
use crate::kernels::{LocalKernelFamily, Rbf, MEDIAN_SUBSAMPLE_ROWS};
use crate::model::{build_snlp, generate_bayes_net, FactorLayout, TargetModel, SCHEMA_VERSION};
use crate::parallel::{try_map_indexed, Workers};
use crate::samples::SampleMatrix;
use crate::stein::ParticleSet;
use crate::trace::{RunOutput, Trace};
use crate::trustregion::{tr_svi_at_run, tr_svi_kl_run, KlOptions, EIGENVALUE_FLOOR};

/// Mixed into a run seed to seed the Nyström subsets of the KL-ratio driver.
pub const KL_SEED_MIX: u64 = 0x9E37_79B9_7F4A_7C15;

pub const METRIC_NAME: &str = "mmd_squared_biased";

/// Builds the problem instance described by a resolved problem config.
pub fn generate_problem(problem: &ProblemConfig) -> Result<ProblemSpec> {
    let unresolved = || Error::config("problem", "config not resolved");
    match problem.kind {
        ProblemKind::BayesNet => Ok(ProblemSpec::BayesNet(generate_bayes_net(
            problem.bayes_net.as_ref().ok_or_else(unresolved)?,
        )?)),
        ProblemKind::Snlp => Ok(ProblemSpec::Snlp(build_snlp(
            problem.snlp.as_ref().ok_or_else(unresolved)?,
        )?)),
        ProblemKind::Gaussian => {
            let spec = GaussianSpec::new(
                problem.mean.clone().ok_or_else(unresolved)?,
                problem.covariance.clone().ok_or_else(unresolved)?,
            );
            spec.target()
                .map_err(|e| Error::config("problem.covariance", e.to_string()))?;
            Ok(ProblemSpec::Gaussian(spec))
        }
        ProblemKind::File => ProblemSpec::read(problem.path.as_ref().ok_or_else(unresolved)?),
    }
}

/// Resolves a problem section and builds its instance.
pub fn prepare_problem(problem: &mut ProblemConfig) -> Result<ProblemSpec> {
    problem.resolve()?;
    let spec = generate_problem(problem)?;
    problem.ground_truth.resolve(&spec);
    Ok(spec)
}

/// A config resolved against its generated problem.
pub struct Prepared {
    pub config: ExperimentConfig,
    pub spec: ProblemSpec,
    pub target: Box<dyn TargetModel>,
}

impl Prepared {
    pub fn new(mut config: ExperimentConfig) -> Result<Self> {
        config.resolve()?;
        let spec = generate_problem(&config.problem)?;
        let target = spec.target()?;
        config.problem.ground_truth.resolve(&spec);
        let dim = target.dim();
        let (center, scale) = spec.default_init(dim);
        let center = config.run.init_center.get_or_insert(center);
        if center.len() != dim {
            return Err(Error::config(
                "run.init_center",
                format!(
                    "has {} entries, the problem has {dim} dimensions",
                    center.len()
                ),
            ));
        }
        config.run.init_scale.get_or_insert(scale);
        Ok(Prepared {
            config,
            spec,
            target,
        })
    }

    pub fn kernel(&self) -> Result<Rbf> {
        Rbf::new(self.config.lengthscale())
    }

    pub fn initial_particles(&self, seed: u64) -> Result<ParticleSet> {
        let run = &self.config.run;
        ParticleSet::gaussian(
            run.particles,
            run.init_center.as_deref().unwrap_or_default(),
            run.init_scale.unwrap_or(1.0),
            seed,
        )
    }
}

/// Runs one resolved method from `init`.
pub fn run_method(
    plan: &MethodPlan,
    iterations: usize,
    init: &ParticleSet,
    target: &dyn TargetModel,
    kernel: Rbf,
    seed: u64,
) -> Result<RunOutput> {
    let family = || LocalKernelFamily::new(kernel, target.layout().clone());
    match plan {
        MethodPlan::TrSviAt => tr_svi_at_run(init, target, &family(), iterations),
        MethodPlan::TrSviKl {
            initial_radius,
            nystrom_size,
        } => {
            let options = KlOptions {
                initial_radius: *initial_radius,
                iterations,
                seed: seed ^ KL_SEED_MIX,
                nystrom_size: Some(*nystrom_size),
            };
            tr_svi_kl_run(init, target, &family(), &options)
        }
        MethodPlan::MpSvgd { rule, step } => {
            let mut schedule = StepSchedule::new(*rule, *step)?;
            mp_svgd_run(init, target, &family(), &mut schedule, iterations)
        }
        MethodPlan::Svgd { step } => svgd_run(init, target, kernel, *step, iterations),
        MethodPlan::SvnCtr { radius } => svn_ctr_run(init, target, kernel, *radius, iterations),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mmd: Option<f64>,
    pub initial_gradient_magnitude: f64,
    pub final_gradient_magnitude: f64,
    pub iterations_run: usize,
    pub converged: bool,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; zero for a single seed.
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(Summary { mean, std })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub label: String,
    pub kind: MethodKind,
    pub runs: Vec<RunMetrics>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub summary: Option<Summary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metric: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reference: Option<MmdReferenceInfo>,
    pub methods: Vec<MethodMetrics>,
}

impl MetricsReport {
    pub fn method(&self, label: &str) -> Option<&MethodMetrics> {
        self.methods.iter().find(|m| m.label == label)
    }

    /// Plain-text table of mean and standard deviation per method.
    pub fn table(&self) -> String {
        let mut out = format!("{:<24} {:>14} {:>14}\n", "method", METRIC_NAME, "std");
        for m in &self.methods {
            match &m.summary {
                Some(s) => out.push_str(&format!(
                    "{:<24} {:>14.6e} {:>14.6e}\n",
                    m.label, s.mean, s.std
                )),
                None => out.push_str(&format!("{:<24} {:>14} {:>14}\n", m.label, "-", "-")),
            }
        }
        out
    }
}

fn run_metrics(seed: u64, trace: &Trace, converged: bool, mmd: Option<f64>) -> RunMetrics {
    let g = trace.gradient_magnitudes();
    RunMetrics {
        seed,
        mmd,
        initial_gradient_magnitude: g.first().copied().unwrap_or(f64::NAN),
        final_gradient_magnitude: g.last().copied().unwrap_or(f64::NAN),
        iterations_run: trace.last().map_or(0, |r| r.iteration),
        converged,
        notes: trace.notes.clone(),
    }
}

fn method_metrics(config: &ExperimentConfig, runs: Vec<RunMetrics>) -> Vec<MethodMetrics> {
    let seeds = config.run.seeds.len();
    let mut runs = runs.into_iter();
    config
        .methods
        .iter()
        .map(|m| {
            let runs: Vec<RunMetrics> = runs.by_ref().take(seeds).collect();
            let values: Vec<f64> = runs.iter().filter_map(|r| r.mmd).collect();
            MethodMetrics {
                label: m.label().to_string(),
                kind: m.kind,
                summary: if values.len() == runs.len() {
                    Summary::of(&values)
                } else {
                    None
                },
                runs,
            }
        })
        .collect()
}

#[derive(Serialize)]
struct Constants {
    median_subsample_rows: usize,
    mmd_ground_truth_cap: usize,
    nystrom_eigenvalue_floor: f64,
    adagrad_epsilon: f64,
    kl_seed_mix: u64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    version: &'static str,
    dim: usize,
    factors: usize,
    config: &'a ExperimentConfig,
    constants: Constants,
    #[serde(skip_serializing_if = "Option::is_none")]
    ground_truth_reference: Option<&'a MmdReferenceInfo>,
}

#[derive(Deserialize)]
struct ManifestHead {
    config: ExperimentConfig,
}

#[derive(Serialize)]
struct RunTiming<'a> {
    label: &'a str,
    seed: u64,
    wall_ms: f64,
}

#[derive(Serialize)]
struct Timings<'a> {
    workers: usize,
    total_ms: f64,
    ground_truth_ms: f64,
    runs: Vec<RunTiming<'a>>,
}

/// Paths inside a run directory.
pub mod layout {
    use std::path::{Path, PathBuf};

    pub const MANIFEST: &str = "manifest.json";
    pub const PROBLEM: &str = "problem.json";
    pub const METRICS: &str = "metrics.json";
    pub const TIMINGS: &str = "timings.json";

    fn ext(binary: bool) -> &'static str {
        if binary {
            "bin"
        } else {
            "csv"
        }
    }

    pub fn ground_truth(dir: &Path, binary: bool) -> PathBuf {
        dir.join(format!("ground_truth.{}", ext(binary)))
    }

    pub fn init(dir: &Path, seed: u64) -> PathBuf {
        dir.join("init").join(format!("seed_{seed}.csv"))
    }

    pub fn run_dir(dir: &Path, label: &str, seed: u64) -> PathBuf {
        dir.join(label).join(format!("seed_{seed}"))
    }

    pub fn trace(dir: &Path, label: &str, seed: u64) -> PathBuf {
        run_dir(dir, label, seed).join("trace.csv")
    }

    pub fn samples(dir: &Path, label: &str, seed: u64, binary: bool) -> PathBuf {
        run_dir(dir, label, seed).join(format!("samples.{}", ext(binary)))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de)
        .map_err(|e| Error::format(path, format!("at `{}`: {}", e.path(), e.inner())))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_samples(m: &SampleMatrix, path: &Path, header: &[String], binary: bool) -> Result<()> {
    if binary {
        m.write_binary(path)
    } else {
        m.write_csv(path, header)
    }
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Runs every method for every seed and writes the artifact directory.
///
/// `out` must be absent or empty. On failure everything written below `out`
/// is removed again.
pub fn run_experiment(config: ExperimentConfig, out: &Path) -> Result<MetricsReport> {
    let existed = out.exists();
    if existed {
        let mut entries = fs::read_dir(out).map_err(|e| Error::io(out, e))?;
        if entries.next().is_some() {
            return Err(Error::invalid(format!(
                "output directory {} is not empty",
                out.display()
            )));
        }
    }
    let result = run_into(config, out);
    if result.is_err() {
        let _ = fs::remove_dir_all(out);
        if existed {
            let _ = fs::create_dir_all(out);
        }
    }
    result
}

struct Job {
    output: RunOutput,
    mmd: Option<f64>,
    wall_ms: f64,
}

fn run_into(config: ExperimentConfig, out: &Path) -> Result<MetricsReport> {
    let start = Instant::now();
    let prepared = Prepared::new(config)?;
    let workers = prepared.config.run.workers;
    Workers(workers).install(|| execute(&prepared, out, start))
}

fn execute(prepared: &Prepared, out: &Path, start: Instant) -> Result<MetricsReport> {
    let cfg = &prepared.config;
    let target = prepared.target.as_ref();
    let kernel = prepared.kernel()?;
    let binary = cfg.output.binary_samples;
    let names = target.dim_names();
    create_dir(out)?;
    prepared.spec.write(&out.join(layout::PROBLEM))?;

    let gt_start = Instant::now();
    let gt_cfg = &cfg.problem.ground_truth;
    let truth = ground_truth(&prepared.spec, target, gt_cfg)?;
    let reference = truth
        .as_ref()
        .map(|t| MmdReference::new(t, gt_cfg.seed))
        .transpose()?;
    let ground_truth_ms = ms(gt_start);
    if let Some(t) = &truth {
        write_samples(t, &layout::ground_truth(out, binary), &names, binary)?;
    }

    let seeds = &cfg.run.seeds;
    let inits = seeds
        .iter()
        .map(|&s| prepared.initial_particles(s))
        .collect::<Result<Vec<_>>>()?;
    create_dir(&out.join("init"))?;
    for (s, init) in seeds.iter().zip(&inits) {
        init.positions().write_csv(&layout::init(out, *s), &names)?;
    }

    let jobs = try_map_indexed(cfg.methods.len() * seeds.len(), |j| -> Result<Job> {
        let (m, k) = (j / seeds.len(), j % seeds.len());
        let method = &cfg.methods[m];
        let begin = Instant::now();
        let output = run_method(
            &method.plan(),
            method.iterations(),
            &inits[k],
            target,
            kernel,
            seeds[k],
        )?;
        let wall_ms = ms(begin);
        let mmd = reference
            .as_ref()
            .map(|r| r.mmd(output.particles.positions()))
            .transpose()?;
        Ok(Job {
            output,
            mmd,
            wall_ms,
        })
    })?;

    let mut runs = Vec::with_capacity(jobs.len());
    let mut timings = Vec::with_capacity(jobs.len());
    for (j, job) in jobs.iter().enumerate() {
        let method = &cfg.methods[j / seeds.len()];
        let seed = seeds[j % seeds.len()];
        let label = method.label();
        create_dir(&layout::run_dir(out, label, seed))?;
        job.output
            .trace
            .write_csv(&layout::trace(out, label, seed), cfg.output.record_timings)?;
        write_samples(
            job.output.particles.positions(),
            &layout::samples(out, label, seed, binary),
            &names,
            binary,
        )?;
        runs.push(run_metrics(
            seed,
            &job.output.trace,
            job.output.converged,
            job.mmd,
        ));
        timings.push(RunTiming {
            label,
            seed,
            wall_ms: job.wall_ms,
        });
    }

    let report = MetricsReport {
        metric: METRIC_NAME.to_string(),
        reference: reference.as_ref().map(MmdReference::info),
        methods: method_metrics(cfg, runs),
    };
    write_json(&out.join(layout::METRICS), &report)?;
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        version: env!("CARGO_PKG_VERSION"),
        dim: target.dim(),
        factors: target.layout().num_factors(),
        config: cfg,
        constants: Constants {
            median_subsample_rows: MEDIAN_SUBSAMPLE_ROWS,
            mmd_ground_truth_cap: GROUND_TRUTH_CAP,
            nystrom_eigenvalue_floor: EIGENVALUE_FLOOR,
            adagrad_epsilon: ADAGRAD_EPSILON,
            kl_seed_mix: KL_SEED_MIX,
        },
        ground_truth_reference: report.reference.as_ref(),
    };
    write_json(&out.join(layout::MANIFEST), &manifest)?;
    if cfg.output.record_timings {
        let timings = Timings {
            workers: rayon::current_num_threads(),
            total_ms: ms(start),
            ground_truth_ms,
            runs: timings,
        };
        write_json(&out.join(layout::TIMINGS), &timings)?;
    }
    Ok(report)
}

/// Reads the resolved config back from a run directory's manifest.
pub fn read_manifest_config(dir: &Path) -> Result<ExperimentConfig> {
    Ok(read_json::<ManifestHead>(&dir.join(layout::MANIFEST))?.config)
}

/// Recomputes the metric report of a finished run directory from its
/// ground-truth and sample files.
pub fn evaluate_run(dir: &Path) -> Result<MetricsReport> {
    let cfg = read_manifest_config(dir)?;
    let binary = cfg.output.binary_samples;
    let gt_path = layout::ground_truth(dir, binary);
    let reference = if gt_path.exists() {
        Some(MmdReference::new(
            &SampleMatrix::read_any(&gt_path)?,
            cfg.problem.ground_truth.seed,
        )?)
    } else {
        None
    };
    let seeds = &cfg.run.seeds;
    let pairs: Vec<(&MethodConfig, u64)> = cfg
        .methods
        .iter()
        .flat_map(|m| seeds.iter().map(move |&s| (m, s)))
        .collect();
    let runs = try_map_indexed(pairs.len(), |j| -> Result<RunMetrics> {
        let (method, seed) = pairs[j];
        let label = method.label();
        let trace = Trace::read_csv(&layout::trace(dir, label, seed))?;
        let samples = SampleMatrix::read_any(&layout::samples(dir, label, seed, binary))?;
        let mmd = reference.as_ref().map(|r| r.mmd(&samples)).transpose()?;
        // drivers only stop early on convergence
        let converged = trace
            .last()
            .is_some_and(|r| r.iteration < method.iterations());
        Ok(run_metrics(seed, &trace, converged, mmd))
    })?;
    Ok(MetricsReport {
        metric: METRIC_NAME.to_string(),
        reference: reference.as_ref().map(MmdReference::info),
        methods: method_metrics(&cfg, runs),
    })
}

/// MMD of each sample against one ground truth, with the median-heuristic
/// kernel of the ground truth.
pub fn evaluate_samples(
    ground_truth: &SampleMatrix,
    samples: &[SampleMatrix],
    seed: u64,
) -> Result<(MmdReferenceInfo, Vec<f64>)> {
    let reference = MmdReference::new(ground_truth, seed)?;
    let values = samples
        .iter()
        .map(|s| reference.mmd(s))
        .collect::<Result<Vec<_>>>()?;
    Ok((reference.info(), values))
}

/// Writes one CSV per requested factor holding that factor's columns.
pub fn export_marginals(
    samples: &SampleMatrix,
    header: &[String],
    layout: &FactorLayout,
    factors: &[usize],
    out: &Path,
) -> Result<Vec<PathBuf>> {
    if samples.cols() != layout.total_dim() {
        return Err(Error::DimensionMismatch {
            expected: layout.total_dim(),
            got: samples.cols(),
        });
    }
    for &a in factors {
        if a >= layout.num_factors() {
            return Err(Error::invalid(format!(
                "unknown factor {a}; the layout has {} factors",
                layout.num_factors()
            )));
        }
    }
    create_dir(out)?;
    factors
        .iter()
        .map(|&a| {
            let cols: Vec<usize> = layout.factor(a).collect();
            let names: Vec<String> = cols.iter().map(|&c| header[c].clone()).collect();
            let path = out.join(format!("factor_{a}.csv"));
            samples.select_cols(&cols).write_csv(&path, &names)?;
            Ok(path)
        })
        .collect()
}
