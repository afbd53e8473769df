use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use trsvi::experiment::{
    evaluate_run, evaluate_samples, export_marginals, ground_truth, layout, prepare_problem,
    run_experiment, ExperimentConfig, ProblemSpec,
};
use trsvi::parallel::Workers;
use trsvi::SampleMatrix;

#[derive(Parser)]
#[command(
    name = "trsvi",
    version,
    about = "Trust-region graphical Stein variational inference experiments"
)]
struct Cli {
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the problem instance of a config and write `problem.json`.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the problem generator seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Also draw and write the ground-truth sample.
        #[arg(long)]
        ground_truth: bool,
    },
    /// Run every configured method for every seed.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Runs this single seed instead of `run.seeds`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compute MMD against ground truth, either for a run directory or for
    /// individual sample files.
    Evaluate {
        /// A directory written by `run`.
        #[arg(long, conflicts_with_all = ["ground_truth", "samples"])]
        run: Option<PathBuf>,
        #[arg(long, requires = "samples")]
        ground_truth: Option<PathBuf>,
        #[arg(long, num_args = 1..)]
        samples: Vec<PathBuf>,
        /// Seed of the ground-truth subsample and median heuristic.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Write one CSV per factor with that factor's columns of a sample file.
    ExportMarginals {
        #[arg(long)]
        samples: PathBuf,
        /// The `problem.json` the samples belong to.
        #[arg(long)]
        problem: PathBuf,
        /// Factor indices; all factors when omitted.
        #[arg(long, value_delimiter = ',')]
        factors: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn set_problem_seed(cfg: &mut ExperimentConfig, seed: u64) {
    let p = &mut cfg.problem;
    if let Some(b) = p.bayes_net.as_mut() {
        b.seed = seed;
    } else if let Some(s) = p.snlp.as_mut() {
        s.seed = seed;
    } else {
        p.seed = Some(seed);
    }
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::from_path(path).with_context(|| format!("reading config {}", path.display()))
}

fn generate(config: &Path, out: &Path, seed: Option<u64>, with_truth: bool) -> Result<()> {
    let mut cfg = load(config)?;
    if let Some(s) = seed {
        set_problem_seed(&mut cfg, s);
    }
    let spec = prepare_problem(&mut cfg.problem)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let problem_path = out.join(layout::PROBLEM);
    spec.write(&problem_path)?;
    println!("wrote {}", problem_path.display());
    if with_truth {
        let target = spec.target()?;
        match ground_truth(&spec, target.as_ref(), &cfg.problem.ground_truth)? {
            Some(gt) => {
                let path = layout::ground_truth(out, false);
                gt.write_csv(&path, &target.dim_names())?;
                println!("wrote {} ({} rows)", path.display(), gt.rows());
            }
            None => println!("ground truth disabled (problem.ground_truth.samples = 0)"),
        }
    }
    Ok(())
}

fn run(config: &Path, out: &Path, seed: Option<u64>, workers: usize) -> Result<()> {
    let mut cfg = load(config)?;
    if let Some(s) = seed {
        cfg.run.seeds = vec![s];
    }
    cfg.run.workers = workers;
    let report = run_experiment(cfg, out)?;
    print!("{}", report.table());
    println!("artifacts in {}", out.display());
    Ok(())
}

fn evaluate(
    run: Option<PathBuf>,
    ground_truth: Option<PathBuf>,
    samples: Vec<PathBuf>,
    seed: u64,
    json: bool,
) -> Result<()> {
    if let Some(dir) = run {
        let report = evaluate_run(&dir)?;
        if json {
            println!("{}", serde_json::to_string_pretty(&report)?);
        } else {
            print!("{}", report.table());
        }
        return Ok(());
    }
    let Some(gt_path) = ground_truth else {
        bail!("give either --run DIR or --ground-truth FILE --samples FILE...");
    };
    let gt = SampleMatrix::read_any(&gt_path)?;
    let sets = samples
        .iter()
        .map(|p| SampleMatrix::read_any(p))
        .collect::<trsvi::Result<Vec<_>>>()?;
    let (info, values) = evaluate_samples(&gt, &sets, seed)?;
    if json {
        let rows: Vec<_> = samples
            .iter()
            .zip(&values)
            .map(|(p, v)| serde_json::json!({ "samples": p, "mmd_squared_biased": v }))
            .collect();
        let doc = serde_json::json!({ "reference": info, "results": rows });
        println!("{}", serde_json::to_string_pretty(&doc)?);
    } else {
        println!(
            "lengthscale {} from {} of {} ground-truth rows",
            info.lengthscale, info.ground_truth_used, info.ground_truth_rows
        );
        for (p, v) in samples.iter().zip(&values) {
            println!("{}\t{v:.6e}", p.display());
        }
    }
    Ok(())
}

fn export(samples: &Path, problem: &Path, factors: Vec<usize>, out: &Path) -> Result<()> {
    let spec = ProblemSpec::read(problem)?;
    let target = spec.target()?;
    let layout = target.layout();
    let (matrix, header) = SampleMatrix::read_csv(samples)?;
    let factors = if factors.is_empty() {
        (0..layout.num_factors()).collect()
    } else {
        factors
    };
    for path in export_marginals(&matrix, &header, layout, &factors, out)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let workers = cli.workers;
    let result = Workers(workers).install(|| match cli.command {
        Command::Generate {
            config,
            out,
            seed,
            ground_truth,
        } => generate(&config, &out, seed, ground_truth),
        Command::Run { config, out, seed } => run(&config, &out, seed, workers),
        Command::Evaluate {
            run,
            ground_truth,
            samples,
            seed,
            json,
        } => evaluate(run, ground_truth, samples, seed, json),
        Command::ExportMarginals {
            samples,
            problem,
            factors,
            out,
        } => export(&samples, &problem, factors, &out),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
