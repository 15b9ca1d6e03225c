//! Command-line driver: run experiment sweeps, materialize synthetic
//! data, inspect budget schedules, and score prediction files.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime or divergence
//! error, 3 I/O error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use mpmtl::accountant::{
    composition_bound, schedule_geometric, schedule_polynomial, schedule_uniform,
};
use mpmtl::config::{apply_overrides, from_toml_str, DataKind, Overrides, RunConfig};
use mpmtl::evaluation::metrics::{average_auc, nmse_with, NmsePooling};
use mpmtl::evaluation::{run_experiment, schedule_echoes};
use mpmtl::rng::{derive_seed, purpose};
use mpmtl::synthdata::generate;
use mpmtl::model::write_task_csv;
use mpmtl::Error;

#[derive(Parser)]
#[command(
    name = "mpmtl",
    version,
    about = "Model-protected multi-task learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the configured sweep and write report CSVs plus a
    /// resolved-config echo to the output directory.
    Run(RunArgs),
    /// Materialize the configured synthetic dataset as per-task CSVs.
    Gen(GenArgs),
    /// Print a per-iteration budget schedule and its composition bound.
    Budget(BudgetArgs),
    /// Score a predictions CSV (columns: task,prediction,target).
    Eval(EvalArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    config: PathBuf,
    /// Comma-separated privacy budgets superseding the config grid.
    #[arg(long, value_delimiter = ',')]
    eps_grid: Option<Vec<f64>>,
    /// Replication count superseding the config.
    #[arg(long)]
    replications: Option<usize>,
    /// Master seed superseding the config.
    #[arg(long)]
    master_seed: Option<u64>,
    /// Output directory superseding the config.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Maximum concurrent workers (default: available parallelism).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct GenArgs {
    /// TOML run configuration with a synthetic data section.
    config: PathBuf,
    /// Replication index whose dataset to materialize.
    #[arg(long, default_value_t = 0)]
    replication: usize,
    /// Directory for the CSV files (default: <output.dir>/data).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Uniform,
    Polynomial,
    Geometric,
}

#[derive(Args)]
struct BudgetArgs {
    /// Number of iterations to split the budget across.
    #[arg(long)]
    iters: usize,
    /// Allocation family.
    #[arg(long, value_enum, default_value_t = FamilyArg::Polynomial)]
    family: FamilyArg,
    /// Polynomial exponent (weights proportional to t^alpha).
    #[arg(long)]
    alpha: Option<f64>,
    /// Geometric ratio (weights proportional to q^-t).
    #[arg(long)]
    q: Option<f64>,
    /// Total privacy budget.
    #[arg(long)]
    eps: f64,
    /// Composition slack.
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Nmse,
    Aauc,
}

#[derive(Args)]
struct EvalArgs {
    /// CSV with header task,prediction,target.
    predictions: PathBuf,
    #[arg(long, value_enum, default_value_t = MetricArg::Nmse)]
    metric: MetricArg,
    /// Normalize each task by its own variance instead of pooling.
    #[arg(long)]
    per_task: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Gen(args) => cmd_gen(args),
        Command::Budget(args) => cmd_budget(args),
        Command::Eval(args) => cmd_eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidInput(_) | Error::DimensionMismatch(_) | Error::Csv(_) => 1,
        Error::Diverged { .. } => 2,
        Error::Io(_) => 3,
    }
}

fn read_config(path: &Path) -> Result<RunConfig, Error> {
    let text = fs::read_to_string(path)?;
    from_toml_str(&text)
}

fn cmd_run(args: RunArgs) -> Result<(), Error> {
    let mut config = read_config(&args.config)?;
    let overrides = Overrides {
        eps_grid: args.eps_grid,
        replications: args.replications,
        master_seed: args.master_seed,
        output_dir: args.output,
    };
    apply_overrides(&mut config, &overrides)?;

    let mut resolved = config.clone();
    resolved.schedules = schedule_echoes(&config)?;

    let out_dir = config.output.dir.clone();
    fs::create_dir_all(&out_dir)?;
    fs::write(out_dir.join("resolved_config.toml"), resolved.to_toml_string()?)?;

    let report = run_experiment(&config, args.workers)?;
    let metrics_path = out_dir.join("metrics.csv");
    let summary_path = out_dir.join("summary.csv");
    fs::write(&metrics_path, report.to_csv_string()?)?;
    fs::write(&summary_path, report.summary_to_csv_string()?)?;

    let failures = report
        .rows
        .iter()
        .filter(|r| r.metric == "failed" && r.value == 1.0)
        .count();
    println!(
        "wrote {} and {} ({} rows, {} failed cells)",
        metrics_path.display(),
        summary_path.display(),
        report.rows.len(),
        failures
    );
    Ok(())
}

fn cmd_gen(args: GenArgs) -> Result<(), Error> {
    let config = read_config(&args.config)?;
    if config.data.kind == DataKind::Csv {
        return Err(Error::config("gen requires a synthetic data section"));
    }
    let master = config.experiment.master_seed;
    let seed = derive_seed(master, &[purpose::DATA, args.replication as u64]);
    let spec = config.data.synthetic_spec(seed)?;
    let data = generate(&spec)?;

    let dir = args
        .output
        .unwrap_or_else(|| config.output.dir.join("data"));
    fs::create_dir_all(&dir)?;
    for (i, task) in data.train.tasks().iter().enumerate() {
        write_task_csv(task, dir.join(format!("train_{i:03}.csv")), true)?;
    }
    for (i, task) in data.test.tasks().iter().enumerate() {
        write_task_csv(task, dir.join(format!("test_{i:03}.csv")), true)?;
    }
    let mut w = csv::Writer::from_path(dir.join("w_true.csv"))?;
    let header: Vec<String> = (0..data.w_true.n_tasks()).map(|i| format!("task{i}")).collect();
    w.write_record(&header)?;
    for r in 0..data.w_true.n_features() {
        let row: Vec<String> = (0..data.w_true.n_tasks())
            .map(|c| data.w_true.matrix()[(r, c)].to_string())
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    println!(
        "wrote {} train tasks, {} test tasks, and w_true.csv to {}",
        data.train.n_tasks(),
        data.test.n_tasks(),
        dir.display()
    );
    Ok(())
}

fn cmd_budget(args: BudgetArgs) -> Result<(), Error> {
    let sched = match args.family {
        FamilyArg::Uniform => {
            if args.alpha.is_some() || args.q.is_some() {
                return Err(Error::config("uniform family takes neither alpha nor q"));
            }
            schedule_uniform(args.iters, args.eps, args.delta)?
        }
        FamilyArg::Polynomial => {
            if args.q.is_some() {
                return Err(Error::config("polynomial family does not take q"));
            }
            schedule_polynomial(args.iters, args.alpha.unwrap_or(0.0), args.eps, args.delta)?
        }
        FamilyArg::Geometric => {
            if args.alpha.is_some() {
                return Err(Error::config("geometric family does not take alpha"));
            }
            let q = args.q.ok_or_else(|| Error::config("geometric family requires --q"))?;
            schedule_geometric(args.iters, q, args.eps, args.delta)?
        }
    };
    println!("iter\teps_t");
    for (i, e) in sched.per_iter().iter().enumerate() {
        println!("{}\t{}", i + 1, e);
    }
    let bound = composition_bound(sched.per_iter(), args.delta)?;
    println!("composition_bound\t{bound}");
    println!("target_eps\t{}", args.eps);
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), Error> {
    let file = fs::File::open(&args.predictions)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    {
        let headers = reader.headers()?;
        let expected = ["task", "prediction", "target"];
        if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(Error::invalid(format!(
                "expected header task,prediction,target, found {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
    }
    let mut by_task: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let task: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("bad task id {:?}", &record[0])))?;
        let pred: f64 = record[1]
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("bad prediction {:?}", &record[1])))?;
        let target: f64 = record[2]
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("bad target {:?}", &record[2])))?;
        if task >= by_task.len() {
            by_task.resize(task + 1, (Vec::new(), Vec::new()));
        }
        by_task[task].0.push(pred);
        by_task[task].1.push(target);
    }
    if by_task.iter().any(|(p, _)| p.is_empty()) {
        return Err(Error::invalid("task ids must be contiguous from 0"));
    }
    let preds: Vec<DVector<f64>> = by_task
        .iter()
        .map(|(p, _)| DVector::from_column_slice(p))
        .collect();
    let targets: Vec<DVector<f64>> = by_task
        .iter()
        .map(|(_, t)| DVector::from_column_slice(t))
        .collect();
    match args.metric {
        MetricArg::Nmse => {
            let pooling = if args.per_task {
                NmsePooling::PerTaskMean
            } else {
                NmsePooling::Pooled
            };
            println!("nmse\t{}", nmse_with(pooling, &preds, &targets)?);
        }
        MetricArg::Aauc => {
            if args.per_task {
                return Err(Error::config("--per-task applies only to nmse"));
            }
            println!("aauc\t{}", average_auc(&preds, &targets)?);
        }
    }
    Ok(())
}
