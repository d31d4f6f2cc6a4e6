use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bellcal::bellman::{fit_base_estimator, iterated_calibration, CalibratorClass, ValuePredictor};
use bellcal::config::ExperimentConfig;
use bellcal::crm::simulate_dataset;
use bellcal::eval::{estimate_cal_error_detailed, scaled_rmse, EvalReport};
use bellcal::experiment::{
    all_failed, data_seed, eval_dataset, ground_truth, prepare_with_data, run_experiment, summary_table, to_csv,
};
use bellcal::io::{write_atomic, write_json};
use bellcal::mdp::TransitionDataset;
use bellcal::oracle::{run_suite, Suite};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bellcal", version, about = "Iterated Bellman calibration for off-policy value prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a CRM transition dataset to JSONL.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit nuisances and a base value model on the training fold.
    FitBase {
        #[command(flatten)]
        common: Common,
        /// Dataset written by `simulate`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Calibrate a base model on the calibration fold.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Model written by `fit-base`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum)]
        class: Option<ClassArg>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        bins: Option<usize>,
        /// Tolerance for merging adjacent isotonic levels in the hybrid.
        #[arg(long)]
        flat_tol: Option<f64>,
        /// Minimum calibration points per hybrid cell.
        #[arg(long)]
        min_cell_count: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a model against Monte Carlo values and estimate its calibration error.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Dataset whose training fold supplies the nuisance models.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full seeds × models × methods matrix and write a CSV.
    Experiment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a deterministic oracle suite.
    Oracle {
        #[arg(value_enum)]
        suite: SuiteArg,
        /// Optional JSON report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// JSON config; missing sections take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single seed instead of `data.seeds`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_cust: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Allow `split.train_fraction = 0` (fit and calibrate on the same data).
    #[arg(long)]
    unsafe_no_split: bool,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading config {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.data.seeds = vec![seed];
        }
        if let Some(n) = self.n_cust {
            cfg.data.n_cust = n;
        }
        if let Some(h) = self.horizon {
            cfg.data.horizon = h;
        }
        cfg.validate(self.unsafe_no_split)?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassArg {
    HistogramEqualMass,
    HistogramEqualWidth,
    Isotonic,
    Hybrid,
}

impl From<ClassArg> for CalibratorClass {
    fn from(c: ClassArg) -> Self {
        match c {
            ClassArg::HistogramEqualMass => CalibratorClass::HistogramEqualMass,
            ClassArg::HistogramEqualWidth => CalibratorClass::HistogramEqualWidth,
            ClassArg::Isotonic => CalibratorClass::Isotonic,
            ClassArg::Hybrid => CalibratorClass::Hybrid,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum SuiteArg {
    Pava,
    DrIdentity,
    Contraction,
    FixedPoint,
    Decomposition,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::Pava => Suite::Pava,
            SuiteArg::DrIdentity => Suite::DrIdentity,
            SuiteArg::Contraction => Suite::Contraction,
            SuiteArg::FixedPoint => Suite::FixedPoint,
            SuiteArg::Decomposition => Suite::Decomposition,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("BELLCAL_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .with_context(|| format!("BELLCAL_THREADS must be a positive integer, got '{value}'"))?;
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    Ok(())
}

fn first_seed(cfg: &ExperimentConfig) -> u64 {
    cfg.data.seeds[0]
}

fn load_dataset(path: &Path) -> Result<TransitionDataset> {
    TransitionDataset::load(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn load_model(path: &Path) -> Result<ValuePredictor> {
    bellcal::io::read_json(path).with_context(|| format!("reading model {}", path.display()))
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Simulate { common, out } => {
            let cfg = common.load()?;
            let data = simulate_dataset(&cfg.crm, cfg.data.n_cust, cfg.data.horizon, data_seed(first_seed(&cfg)))?;
            data.save(&out)?;
            let customers = cfg.data.n_cust.max(1) as f64;
            let churned = data.iter().filter(|t| t.done).count() as f64;
            println!("transitions: {}", data.len());
            println!("churn rate: {:.4}", churned / customers);
        }
        Command::FitBase { common, data, out } => {
            let cfg = common.load()?;
            let seed = first_seed(&cfg);
            let ctx = prepare_with_data(&cfg, seed, load_dataset(&data)?)?;
            let model =
                fit_base_estimator(&ctx.train, &ctx.nuisances, ctx.policy.as_ref(), cfg.crm.discount, &cfg.base.fit)?;
            write_json(&out, &model)?;
            println!("fit base on {} training transitions", ctx.train.data().len());
        }
        Command::Calibrate {
            common,
            data,
            model,
            class,
            iterations,
            bins,
            flat_tol,
            min_cell_count,
            out,
        } => {
            let cfg = common.load()?;
            let mut cal_cfg = cfg.calibration.clone();
            if let Some(c) = class {
                cal_cfg.class = c.into();
            }
            if iterations.is_some() {
                cal_cfg.iterations = iterations;
            }
            if bins.is_some() {
                cal_cfg.bins = bins;
            }
            if let Some(tol) = flat_tol {
                cal_cfg.flat_tol = tol;
            }
            if min_cell_count.is_some() {
                cal_cfg.min_cell_count = min_cell_count;
            }
            cal_cfg.validate()?;
            let base = load_model(&model)?;
            let ctx = prepare_with_data(&cfg, first_seed(&cfg), load_dataset(&data)?)?;
            let (calibrated, run) =
                iterated_calibration(&base, &ctx.cal, &ctx.nuisances, ctx.policy.as_ref(), cfg.crm.discount, &cal_cfg)?;
            write_json(&out, &calibrated)?;
            for d in &run.diagnostics {
                println!("iteration {:>3}  rms change {:.6e}  cells {}", d.iteration, d.rms_change, d.num_cells);
            }
        }
        Command::Evaluate {
            common,
            data,
            model,
            out,
        } => {
            let cfg = common.load()?;
            let seed = first_seed(&cfg);
            let predictor = load_model(&model)?;
            let ctx = prepare_with_data(&cfg, seed, load_dataset(&data)?)?;
            let gamma = cfg.crm.discount;
            let (initial, truth) = ground_truth(&cfg, seed, ctx.policy.as_ref())?;
            let pred: Vec<f64> = initial.iter().map(|s| predictor.predict(&s.features())).collect();
            let eval_data = eval_dataset(&cfg, seed)?;
            let cal = estimate_cal_error_detailed(
                &predictor,
                &eval_data,
                &ctx.nuisances,
                ctx.policy.as_ref(),
                gamma,
                cfg.eval.b_eval,
            )?;
            let report = EvalReport {
                cal_error: cal.cal_error,
                scaled_rmse: scaled_rmse(&pred, &truth, gamma)?,
                per_iteration_diffs: Vec::new(),
                seeds: vec![seed],
                metadata: serde_json::json!({
                    "cal_error_se": cal.standard_error,
                    "cal_error_cells": cal.cells,
                    "n_initial_states": initial.len(),
                    "n_eval_transitions": eval_data.len(),
                }),
            };
            write_json(&out, &report)?;
            println!("scaled_rmse {:.6}  cal_error {:.6} (se {:.6})", report.scaled_rmse, report.cal_error, cal.standard_error);
        }
        Command::Experiment { common, out } => {
            let cfg = common.load()?;
            let result = run_experiment(&cfg, common.unsafe_no_split)?;
            for f in &result.failures {
                eprintln!("seed {} failed: {}", f.seed, f.error);
            }
            if let Some(e) = all_failed(&result) {
                bail!(e);
            }
            write_atomic(&out, to_csv(&result.rows).as_bytes())?;
            print!("{}", summary_table(&result.rows));
        }
        Command::Oracle { suite, out } => {
            let report = run_suite(suite.into());
            if let Some(path) = out {
                write_json(&path, &report)?;
            }
            println!(
                "{}: {}/{} passed, {} skipped",
                report.suite.name(),
                report.passed,
                report.instances,
                report.skipped
            );
            for f in &report.failures {
                println!("  FAIL {f}");
            }
            if !report.ok() {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
