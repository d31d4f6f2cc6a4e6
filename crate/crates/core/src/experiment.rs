//! Seeded multi-run harness on the CRM environment.
//!
//! Each seed: simulate, split by customer, fit nuisances and base models on
//! the training fold, calibrate on the calibration fold, score against
//! Monte Carlo values at fresh initial states and compute calibration error
//! on a freshly simulated evaluation dataset.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bellman::{fit_base_estimator, iterated_calibration, BaseConfig, CalibrationConfig, CalibratorClass, ValuePredictor};
use crate::config::{ExperimentConfig, TargetChoice};
use crate::crm::{monte_carlo_value, simulate_dataset, BehaviorPolicy, CrmEnv, CrmState, TargetPolicy, Truncation};
use crate::error::{Error, Result};
use crate::eval::{estimate_cal_error, scaled_rmse};
use crate::mdp::{Policy, TransitionDataset};
use crate::nuisance::{fit_nuisances, split_by_episode, CalibrationFold, NuisanceModels, TrainFold};
use crate::regress::{RegressorConfig, RegressorKind};
use crate::rng;

pub const CSV_HEADER: &str = "n,model,method,seed,scaled_rmse,cal_error";

/// Stage tags for [`rng::derive_seed`].
const STAGE_DATA: u64 = 1;
const STAGE_SPLIT: u64 = 2;
const STAGE_INITIAL: u64 = 3;
const STAGE_ROLLOUT: u64 = 4;
const STAGE_EVAL: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Raw,
    Iso,
    Quantile,
    Hybrid,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Raw, Method::Iso, Method::Quantile, Method::Hybrid];

    pub fn name(self) -> &'static str {
        match self {
            Method::Raw => "raw",
            Method::Iso => "iso",
            Method::Quantile => "quantile",
            Method::Hybrid => "hybrid",
        }
    }

    fn class(self) -> Option<CalibratorClass> {
        match self {
            Method::Raw => None,
            Method::Iso => Some(CalibratorClass::Isotonic),
            Method::Quantile => Some(CalibratorClass::HistogramEqualMass),
            Method::Hybrid => Some(CalibratorClass::Hybrid),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub n: usize,
    pub model: String,
    pub method: String,
    pub seed: u64,
    pub scaled_rmse: f64,
    pub cal_error: f64,
}

impl ResultRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.n, self.model, self.method, self.seed, self.scaled_rmse, self.cal_error
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<SeedFailure>,
}

/// One base model of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub label: String,
    pub fit: BaseConfig,
}

fn family_name(kind: RegressorKind) -> &'static str {
    match kind {
        RegressorKind::LinearRidge => "linear",
        RegressorKind::BoostedStumps => "boosted",
    }
}

/// Expands the `base` section into labelled model specs.
pub fn model_grid(cfg: &ExperimentConfig) -> Vec<ModelSpec> {
    let mut out = Vec::new();
    for &kind in &cfg.base.models {
        let regressor = RegressorConfig {
            kind,
            ..cfg.base.fit.regressor
        };
        let snapshots: Vec<Option<usize>> = if cfg.base.snapshots.is_empty() {
            vec![cfg.base.fit.snapshot_at]
        } else {
            cfg.base.snapshots.iter().map(|&s| Some(s)).collect()
        };
        for snapshot in snapshots {
            let label = match snapshot {
                Some(s) if s < cfg.base.fit.iters => format!("{}@{}", family_name(kind), s),
                _ => family_name(kind).to_string(),
            };
            out.push(ModelSpec {
                label,
                fit: BaseConfig {
                    regressor,
                    snapshot_at: snapshot,
                    ..cfg.base.fit
                },
            });
        }
    }
    out
}

/// The evaluation policy selected by the config.
pub fn target_policy(cfg: &ExperimentConfig) -> Arc<dyn Policy> {
    match cfg.policy {
        TargetChoice::Aggressive => Arc::new(TargetPolicy::new(&cfg.crm)),
        TargetChoice::Behavior => Arc::new(BehaviorPolicy::new(&cfg.crm)),
    }
}

/// Shared per-seed inputs, exposed for tests and the CLI.
pub struct SeedContext {
    pub seed: u64,
    pub data: TransitionDataset,
    pub train: TrainFold,
    pub cal: CalibrationFold,
    pub nuisances: NuisanceModels,
    pub policy: Arc<dyn Policy>,
}

pub fn data_seed(seed: u64) -> u64 {
    rng::derive_seed(seed, STAGE_DATA)
}

pub fn prepare_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedContext> {
    let data = simulate_dataset(&cfg.crm, cfg.data.n_cust, cfg.data.horizon, data_seed(seed))?;
    prepare_with_data(cfg, seed, data)
}

/// Splits `data` and fits nuisances on the training fold.
pub fn prepare_with_data(cfg: &ExperimentConfig, seed: u64, data: TransitionDataset) -> Result<SeedContext> {
    let (train, cal) = split_by_episode(&data, cfg.split.train_fraction, rng::derive_seed(seed, STAGE_SPLIT))?;
    let (nuisances, _) = fit_nuisances(&train, &cfg.nuisance)?;
    Ok(SeedContext {
        seed,
        data,
        train,
        cal,
        nuisances,
        policy: target_policy(cfg),
    })
}

/// Fresh initial states and their Monte Carlo values under the target policy.
pub fn ground_truth(cfg: &ExperimentConfig, seed: u64, policy: &dyn Policy) -> Result<(Vec<CrmState>, Vec<f64>)> {
    let mut r = rng::stream(rng::derive_seed(seed, STAGE_INITIAL), 0);
    let states: Vec<CrmState> = (0..cfg.eval.n_initial_states)
        .map(|_| cfg.crm.sample_initial_state(&mut r))
        .collect();
    let reward_bound = reward_bound(&cfg.crm);
    let est = monte_carlo_value(
        &CrmEnv { params: cfg.crm.clone() },
        policy,
        &states,
        cfg.crm.discount,
        cfg.eval.n_rollouts,
        cfg.eval.horizon_eff,
        rng::derive_seed(seed, STAGE_ROLLOUT),
        Truncation {
            reward_bound,
            tol: cfg.eval.truncation_tol,
        },
    )?;
    Ok((states, est.values))
}

/// Loose per-step reward bound used only for the truncation check when
/// rollouts stop before absorption: a high quantile of value × uplift × noise.
fn reward_bound(params: &crate::crm::CrmParams) -> f64 {
    let uplift = params.uplift_per_action.iter().cloned().fold(0.0, f64::max);
    (params.init_value_log_mean + 6.0 * params.init_value_log_sigma + 6.0 * params.revenue_lognormal_sigma).exp() * uplift
}

/// Fresh dataset for the calibration-error estimate.
pub fn eval_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<TransitionDataset> {
    let n = cfg.eval.n_eval_cust.unwrap_or(cfg.data.n_cust);
    simulate_dataset(&cfg.crm, n, cfg.data.horizon, rng::derive_seed(seed, STAGE_EVAL))
}

/// Calibrates `base` with `method`; `Raw` returns it unchanged.
pub fn apply_method(
    method: Method,
    base: &ValuePredictor,
    ctx: &SeedContext,
    gamma: f64,
    calibration: &CalibrationConfig,
) -> Result<ValuePredictor> {
    match method.class() {
        None => Ok(base.clone()),
        Some(class) => {
            let cfg = CalibrationConfig {
                class,
                ..calibration.clone()
            };
            Ok(iterated_calibration(base, &ctx.cal, &ctx.nuisances, ctx.policy.as_ref(), gamma, &cfg)?.0)
        }
    }
}

/// All rows for one seed.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<ResultRow>> {
    let ctx = prepare_seed(cfg, seed)?;
    let gamma = cfg.crm.discount;
    let (initial, truth) = ground_truth(cfg, seed, ctx.policy.as_ref())?;
    let initial_features: Vec<Vec<f64>> = initial.iter().map(|s| s.features()).collect();
    let eval_data = eval_dataset(cfg, seed)?;
    let mut rows = Vec::new();
    for spec in model_grid(cfg) {
        let base = fit_base_estimator(&ctx.train, &ctx.nuisances, ctx.policy.as_ref(), gamma, &spec.fit)?;
        for method in Method::ALL {
            let predictor = apply_method(method, &base, &ctx, gamma, &cfg.calibration)?;
            let pred: Vec<f64> = initial_features.iter().map(|s| predictor.predict(s)).collect();
            let cal_error = estimate_cal_error(
                &predictor,
                &eval_data,
                &ctx.nuisances,
                ctx.policy.as_ref(),
                gamma,
                cfg.eval.b_eval,
            )?;
            rows.push(ResultRow {
                n: cfg.data.n_cust,
                model: spec.label.clone(),
                method: method.name().to_string(),
                seed,
                scaled_rmse: scaled_rmse(&pred, &truth, gamma)?,
                cal_error,
            });
        }
    }
    Ok(rows)
}

/// Runs every seed in parallel. A failing seed is recorded and skipped.
pub fn run_experiment(cfg: &ExperimentConfig, allow_no_split: bool) -> Result<ExperimentOutput> {
    cfg.validate(allow_no_split)?;
    let results: Vec<(u64, Result<Vec<ResultRow>>)> =
        cfg.data.seeds.par_iter().map(|&seed| (seed, run_seed(cfg, seed))).collect();
    let mut out = ExperimentOutput::default();
    for (seed, result) in results {
        match result {
            Ok(rows) => out.rows.extend(rows),
            Err(e) => out.failures.push(SeedFailure {
                seed,
                error: e.full_message(),
            }),
        }
    }
    Ok(out)
}

pub fn to_csv(rows: &[ResultRow]) -> String {
    let mut text = String::from(CSV_HEADER);
    text.push('\n');
    for row in rows {
        text.push_str(&row.csv_line());
        text.push('\n');
    }
    text
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Mean ± sd per `(n, model)` row and method column.
pub fn summary_table(rows: &[ResultRow]) -> String {
    let mut keys: Vec<(usize, String)> = Vec::new();
    for r in rows {
        let key = (r.n, r.model.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let mut text = String::new();
    for (metric, pick) in [
        ("scaled_rmse", (|r: &ResultRow| r.scaled_rmse) as fn(&ResultRow) -> f64),
        ("cal_error", |r: &ResultRow| r.cal_error),
    ] {
        let _ = write!(text, "{metric}\n{:>8} {:<12}", "n", "model");
        for m in Method::ALL {
            let _ = write!(text, " {:>18}", m.name());
        }
        text.push('\n');
        for (n, model) in &keys {
            let _ = write!(text, "{n:>8} {model:<12}");
            for m in Method::ALL {
                let values: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.n == *n && &r.model == model && r.method == m.name())
                    .map(pick)
                    .collect();
                if values.is_empty() {
                    let _ = write!(text, " {:>18}", "-");
                } else {
                    let (mean, sd) = mean_sd(&values);
                    let _ = write!(text, " {:>18}", format!("{mean:.3}±{sd:.3}"));
                }
            }
            text.push('\n');
        }
        text.push('\n');
    }
    text
}

/// Error for a run in which every seed failed.
pub fn all_failed(out: &ExperimentOutput) -> Option<Error> {
    (out.rows.is_empty() && !out.failures.is_empty()).then(|| {
        Error::InvalidConfig(format!(
            "all seeds failed; first: seed {} ({})",
            out.failures[0].seed, out.failures[0].error
        ))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.data.n_cust = 300;
        cfg.data.horizon = 12;
        cfg.data.seeds = vec![1, 2];
        cfg.base.fit.iters = 5;
        cfg.eval.n_initial_states = 20;
        cfg.eval.n_rollouts = 10;
        cfg
    }

    #[test]
    fn row_count_and_schema() {
        let out = run_experiment(&tiny(), false).unwrap();
        assert!(out.failures.is_empty(), "{:?}", out.failures);
        assert_eq!(out.rows.len(), 2 * 4);
        let csv = to_csv(&out.rows);
        assert!(csv.starts_with("n,model,method,seed,scaled_rmse,cal_error\n"));
        assert_eq!(csv.lines().count(), 9);
        assert!(out.rows.iter().all(|r| r.scaled_rmse >= 0.0 && r.cal_error >= 0.0));
    }

    #[test]
    fn failing_seed_is_isolated() {
        let mut cfg = tiny();
        // A single customer cannot be split into two folds.
        cfg.data.n_cust = 1;
        let out = run_experiment(&cfg, false).unwrap();
        assert!(out.rows.is_empty());
        assert_eq!(out.failures.len(), 2);
        assert!(all_failed(&out).is_some());
    }

    #[test]
    fn snapshot_grid_labels() {
        let mut cfg = tiny();
        cfg.base.fit.iters = 50;
        cfg.base.snapshots = vec![2, 5, 10, 25];
        let labels: Vec<String> = model_grid(&cfg).into_iter().map(|m| m.label).collect();
        assert_eq!(labels, vec!["linear@2", "linear@5", "linear@10", "linear@25"]);
    }

    #[test]
    fn runs_are_deterministic() {
        let mut cfg = tiny();
        cfg.data.seeds = vec![3];
        let a = run_experiment(&cfg, false).unwrap();
        let b = run_experiment(&cfg, false).unwrap();
        assert_eq!(to_csv(&a.rows), to_csv(&b.rows));
    }
}
