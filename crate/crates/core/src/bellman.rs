//! Bellman targets, iterated Bellman calibration, the hybrid iso–hist
//! procedure and the fitted-value-iteration base estimator.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calib::{
    default_bin_count, fit_histogram, fit_isotonic_pava, flat_regions, make_partition, merge_small_cells, HistogramPartition,
    PartitionScheme, PiecewiseConstant,
};
use crate::error::{Error, Result};
use crate::mdp::{state_index, Policy, Transition, TransitionDataset};
use crate::nuisance::{ActionValueFn, CalibrationFold, NuisanceModels, TrainFold, ValueFn};
use crate::regress::{Features, FittedRegressor, PreparedRegressor, RegressorConfig};

/// The uncalibrated part of a value predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseModel {
    Constant { value: f64 },
    /// Regressor output clamped to `[−bound, bound]` when `bound` is set.
    Regressor {
        model: FittedRegressor,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bound: Option<f64>,
    },
    /// Per-state values read through one-hot features.
    Tabular { values: Vec<f64> },
}

impl BaseModel {
    pub fn predict(&self, state: &[f64]) -> f64 {
        match self {
            BaseModel::Constant { value } => *value,
            BaseModel::Regressor { model, bound } => {
                let y = model.predict(state);
                match bound {
                    Some(b) => y.clamp(-b, *b),
                    None => y,
                }
            }
            BaseModel::Tabular { values } => values[state_index(state)],
        }
    }
}

/// `v̂` or `θ ∘ v̂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValuePredictor {
    #[serde(rename = "base_model")]
    pub base: BaseModel,
    pub calibrator: Option<PiecewiseConstant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<CalibrationConfig>,
}

impl ValuePredictor {
    pub fn new(base: BaseModel) -> Self {
        Self {
            base,
            calibrator: None,
            config: None,
        }
    }

    pub fn constant(value: f64) -> Self {
        Self::new(BaseModel::Constant { value })
    }

    pub fn tabular(values: Vec<f64>) -> Self {
        Self::new(BaseModel::Tabular { values })
    }

    pub fn predict(&self, state: &[f64]) -> f64 {
        let base = self.base.predict(state);
        match &self.calibrator {
            Some(theta) => theta.evaluate(base),
            None => base,
        }
    }

    /// `θ ∘ self`. An existing calibrator is composed with `θ` by mapping
    /// its levels, so prediction stays a single step-function lookup.
    pub fn with_calibrator(&self, theta: PiecewiseConstant) -> Self {
        let calibrator = match &self.calibrator {
            None => theta,
            Some(inner) => PiecewiseConstant::new(
                inner.breakpoints().to_vec(),
                inner.levels().iter().map(|&l| theta.evaluate(l)).collect(),
            )
            .expect("mapped levels of a valid step function"),
        };
        Self {
            base: self.base.clone(),
            calibrator: Some(calibrator),
            config: None,
        }
    }
}

impl ValueFn for ValuePredictor {
    fn value(&self, state: &[f64]) -> f64 {
        self.predict(state)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibratorClass {
    HistogramEqualMass,
    HistogramEqualWidth,
    Isotonic,
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    #[default]
    DoublyRobust,
    ImportanceWeighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    /// `K`; defaults to `max(10, ⌈ln n⌉)`.
    pub iterations: Option<usize>,
    pub class: CalibratorClass,
    /// `B` for histogram classes; defaults to `⌈n^{1/3}⌉`.
    pub bins: Option<usize>,
    pub target_kind: TargetKind,
    pub flat_tol: f64,
    /// Minimum calibration points per hybrid cell; smaller flat regions are
    /// merged into a neighbor. See [`CalibrationConfig::min_cell_count_for`].
    pub min_cell_count: Option<usize>,
    /// Minimum calibration points per isotonic block; `Some(1)` is plain
    /// PAVA. Defaults to `⌈√n⌉`.
    pub isotonic_min_block: Option<usize>,
    /// Stop once the RMS successive difference falls below this value.
    pub early_stop: Option<f64>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            iterations: None,
            class: CalibratorClass::Isotonic,
            bins: None,
            target_kind: TargetKind::DoublyRobust,
            flat_tol: 0.0,
            min_cell_count: None,
            isotonic_min_block: None,
            early_stop: None,
        }
    }
}

impl CalibrationConfig {
    pub fn with_class(class: CalibratorClass) -> Self {
        Self {
            class,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == Some(0) {
            return Err(Error::InvalidConfig("calibration.iterations must be at least 1".into()));
        }
        if self.bins == Some(0) {
            return Err(Error::InvalidConfig("calibration.bins must be at least 1".into()));
        }
        if !(self.flat_tol >= 0.0) {
            return Err(Error::InvalidConfig("calibration.flat_tol must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn iterations_for(&self, n: usize) -> usize {
        self.iterations.unwrap_or_else(|| default_iterations(n))
    }

    pub fn bins_for(&self, n: usize) -> usize {
        self.bins.unwrap_or_else(|| default_bin_count(n))
    }

    /// Tiny isotonic blocks at the ends of the range can self-reinforce
    /// through large importance weights, so blocks are pooled up to `⌈√n⌉`.
    pub fn isotonic_min_block_for(&self, n: usize) -> usize {
        self.isotonic_min_block.unwrap_or_else(|| (n as f64).sqrt().ceil() as usize)
    }

    /// Defaults to `⌈n / B⌉`, so the hybrid partition has at most `B` cells.
    pub fn min_cell_count_for(&self, n: usize) -> usize {
        self.min_cell_count.unwrap_or_else(|| n.div_ceil(self.bins_for(n).max(1)))
    }
}

/// `max(10, ⌈ln n⌉)`.
pub fn default_iterations(n: usize) -> usize {
    ((n.max(1) as f64).ln().ceil() as usize).max(10)
}

/// Per-transition pieces of the target that do not depend on `v`.
struct TargetCache {
    pi_probs: Vec<Vec<f64>>,
    weights: Vec<f64>,
    /// `(π r̂)(S) + ŵ·(R − r̂(S, A))`, or `ŵ·R` for importance-weighted targets.
    fixed: Vec<f64>,
    importance_weighted: bool,
}

impl TargetCache {
    fn new(data: &[Transition], nuis: &NuisanceModels, pi: &dyn Policy, kind: TargetKind) -> Result<Self> {
        let importance_weighted = kind == TargetKind::ImportanceWeighted || nuis.is_iw_only();
        let rows: Vec<(Vec<f64>, f64, f64)> = data
            .par_iter()
            .map(|tr| {
                let w = nuis.weight(pi, tr)?;
                let probs = pi.action_probs(&tr.state);
                let fixed = if importance_weighted {
                    w * tr.reward
                } else {
                    let model: f64 = probs
                        .iter()
                        .enumerate()
                        .map(|(a, p)| if *p == 0.0 { 0.0 } else { p * nuis.reward_at(&tr.state, a) })
                        .sum();
                    model + w * (tr.reward - nuis.reward_at(&tr.state, tr.action))
                };
                Ok((probs, w, fixed))
            })
            .collect::<Result<_>>()?;
        let mut out = Self {
            pi_probs: Vec::with_capacity(rows.len()),
            weights: Vec::with_capacity(rows.len()),
            fixed: Vec::with_capacity(rows.len()),
            importance_weighted,
        };
        for (p, w, f) in rows {
            out.pi_probs.push(p);
            out.weights.push(w);
            out.fixed.push(f);
        }
        Ok(out)
    }

    /// Targets given `v(S′)` per transition and, for DR targets, `𝑃̂v`.
    fn targets(
        &self,
        data: &[Transition],
        v_next: &[f64],
        next_model: Option<&dyn ActionValueFn>,
        gamma: f64,
    ) -> Result<Vec<f64>> {
        let out: Vec<f64> = (0..data.len())
            .into_par_iter()
            .map(|i| {
                let tr = &data[i];
                let w = self.weights[i];
                let observed = if tr.done { 0.0 } else { v_next[i] };
                let mut dynamic = w * observed;
                if let (false, Some(pv)) = (self.importance_weighted, next_model) {
                    let model: f64 = self.pi_probs[i]
                        .iter()
                        .enumerate()
                        .map(|(a, p)| if *p == 0.0 { 0.0 } else { p * pv.eval(&tr.state, a) })
                        .sum();
                    dynamic += model - w * pv.eval(&tr.state, tr.action);
                }
                self.fixed[i] + gamma * dynamic
            })
            .collect();
        if let Some(index) = out.iter().position(|t| !t.is_finite()) {
            return Err(Error::NonfiniteTarget { index });
        }
        Ok(out)
    }
}

/// Doubly robust targets for every transition of `data` with value `v`:
/// `(π q̂_v)(S) + ŵ(A|S)·[R + γ v(S′) − q̂_v(S, A)]`, `q̂_v = r̂ + γ 𝑃̂v`.
/// Terminal transitions drop the `v(S′)` term; importance-weighted targets
/// are `ŵ(A|S)·(R + γ v(S′))`.
pub fn dr_targets(
    data: &[Transition],
    v: &dyn ValueFn,
    nuis: &NuisanceModels,
    pi: &dyn Policy,
    gamma: f64,
    kind: TargetKind,
) -> Result<Vec<f64>> {
    let cache = TargetCache::new(data, nuis, pi, kind)?;
    let v_next: Vec<f64> = data.par_iter().map(|t| v.value(&t.next_state)).collect();
    let pv = if cache.importance_weighted {
        None
    } else {
        nuis.next_value_for(v)?
    };
    cache.targets(data, &v_next, pv.as_deref(), gamma)
}

/// Doubly robust target of a single transition.
pub fn dr_target(
    tr: &Transition,
    v: &dyn ValueFn,
    nuis: &NuisanceModels,
    pi: &dyn Policy,
    gamma: f64,
) -> Result<f64> {
    Ok(dr_targets(std::slice::from_ref(tr), v, nuis, pi, gamma, TargetKind::DoublyRobust)?[0])
}

/// One Bellman-calibration iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationDiagnostic {
    pub iteration: usize,
    /// RMS of `v^{(k)} − v^{(k−1)}` over the calibration states.
    pub rms_change: f64,
    pub num_cells: usize,
}

/// Result of running the iteration in a chosen coordinate.
#[derive(Debug, Clone)]
pub struct CalibrationRun {
    /// Final `θ`, a step function of the regression coordinate.
    pub theta: PiecewiseConstant,
    pub diagnostics: Vec<IterationDiagnostic>,
    /// Targets of the last iteration, `χ^{(K−1)}`.
    pub final_targets: Vec<f64>,
    /// Regression coordinate at the calibration states.
    pub coordinates: Vec<f64>,
    /// Fixed partition used by histogram classes.
    pub partition: Option<HistogramPartition>,
}

impl CalibrationRun {
    pub fn calibrated_values(&self) -> Vec<f64> {
        self.coordinates.iter().map(|&x| self.theta.evaluate(x)).collect()
    }

    pub fn successive_ratios(&self) -> Vec<f64> {
        self.diagnostics
            .windows(2)
            .map(|w| w[1].rms_change / w[0].rms_change)
            .collect()
    }
}

enum Fitter {
    Histogram(HistogramPartition),
    /// PAVA, then blocks holding fewer than `min_block` points are pooled
    /// into a neighbor. Pooling adjacent blocks keeps the fit monotone.
    Isotonic { min_block: usize },
}

impl Fitter {
    fn fit(&self, xs: &[f64], ys: &[f64]) -> Result<PiecewiseConstant> {
        match self {
            Fitter::Histogram(p) => fit_histogram(xs, ys, p),
            Fitter::Isotonic { min_block } => {
                let theta = fit_isotonic_pava(xs, ys, None)?;
                if *min_block <= 1 {
                    return Ok(theta);
                }
                let blocks = flat_regions(&theta, xs, 0.0);
                fit_histogram(xs, ys, &merge_small_cells(&blocks, xs, *min_block))
            }
        }
    }
}

struct Problem<'a> {
    data: &'a [Transition],
    coord: &'a dyn ValueFn,
    x: Vec<f64>,
    x_next: Vec<f64>,
    cache: TargetCache,
    nuis: &'a NuisanceModels,
    gamma: f64,
}

impl<'a> Problem<'a> {
    fn new(
        cal: &'a TransitionDataset,
        coord: &'a dyn ValueFn,
        nuis: &'a NuisanceModels,
        pi: &dyn Policy,
        gamma: f64,
        cfg: &CalibrationConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidConfig(format!("discount {gamma} outside [0, 1)")));
        }
        let data = cal.transitions();
        if data.is_empty() {
            return Err(Error::Empty("calibration fold"));
        }
        let x: Vec<f64> = data.par_iter().map(|t| coord.value(&t.state)).collect();
        let x_next: Vec<f64> = data.par_iter().map(|t| coord.value(&t.next_state)).collect();
        if x.iter().chain(&x_next).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("base predictions"));
        }
        Ok(Self {
            data,
            coord,
            x,
            x_next,
            cache: TargetCache::new(data, nuis, pi, cfg.target_kind)?,
            nuis,
            gamma,
        })
    }

    /// Targets for `v = initial` (iteration 0).
    fn initial_targets(&self, initial: &dyn ValueFn) -> Result<Vec<f64>> {
        let v_next: Vec<f64> = self.data.par_iter().map(|t| initial.value(&t.next_state)).collect();
        let pv = self.next_model(initial)?;
        self.cache.targets(self.data, &v_next, pv.as_deref(), self.gamma)
    }

    /// Targets for `v = θ ∘ coord`.
    fn targets_for(&self, theta: &PiecewiseConstant) -> Result<Vec<f64>> {
        let v_next: Vec<f64> = self.x_next.iter().map(|&x| theta.evaluate(x)).collect();
        let composed = |s: &[f64]| theta.evaluate(self.coord.value(s));
        let pv = self.next_model(&composed)?;
        self.cache.targets(self.data, &v_next, pv.as_deref(), self.gamma)
    }

    fn next_model(&self, v: &dyn ValueFn) -> Result<Option<Box<dyn ActionValueFn>>> {
        if self.cache.importance_weighted {
            Ok(None)
        } else {
            self.nuis.next_value_for(v)
        }
    }

    fn iterate(
        &self,
        initial: &dyn ValueFn,
        fitter: &Fitter,
        iterations: usize,
        early_stop: Option<f64>,
    ) -> Result<(PiecewiseConstant, Vec<IterationDiagnostic>, Vec<f64>)> {
        let n = self.x.len() as f64;
        let mut current: Vec<f64> = self.data.iter().map(|t| initial.value(&t.state)).collect();
        let mut targets = self.initial_targets(initial)?;
        let mut diagnostics = Vec::with_capacity(iterations);
        let mut theta = fitter.fit(&self.x, &targets)?;
        for k in 1..=iterations {
            if k > 1 {
                targets = self.targets_for(&theta)?;
                theta = fitter.fit(&self.x, &targets)?;
            }
            let next: Vec<f64> = self.x.iter().map(|&x| theta.evaluate(x)).collect();
            let rms_change = (next.iter().zip(&current).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n).sqrt();
            diagnostics.push(IterationDiagnostic {
                iteration: k,
                rms_change,
                num_cells: theta.num_cells(),
            });
            current = next;
            if early_stop.is_some_and(|tol| rms_change < tol) {
                break;
            }
        }
        Ok((theta, diagnostics, targets))
    }
}

fn class_partition(x: &[f64], cfg: &CalibrationConfig) -> Result<Option<HistogramPartition>> {
    let scheme = match cfg.class {
        CalibratorClass::HistogramEqualMass => PartitionScheme::EqualMass,
        CalibratorClass::HistogramEqualWidth => PartitionScheme::EqualWidth,
        _ => return Ok(None),
    };
    make_partition(x, cfg.bins_for(x.len()), scheme).map(Some)
}

/// Runs the iteration with regression coordinate `coord(S)` and starting
/// value `initial`.
///
/// With `coord = initial = v̂` this is iterated Bellman calibration. The
/// coordinate only enters through its order, so replacing it by a strictly
/// increasing transform of itself leaves every calibrated value unchanged.
pub fn calibrate_coordinates(
    coord: &dyn ValueFn,
    initial: &dyn ValueFn,
    cal: &CalibrationFold,
    nuis: &NuisanceModels,
    pi: &dyn Policy,
    gamma: f64,
    cfg: &CalibrationConfig,
) -> Result<CalibrationRun> {
    let problem = Problem::new(cal.data(), coord, nuis, pi, gamma, cfg)?;
    let iterations = cfg.iterations_for(problem.x.len());
    let (fitter, partition) = match cfg.class {
        CalibratorClass::Isotonic => (
            Fitter::Isotonic {
                min_block: cfg.isotonic_min_block_for(problem.x.len()),
            },
            None,
        ),
        CalibratorClass::Hybrid => {
            let stage1 = fit_isotonic_pava(&problem.x, &problem.initial_targets(initial)?, None)?;
            let p = flat_regions(&stage1, &problem.x, cfg.flat_tol);
            let p = merge_small_cells(&p, &problem.x, cfg.min_cell_count_for(problem.x.len()));
            (Fitter::Histogram(p.clone()), Some(p))
        }
        _ => {
            let p = class_partition(&problem.x, cfg)?.expect("histogram class");
            (Fitter::Histogram(p.clone()), Some(p))
        }
    };
    let (theta, diagnostics, final_targets) = problem.iterate(initial, &fitter, iterations, cfg.early_stop)?;
    Ok(CalibrationRun {
        theta,
        diagnostics,
        final_targets,
        coordinates: problem.x,
        partition,
    })
}

/// Calibrates with a caller-supplied fixed partition of the `v̂` axis.
pub fn calibrate_with_partition(
    v_hat: &ValuePredictor,
    partition: &HistogramPartition,
    cal: &CalibrationFold,
    nuis: &NuisanceModels,
    pi: &dyn Policy,
    gamma: f64,
    cfg: &CalibrationConfig,
) -> Result<(ValuePredictor, CalibrationRun)> {
    let problem = Problem::new(cal.data(), v_hat, nuis, pi, gamma, cfg)?;
    let iterations = cfg.iterations_for(problem.x.len());
    let fitter = Fitter::Histogram(partition.clone());
    let (theta, diagnostics, final_targets) = problem.iterate(v_hat, &fitter, iterations, cfg.early_stop)?;
    let run = CalibrationRun {
        theta,
        diagnostics,
        final_targets,
        coordinates: problem.x,
        partition: Some(partition.clone()),
    };
    Ok((finish(v_hat, &run, cfg), run))
}

fn finish(v_hat: &ValuePredictor, run: &CalibrationRun, cfg: &CalibrationConfig) -> ValuePredictor {
    let mut out = v_hat.with_calibrator(run.theta.clone());
    out.config = Some(cfg.clone());
    out
}

/// Iterated Bellman calibration of `v_hat` on the calibration fold.
pub fn iterated_calibration(
    v_hat: &ValuePredictor,
    cal: &CalibrationFold,
    nuis: &NuisanceModels,
    pi: &dyn Policy,
    gamma: f64,
    cfg: &CalibrationConfig,
) -> Result<(ValuePredictor, CalibrationRun)> {
    let run = calibrate_coordinates(v_hat, v_hat, cal, nuis, pi, gamma, cfg)?;
    Ok((finish(v_hat, &run, cfg), run))
}

/// Iso–hist calibration: one isotonic pass picks the bins from its flat
/// regions, then histogram calibration iterates on that fixed partition.
pub fn hybrid_iso_hist(
    v_hat: &ValuePredictor,
    cal: &CalibrationFold,
    nuis: &NuisanceModels,
    pi: &dyn Policy,
    gamma: f64,
    cfg: &CalibrationConfig,
) -> Result<(ValuePredictor, CalibrationRun)> {
    let cfg = CalibrationConfig {
        class: CalibratorClass::Hybrid,
        ..cfg.clone()
    };
    iterated_calibration(v_hat, cal, nuis, pi, gamma, &cfg)
}

/// JSON section `base`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaseConfig {
    pub regressor: RegressorConfig,
    pub iters: usize,
    pub snapshot_at: Option<usize>,
    pub target_kind: TargetKind,
}

impl Default for BaseConfig {
    fn default() -> Self {
        Self {
            regressor: RegressorConfig::default(),
            iters: 50,
            snapshot_at: None,
            target_kind: TargetKind::DoublyRobust,
        }
    }
}

/// Fitted value iteration on the training fold: `v⁰ = 0`, then
/// `v^{k+1}` regresses the targets built from `v^k` on state features.
/// Stops after `snapshot_at` rounds when that is below `iters`.
pub fn fit_base_estimator(
    train: &TrainFold,
    nuis: &NuisanceModels,
    pi: &dyn Policy,
    gamma: f64,
    cfg: &BaseConfig,
) -> Result<ValuePredictor> {
    let data = train.data();
    if data.is_empty() {
        return Err(Error::Empty("training fold"));
    }
    let rounds = cfg.snapshot_at.map_or(cfg.iters, |s| s.min(cfg.iters));
    let x = Features::from_rows(data.iter().map(|t| t.state.as_slice()), data.state_dim())?;
    let fitter = PreparedRegressor::new(&x, &cfg.regressor)?;
    let cache = TargetCache::new(data.transitions(), nuis, pi, cfg.target_kind)?;
    // Any value function of these rewards lies within max|R| / (1 − γ).
    let max_reward = data.iter().map(|t| t.reward.abs()).fold(0.0, f64::max);
    let bound = max_reward / (1.0 - gamma);
    let mut v = ValuePredictor::constant(0.0);
    for _ in 0..rounds {
        let v_next: Vec<f64> = data.transitions().par_iter().map(|t| v.predict(&t.next_state)).collect();
        let pv = if cache.importance_weighted {
            None
        } else {
            nuis.next_value_for(&v)?
        };
        let targets = cache.targets(data.transitions(), &v_next, pv.as_deref(), gamma)?;
        v = ValuePredictor::new(BaseModel::Regressor {
            model: fitter.fit(&targets)?,
            bound: Some(bound),
        });
    }
    Ok(v)
}
