//! Metrics and exact tabular references: plug-in Bellman calibration
//! error, scaled RMSE, the coarsened fixed point and the
//! calibration–refinement decomposition.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bellman::{dr_targets, IterationDiagnostic, TargetKind};
use crate::calib::{default_bin_count, make_partition, HistogramPartition, PartitionScheme};
use crate::error::{Error, Result};
use crate::mdp::{
    stationary_distribution, tabular_value_solve, weighted_l2, Policy, TabularMdp, TabularPolicy, TransitionDataset,
    STATIONARY_MAX_ITER, STATIONARY_TOL,
};
use crate::nuisance::{NuisanceModels, ValueFn};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cal_error: f64,
    pub scaled_rmse: f64,
    pub per_iteration_diffs: Vec<f64>,
    pub seeds: Vec<u64>,
    pub metadata: serde_json::Value,
}

impl EvalReport {
    pub fn diffs_from(diagnostics: &[IterationDiagnostic]) -> Vec<f64> {
        diagnostics.iter().map(|d| d.rms_change).collect()
    }
}

/// `(1−γ)·sqrt(mean((pred − truth)²))`.
pub fn scaled_rmse(pred: &[f64], truth: &[f64], gamma: f64) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::Empty("scaled_rmse input"));
    }
    let mse = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64;
    Ok((1.0 - gamma) * mse.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalErrorEstimate {
    pub cal_error: f64,
    /// `sqrt(Σ_b var_b / n)`, the scale of the error from noisy cell means.
    pub standard_error: f64,
    pub cells: usize,
}

/// Plug-in Bellman calibration error with cell-level detail.
///
/// Bins `v(S_i)` into `b_eval` equal-mass cells (default `⌈n^{1/3}⌉`),
/// averages the Bellman targets built from `v` within each cell and returns
/// the RMS of `v(S_i)` minus its cell mean.
pub fn estimate_cal_error_detailed(
    v: &dyn ValueFn,
    eval_data: &TransitionDataset,
    nuis: &NuisanceModels,
    pi: &dyn Policy,
    gamma: f64,
    b_eval: Option<usize>,
) -> Result<CalErrorEstimate> {
    let data = eval_data.transitions();
    if data.is_empty() {
        return Err(Error::Empty("evaluation data"));
    }
    let preds: Vec<f64> = data.iter().map(|t| v.value(&t.state)).collect();
    let targets = dr_targets(data, v, nuis, pi, gamma, TargetKind::DoublyRobust)?;
    let bins = b_eval.unwrap_or_else(|| default_bin_count(data.len()));
    let partition = make_partition(&preds, bins, PartitionScheme::EqualMass)?;
    let cells = partition.num_cells();
    let mut sum = vec![0.0; cells];
    let mut sum_sq = vec![0.0; cells];
    let mut count = vec![0usize; cells];
    for (&p, &t) in preds.iter().zip(&targets) {
        let c = partition.cell_of(p);
        sum[c] += t;
        sum_sq[c] += t * t;
        count[c] += 1;
    }
    let n = data.len() as f64;
    let mut sq = 0.0;
    for &p in &preds {
        let c = partition.cell_of(p);
        sq += (p - sum[c] / count[c] as f64).powi(2);
    }
    let mut var_total = 0.0;
    for c in 0..cells {
        if count[c] > 1 {
            let m = count[c] as f64;
            let mean = sum[c] / m;
            var_total += ((sum_sq[c] - m * mean * mean) / (m - 1.0)).max(0.0);
        }
    }
    Ok(CalErrorEstimate {
        cal_error: (sq / n).sqrt(),
        standard_error: (var_total / n).sqrt(),
        cells,
    })
}

pub fn estimate_cal_error(
    v: &dyn ValueFn,
    eval_data: &TransitionDataset,
    nuis: &NuisanceModels,
    pi: &dyn Policy,
    gamma: f64,
    b_eval: Option<usize>,
) -> Result<f64> {
    Ok(estimate_cal_error_detailed(v, eval_data, nuis, pi, gamma, b_eval)?.cal_error)
}

/// Partition with one cell per distinct value (no binning beyond `v̂` itself).
pub fn level_set_partition(values: &[f64]) -> Result<HistogramPartition> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    sorted.pop();
    HistogramPartition::explicit(sorted)
}

/// Cell index of each state under `partition`, relabelled to the
/// non-empty cells `0..m`.
fn state_cells(values: &[f64], partition: &HistogramPartition) -> (Vec<usize>, usize) {
    let raw: Vec<usize> = values.iter().map(|&v| partition.cell_of(v)).collect();
    let mut used: Vec<usize> = raw.clone();
    used.sort_unstable();
    used.dedup();
    let cells = raw.iter().map(|c| used.binary_search(c).expect("present")).collect();
    (cells, used.len())
}

/// Weighted projection onto functions of the cells: each state gets the
/// `weights`-average of `f` over its cell (plain average for zero-mass cells).
struct Projection {
    cells: Vec<usize>,
    num_cells: usize,
    weights: Vec<f64>,
    mass: Vec<f64>,
    size: Vec<usize>,
}

impl Projection {
    fn new(values: &[f64], partition: &HistogramPartition, weights: &[f64]) -> Result<Self> {
        if values.len() != weights.len() {
            return Err(Error::LengthMismatch {
                left: values.len(),
                right: weights.len(),
            });
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidConfig("state weights must be finite and nonnegative".into()));
        }
        let (cells, num_cells) = state_cells(values, partition);
        let mut mass = vec![0.0; num_cells];
        let mut size = vec![0usize; num_cells];
        for (s, &c) in cells.iter().enumerate() {
            mass[c] += weights[s];
            size[c] += 1;
        }
        Ok(Self {
            cells,
            num_cells,
            weights: weights.to_vec(),
            mass,
            size,
        })
    }

    /// Weight of state `s` within its cell.
    fn share(&self, s: usize) -> f64 {
        let c = self.cells[s];
        if self.mass[c] > 0.0 {
            self.weights[s] / self.mass[c]
        } else {
            1.0 / self.size[c] as f64
        }
    }

    fn cell_means(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_cells];
        for (s, &c) in self.cells.iter().enumerate() {
            out[c] += self.share(s) * f[s];
        }
        out
    }

    fn project(&self, f: &[f64]) -> Vec<f64> {
        let means = self.cell_means(f);
        self.cells.iter().map(|&c| means[c]).collect()
    }
}

/// `Π 𝒯_π v` with the weighted cell projection defined by `v̂`'s values.
pub fn coarsened_bellman_apply(
    mdp: &TabularMdp,
    pi: &TabularPolicy,
    v_hat_values: &[f64],
    partition: &HistogramPartition,
    weights: &[f64],
    v: &[f64],
) -> Result<Vec<f64>> {
    let projection = Projection::new(v_hat_values, partition, weights)?;
    let tv = crate::mdp::bellman_apply(mdp, pi, v)?;
    Ok(projection.project(&tv))
}

/// Exact fixed point of `v = Π_{v̂,B} 𝒯_π v`, returned per state.
///
/// States are grouped by the cell of `v̂(s)`; `weights` is the state
/// weighting of the projection (the behavior state distribution).
pub fn coarsened_fixed_point_exact(
    mdp: &TabularMdp,
    pi: &TabularPolicy,
    v_hat_values: &[f64],
    partition: &HistogramPartition,
    weights: &[f64],
) -> Result<Vec<f64>> {
    let n = mdp.num_states();
    if v_hat_values.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: v_hat_values.len(),
        });
    }
    let projection = Projection::new(v_hat_values, partition, weights)?;
    let b = projection.num_cells;
    let kernel = mdp.policy_kernel(pi);
    let reward = mdp.policy_reward(pi);
    let mut m = DMatrix::<f64>::zeros(b, b);
    let mut rhs = DVector::<f64>::zeros(b);
    for s in 0..n {
        let c = projection.cells[s];
        let share = projection.share(s);
        rhs[c] += share * reward[s];
        for sn in 0..n {
            m[(c, projection.cells[sn])] += share * kernel[(s, sn)];
        }
    }
    let system = DMatrix::<f64>::identity(b, b) - m * mdp.discount();
    let levels = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SingularSystem(format!("{b}-cell coarsened system")))?;
    Ok(projection.cells.iter().map(|&c| levels[c]).collect())
}

/// State-level coarsened kernel `Π P_π`.
pub fn coarsened_kernel(
    mdp: &TabularMdp,
    pi: &TabularPolicy,
    v_hat_values: &[f64],
    partition: &HistogramPartition,
    weights: &[f64],
) -> Result<DMatrix<f64>> {
    let projection = Projection::new(v_hat_values, partition, weights)?;
    let kernel = mdp.policy_kernel(pi);
    let n = mdp.num_states();
    let mut cell_rows = DMatrix::<f64>::zeros(projection.num_cells, n);
    for s in 0..n {
        let c = projection.cells[s];
        let share = projection.share(s);
        for sn in 0..n {
            cell_rows[(c, sn)] += share * kernel[(s, sn)];
        }
    }
    Ok(DMatrix::from_fn(n, n, |s, sn| cell_rows[(projection.cells[s], sn)]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    /// `‖v̂ − v₀‖_μ`.
    pub total: f64,
    /// `‖Π v₀ − v₀‖_μ / (1−γ)`.
    pub refinement: f64,
    /// `‖v̂ − v̂₀‖_μ`.
    pub calibration: f64,
    pub bound_holds: bool,
    /// Stationary measure of the coarsened kernel.
    pub stationary: Vec<f64>,
}

/// Slack allowed in the calibration–refinement inequality.
pub const DECOMPOSITION_TOL: f64 = 1e-9;

/// Calibration–refinement decomposition on a tabular MDP.
///
/// All norms are `L²(μ)` for the stationary measure `μ` of the coarsened
/// kernel, found by power iteration. Fails with `StationaryNotFound` when
/// the iteration does not converge; the bound is then not applicable.
pub fn decomposition_report(
    mdp: &TabularMdp,
    pi: &TabularPolicy,
    v_hat_values: &[f64],
    partition: &HistogramPartition,
    weights: &[f64],
) -> Result<DecompositionReport> {
    let v0 = tabular_value_solve(mdp, pi)?;
    let fixed = coarsened_fixed_point_exact(mdp, pi, v_hat_values, partition, weights)?;
    let kernel = coarsened_kernel(mdp, pi, v_hat_values, partition, weights)?;
    let mu = stationary_distribution(&kernel, STATIONARY_TOL, STATIONARY_MAX_ITER).ok_or(Error::StationaryNotFound)?;
    let projected_v0 = Projection::new(v_hat_values, partition, weights)?.project(&v0);
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>();
    let total = weighted_l2(&diff(v_hat_values, &v0), &mu);
    let refinement = weighted_l2(&diff(&projected_v0, &v0), &mu) / (1.0 - mdp.discount());
    let calibration = weighted_l2(&diff(v_hat_values, &fixed), &mu);
    Ok(DecompositionReport {
        total,
        refinement,
        calibration,
        bound_holds: total <= refinement + calibration + DECOMPOSITION_TOL,
        stationary: mu,
    })
}
