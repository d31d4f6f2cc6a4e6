//! Deterministic brute-force check suites run by `bellcal oracle`.

use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bellman::dr_target;
use crate::calib::{fit_isotonic_pava, isotonic_block_dp, make_partition, PartitionScheme};
use crate::error::{Error, Result};
use crate::eval::{coarsened_bellman_apply, coarsened_fixed_point_exact, decomposition_report, level_set_partition};
use crate::mdp::{
    bellman_apply, one_hot, stationary_distribution, sup_distance, tabular_value_solve, weighted_l2, TabularMdp,
    TabularPolicy, Transition, STATIONARY_MAX_ITER, STATIONARY_TOL,
};
use crate::nuisance::{ActionValueFn, NextValueModel, NuisanceMode, NuisanceModels, RatioFn, ValueFn, WeightSource};
use crate::rng;
use crate::tabular::TableValue;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Pava,
    DrIdentity,
    Contraction,
    FixedPoint,
    Decomposition,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Pava,
        Suite::DrIdentity,
        Suite::Contraction,
        Suite::FixedPoint,
        Suite::Decomposition,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Pava => "pava",
            Suite::DrIdentity => "dr_identity",
            Suite::Contraction => "contraction",
            Suite::FixedPoint => "fixed_point",
            Suite::Decomposition => "decomposition",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown oracle suite '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub suite: Suite,
    pub instances: usize,
    pub passed: usize,
    /// Instances skipped as inapplicable (no stationary measure found).
    pub skipped: usize,
    /// One entry per failing instance, naming its seed.
    pub failures: Vec<String>,
}

impl OracleReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

const SUITE_SEED: u64 = 0x5eed;

pub fn run_suite(suite: Suite) -> OracleReport {
    let mut report = OracleReport {
        suite,
        instances: 0,
        passed: 0,
        skipped: 0,
        failures: Vec::new(),
    };
    let count = match suite {
        Suite::Pava => 1000,
        Suite::DrIdentity => 100,
        Suite::Contraction => 20,
        Suite::FixedPoint => 100,
        Suite::Decomposition => 500,
    };
    for i in 0..count as u64 {
        let check = match suite {
            Suite::Pava => pava_instance(i),
            Suite::DrIdentity => dr_identity_instance(i),
            Suite::Contraction => contraction_instance(i),
            Suite::FixedPoint => fixed_point_instance(i),
            Suite::Decomposition => decomposition_instance(i),
        };
        report.instances += 1;
        match check {
            Ok(Outcome::Pass) => report.passed += 1,
            Ok(Outcome::Skip) => report.skipped += 1,
            Ok(Outcome::Fail(msg)) => report.failures.push(format!("seed {i}: {msg}")),
            Err(e) => report.failures.push(format!("seed {i}: {e}")),
        }
    }
    report
}

enum Outcome {
    Pass,
    Skip,
    Fail(String),
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Outcome {
    if ok {
        Outcome::Pass
    } else {
        Outcome::Fail(msg())
    }
}

fn pava_instance(i: u64) -> Result<Outcome> {
    let mut r = rng::stream(SUITE_SEED, i);
    let n = r.random_range(1..=50);
    // A coarse grid of x-values produces ties.
    let xs: Vec<f64> = (0..n).map(|_| r.random_range(0..20) as f64 / 4.0).collect();
    let ys: Vec<f64> = (0..n).map(|_| r.random_range(-10.0..10.0)).collect();
    let ws: Vec<f64> = (0..n).map(|_| r.random_range(0.1..3.0)).collect();
    let theta = fit_isotonic_pava(&xs, &ys, Some(&ws))?;
    let fitted: Vec<f64> = xs.iter().map(|&x| theta.evaluate(x)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    // Pool ties for the oracle, which works on distinct sorted x.
    let mut pooled_y = Vec::new();
    let mut pooled_w = Vec::new();
    let mut pooled_x: Vec<f64> = Vec::new();
    for &k in &order {
        if pooled_x.last() == Some(&xs[k]) {
            let j = pooled_y.len() - 1;
            let w: f64 = pooled_w[j];
            pooled_y[j] = (pooled_y[j] * w + ys[k] * ws[k]) / (w + ws[k]);
            pooled_w[j] = w + ws[k];
        } else {
            pooled_x.push(xs[k]);
            pooled_y.push(ys[k]);
            pooled_w.push(ws[k]);
        }
    }
    let oracle = isotonic_block_dp(&pooled_y, &pooled_w);
    let mut worst: f64 = 0.0;
    for (k, &x) in xs.iter().enumerate() {
        let j = pooled_x.partition_point(|p| *p < x);
        worst = worst.max((fitted[k] - oracle[j]).abs());
    }
    let monotone = theta.levels().windows(2).all(|w| w[0] <= w[1]);
    Ok(check(worst <= 1e-10 && monotone, || format!("max deviation {worst:.3e}, monotone {monotone}")))
}

fn random_instance(i: u64, max_states: usize) -> Result<(TabularMdp, TabularPolicy, TabularPolicy, usize)> {
    let mut r = rng::stream(SUITE_SEED ^ 0xabc, i);
    let ns = r.random_range(2..=max_states);
    let na = r.random_range(1..=4);
    let gamma = r.random_range(0.0..0.95);
    let mdp = TabularMdp::random(&mut r, ns, na, gamma)?;
    let b0 = TabularPolicy::random(&mut r, ns, na, 0.05 / na as f64);
    let pi = TabularPolicy::random(&mut r, ns, na, 0.0);
    Ok((mdp, b0, pi, ns))
}

/// `E[dr_target | S = s]` by enumeration over `(A, S′)` under `b₀` and `P`.
pub fn enumerate_expected_target(
    mdp: &TabularMdp,
    b0: &TabularPolicy,
    pi: &TabularPolicy,
    v: &dyn ValueFn,
    nuis: &NuisanceModels,
    s: usize,
) -> Result<f64> {
    let ns = mdp.num_states();
    let mut total = 0.0;
    for a in 0..mdp.num_actions() {
        for sn in 0..ns {
            let p = b0.prob(s, a) * mdp.next_state_probs(s, a)[sn];
            if p == 0.0 {
                continue;
            }
            let tr = Transition {
                state: one_hot(s, ns),
                action: a,
                reward: mdp.reward(s, a),
                next_state: one_hot(sn, ns),
                done: false,
                behavior_probs: Some(b0.row(s).to_vec()),
                episode: None,
            };
            total += p * dr_target(&tr, v, nuis, pi, mdp.discount())?;
        }
    }
    Ok(total)
}

struct TableQ {
    ns: usize,
    na: usize,
    table: Vec<f64>,
}

impl ActionValueFn for TableQ {
    fn eval(&self, state: &[f64], action: usize) -> f64 {
        self.table[crate::mdp::state_index(state) * self.na + action]
    }
}

struct FixedNext(Arc<TableQ>);

impl NextValueModel for FixedNext {
    fn fit(&self, _v: &dyn ValueFn) -> Result<Box<dyn ActionValueFn>> {
        Ok(Box::new(TableQ {
            ns: self.0.ns,
            na: self.0.na,
            table: self.0.table.clone(),
        }))
    }
}

fn dr_identity_instance(i: u64) -> Result<Outcome> {
    let (mdp, b0, pi, ns) = random_instance(i, 20)?;
    let na = mdp.num_actions();
    let gamma = mdp.discount();
    let mut r = rng::stream(SUITE_SEED ^ 0xd1, i);
    let values: Vec<f64> = (0..ns).map(|_| r.random_range(-5.0..5.0)).collect();
    let w_hat: Vec<f64> = (0..ns * na).map(|_| r.random_range(0.0..4.0)).collect();
    let r_hat: Vec<f64> = (0..ns * na).map(|_| r.random_range(-1.0..2.0)).collect();
    let p_hat: Vec<f64> = (0..ns * na).map(|_| r.random_range(-5.0..5.0)).collect();
    let v = TableValue(values.clone());
    let tv = bellman_apply(&mdp, &pi, &values)?;

    let q = |s: usize, a: usize| mdp.reward(s, a) + gamma * mdp.expected_next(s, a, &values);
    let q_hat = |s: usize, a: usize| r_hat[s * na + a] + gamma * p_hat[s * na + a];
    let w = |s: usize, a: usize| pi.prob(s, a) / b0.prob(s, a);

    let build = |weights: RatioFn, reward: Arc<dyn ActionValueFn>, next: Arc<dyn NextValueModel>| {
        NuisanceModels::new(NuisanceMode::EstimatedWeights, WeightSource::Ratio(weights), Some(reward), Some(next))
            .with_clip(f64::MAX)
    };
    let est_w: RatioFn = {
        let w_hat = w_hat.clone();
        Arc::new(move |s: &[f64], a: usize| w_hat[crate::mdp::state_index(s) * na + a])
    };
    let true_w: RatioFn = {
        let (pi, b0) = (pi.clone(), b0.clone());
        Arc::new(move |s: &[f64], a: usize| {
            let s = crate::mdp::state_index(s);
            pi.prob(s, a) / b0.prob(s, a)
        })
    };
    let est_r: Arc<dyn ActionValueFn> = Arc::new(TableQ {
        ns,
        na,
        table: r_hat.clone(),
    });
    let est_p: Arc<dyn NextValueModel> = Arc::new(FixedNext(Arc::new(TableQ {
        ns,
        na,
        table: p_hat.clone(),
    })));
    let exact_r: Arc<dyn ActionValueFn> = Arc::new(crate::tabular::ExactReward(mdp.clone()));
    let exact_p: Arc<dyn NextValueModel> = Arc::new(crate::tabular::ExactNextValue(mdp.clone()));

    let both_wrong = build(est_w.clone(), est_r.clone(), est_p.clone());
    let exact_weights = build(true_w, est_r, est_p);
    let exact_q = build(est_w, exact_r, exact_p);

    let mut worst: f64 = 0.0;
    for s in 0..ns {
        let bias: f64 = (0..na)
            .map(|a| b0.prob(s, a) * (w(s, a) - w_hat[s * na + a]) * (q_hat(s, a) - q(s, a)))
            .sum();
        let e = enumerate_expected_target(&mdp, &b0, &pi, &v, &both_wrong, s)?;
        worst = worst.max((e - tv[s] - bias).abs());
        for nuis in [&exact_weights, &exact_q] {
            let e = enumerate_expected_target(&mdp, &b0, &pi, &v, nuis, s)?;
            worst = worst.max((e - tv[s]).abs());
        }
    }
    Ok(check(worst <= 1e-10, || format!("identity residual {worst:.3e}")))
}

fn contraction_instance(i: u64) -> Result<Outcome> {
    let (mdp, _, pi, ns) = random_instance(i, 20)?;
    let kernel = mdp.policy_kernel(&pi);
    let Some(mu) = stationary_distribution(&kernel, STATIONARY_TOL, STATIONARY_MAX_ITER) else {
        return Ok(Outcome::Skip);
    };
    let mut r = rng::stream(SUITE_SEED ^ 0xc0, i);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..100 {
        let h: Vec<f64> = (0..ns).map(|_| r.random_range(-10.0..10.0)).collect();
        let ph: Vec<f64> = (0..ns).map(|s| (0..ns).map(|t| kernel[(s, t)] * h[t]).sum()).collect();
        worst = worst.max(weighted_l2(&ph, &mu) - weighted_l2(&h, &mu));
    }
    Ok(check(worst <= 1e-9, || format!("‖Ph‖ − ‖h‖ = {worst:.3e}")))
}

fn fixed_point_instance(i: u64) -> Result<Outcome> {
    let (mdp, _, pi, ns) = random_instance(i, 20)?;
    let mut r = rng::stream(SUITE_SEED ^ 0xf1, i);
    let values: Vec<f64> = (0..ns).map(|_| r.random_range(0.0..10.0)).collect();
    let weights: Vec<f64> = (0..ns).map(|_| r.random_range(0.1..1.0)).collect();
    let bins = r.random_range(1..=ns);
    let partition = make_partition(&values, bins, PartitionScheme::EqualMass)?;
    let fp = coarsened_fixed_point_exact(&mdp, &pi, &values, &partition, &weights)?;
    let again = coarsened_bellman_apply(&mdp, &pi, &values, &partition, &weights, &fp)?;
    let residual = sup_distance(&fp, &again);
    let bin_constant = (0..ns).all(|s| {
        (0..ns).all(|t| partition.cell_of(values[s]) != partition.cell_of(values[t]) || fp[s] == fp[t])
    });
    // Singleton cells reproduce the exact value function.
    let singletons = level_set_partition(&values)?;
    let exact = coarsened_fixed_point_exact(&mdp, &pi, &values, &singletons, &weights)?;
    let v0 = tabular_value_solve(&mdp, &pi)?;
    let distinct = {
        let mut v = values.clone();
        v.sort_by(f64::total_cmp);
        v.windows(2).all(|w| w[0] < w[1])
    };
    let singleton_err = if distinct { sup_distance(&exact, &v0) } else { 0.0 };
    Ok(check(residual <= 1e-10 && bin_constant && singleton_err <= 1e-8, || {
        format!("residual {residual:.3e}, bin-constant {bin_constant}, singleton error {singleton_err:.3e}")
    }))
}

fn decomposition_instance(i: u64) -> Result<Outcome> {
    let (mdp, _, pi, ns) = random_instance(i, 20)?;
    let mut r = rng::stream(SUITE_SEED ^ 0xde, i);
    let values: Vec<f64> = (0..ns).map(|_| r.random_range(-5.0..15.0)).collect();
    let weights: Vec<f64> = (0..ns).map(|_| r.random_range(0.1..1.0)).collect();
    let partition = if r.random_bool(0.5) {
        level_set_partition(&values)?
    } else {
        make_partition(&values, r.random_range(1..=ns), PartitionScheme::EqualMass)?
    };
    match decomposition_report(&mdp, &pi, &values, &partition, &weights) {
        Ok(rep) => Ok(check(rep.bound_holds, || {
            format!(
                "total {:.6} > refinement {:.6} + calibration {:.6}",
                rep.total, rep.refinement, rep.calibration
            )
        })),
        Err(Error::StationaryNotFound) => Ok(Outcome::Skip),
        Err(e) => Err(e),
    }
}
