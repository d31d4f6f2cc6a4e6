//! Acceptance checks. Each criterion prints one PASS/FAIL line with its
//! tolerance; the process exits nonzero if any criterion fails.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use bellcal::bellman::{
    calibrate_coordinates, calibrate_with_partition, dr_target, iterated_calibration, CalibrationConfig,
    CalibratorClass, ValuePredictor,
};
use bellcal::calib::{fit_isotonic_pava, make_partition, HistogramPartition, PartitionScheme};
use bellcal::config::ExperimentConfig;
use bellcal::eval::{coarsened_fixed_point_exact, decomposition_report, level_set_partition, DECOMPOSITION_TOL};
use bellcal::experiment::{run_experiment, ResultRow};
use bellcal::mdp::{
    one_hot, state_index, stationary_distribution, TabularMdp, TabularPolicy, Transition, STATIONARY_MAX_ITER,
    STATIONARY_TOL,
};
use bellcal::nuisance::{
    ActionValueFn, CalibrationFold, NextValueModel, NuisanceMode, NuisanceModels, RatioFn, ValueFn, WeightSource,
};
use bellcal::tabular::{sample_transitions, ExactNextValue, ExactReward, TableValue};
use bellcal::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Weighted isotonic fit by the min-max formula
/// `f_i = max_{j ≤ i} min_{k ≥ i} mean(y_j..=y_k)` on tie-pooled sorted data.
fn minmax_isotonic(xs: &[f64], ys: &[f64], ws: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut gx: Vec<f64> = Vec::new();
    let mut gsum: Vec<f64> = Vec::new();
    let mut gw: Vec<f64> = Vec::new();
    for &i in &order {
        if gx.last() == Some(&xs[i]) {
            *gsum.last_mut().unwrap() += ys[i] * ws[i];
            *gw.last_mut().unwrap() += ws[i];
        } else {
            gx.push(xs[i]);
            gsum.push(ys[i] * ws[i]);
            gw.push(ws[i]);
        }
    }
    let m = gx.len();
    let fit: Vec<f64> = (0..m)
        .map(|i| {
            (0..=i)
                .map(|j| {
                    (i..m)
                        .map(|k| gsum[j..=k].iter().sum::<f64>() / gw[j..=k].iter().sum::<f64>())
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    xs.iter()
        .map(|x| fit[gx.iter().position(|g| g == x).unwrap()])
        .collect()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut monotone = true;
    for seed in 0..1000u64 {
        let mut r = rng(seed);
        let n = r.random_range(1..=50);
        let xs: Vec<f64> = (0..n).map(|_| r.random_range(0..25) as f64 * 0.5).collect();
        let ys: Vec<f64> = (0..n).map(|_| r.random_range(-5.0..5.0)).collect();
        let ws: Vec<f64> = (0..n).map(|_| r.random_range(0.2..2.0)).collect();
        let theta = fit_isotonic_pava(&xs, &ys, Some(&ws)).unwrap();
        let oracle = minmax_isotonic(&xs, &ys, &ws);
        for (x, o) in xs.iter().zip(&oracle) {
            worst = worst.max((theta.evaluate(*x) - o).abs());
        }
        monotone &= theta.levels().windows(2).all(|w| w[0] <= w[1]);
        let mut sorted: Vec<f64> = xs.clone();
        sorted.sort_by(f64::total_cmp);
        monotone &= sorted.windows(2).all(|w| theta.evaluate(w[0]) <= theta.evaluate(w[1]));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-10 && monotone && secs < 5.0,
        format!("1000 instances, max |PAVA − oracle| = {worst:.1e} (tol 1e-10), monotone = {monotone}, {secs:.2} s (limit 5 s)"),
    )
}

fn exact_nuisances(mdp: &TabularMdp) -> NuisanceModels {
    NuisanceModels::new(
        NuisanceMode::ExactWeights,
        WeightSource::Logged,
        Some(Arc::new(ExactReward(mdp.clone()))),
        Some(Arc::new(ExactNextValue(mdp.clone()))),
    )
}

struct RandomInstance {
    mdp: TabularMdp,
    b0: TabularPolicy,
    pi: TabularPolicy,
}

fn random_instance(r: &mut ChaCha8Rng, max_states: usize, gamma: Option<f64>) -> RandomInstance {
    let ns = r.random_range(2..=max_states);
    let na = r.random_range(1..=3);
    let gamma = gamma.unwrap_or_else(|| r.random_range(0.0..0.95));
    let mdp = TabularMdp::random(r, ns, na, gamma).unwrap();
    let b0 = TabularPolicy::random(r, ns, na, 0.1 / na as f64);
    let pi = TabularPolicy::random(r, ns, na, 0.0);
    RandomInstance { mdp, b0, pi }
}

fn criterion_2() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let mut r = rng(1000 + seed);
        let inst = random_instance(&mut r, 12, None);
        let ns = inst.mdp.num_states();
        let rho = vec![1.0 / ns as f64; ns];
        let data = sample_transitions(&inst.mdp, &inst.b0, &rho, r.random_range(200..2000), seed).unwrap();
        let v_hat = ValuePredictor::tabular((0..ns).map(|_| r.random_range(-3.0..3.0)).collect());
        let class = if seed % 2 == 0 {
            CalibratorClass::HistogramEqualMass
        } else {
            CalibratorClass::HistogramEqualWidth
        };
        let cfg = CalibrationConfig {
            iterations: Some(r.random_range(1..15)),
            bins: Some(r.random_range(1..8)),
            ..CalibrationConfig::with_class(class)
        };
        let nuis = exact_nuisances(&inst.mdp);
        let (_, run) =
            iterated_calibration(&v_hat, &CalibrationFold::new(data), &nuis, &inst.pi, inst.mdp.discount(), &cfg)
                .unwrap();
        let partition = run.partition.as_ref().unwrap();
        let fitted = run.calibrated_values();
        let mut sums = vec![0.0; partition.num_cells()];
        for ((x, t), f) in run.coordinates.iter().zip(&run.final_targets).zip(&fitted) {
            sums[partition.cell_of(*x)] += t - f;
        }
        let n = fitted.len() as f64;
        worst = sums.iter().fold(worst, |m, s| m.max((s / n).abs()));
    }
    outcome(worst <= 1e-9, format!("100 runs, max per-bin mean residual = {worst:.1e} (tol 1e-9)"))
}

struct TableAction {
    na: usize,
    table: Vec<f64>,
}

impl ActionValueFn for TableAction {
    fn eval(&self, s: &[f64], a: usize) -> f64 {
        self.table[state_index(s) * self.na + a]
    }
}

struct FixedNext {
    na: usize,
    table: Vec<f64>,
}

impl NextValueModel for FixedNext {
    fn fit(&self, _v: &dyn ValueFn) -> bellcal::Result<Box<dyn ActionValueFn>> {
        Ok(Box::new(TableAction {
            na: self.na,
            table: self.table.clone(),
        }))
    }
}

fn expected_target(inst: &RandomInstance, v: &TableValue, nuis: &NuisanceModels, s: usize) -> f64 {
    let (mdp, ns) = (&inst.mdp, inst.mdp.num_states());
    let mut e = 0.0;
    for a in 0..mdp.num_actions() {
        for sn in 0..ns {
            let p = inst.b0.prob(s, a) * mdp.next_state_probs(s, a)[sn];
            let tr = Transition {
                state: one_hot(s, ns),
                action: a,
                reward: mdp.reward(s, a),
                next_state: one_hot(sn, ns),
                done: false,
                behavior_probs: Some(inst.b0.row(s).to_vec()),
                episode: None,
            };
            e += p * dr_target(&tr, v, nuis, &inst.pi, mdp.discount()).unwrap();
        }
    }
    e
}

fn criterion_3() -> Outcome {
    let (mut worst_identity, mut worst_exact): (f64, f64) = (0.0, 0.0);
    for seed in 0..100u64 {
        let mut r = rng(2000 + seed);
        let inst = random_instance(&mut r, 20, None);
        let (ns, na, gamma) = (inst.mdp.num_states(), inst.mdp.num_actions(), inst.mdp.discount());
        let values: Vec<f64> = (0..ns).map(|_| r.random_range(-4.0..4.0)).collect();
        let w_hat: Vec<f64> = (0..ns * na).map(|_| r.random_range(0.0..3.0)).collect();
        let r_hat: Vec<f64> = (0..ns * na).map(|_| r.random_range(-1.0..1.0)).collect();
        let p_hat: Vec<f64> = (0..ns * na).map(|_| r.random_range(-4.0..4.0)).collect();
        let v = TableValue(values.clone());
        let mdp = &inst.mdp;
        // Bellman operator and true q computed directly from the model.
        let q = |s: usize, a: usize| {
            let next: f64 = mdp.next_state_probs(s, a).iter().zip(&values).map(|(p, v)| p * v).sum();
            mdp.reward(s, a) + gamma * next
        };
        let tv = |s: usize| (0..na).map(|a| inst.pi.prob(s, a) * q(s, a)).sum::<f64>();
        let w = |s: usize, a: usize| inst.pi.prob(s, a) / inst.b0.prob(s, a);
        let q_hat = |s: usize, a: usize| r_hat[s * na + a] + gamma * p_hat[s * na + a];

        let est_w: RatioFn = {
            let w_hat = w_hat.clone();
            Arc::new(move |s: &[f64], a: usize| w_hat[state_index(s) * na + a])
        };
        let true_w: RatioFn = {
            let (pi, b0) = (inst.pi.clone(), inst.b0.clone());
            Arc::new(move |s: &[f64], a: usize| pi.prob(state_index(s), a) / b0.prob(state_index(s), a))
        };
        let est_r: Arc<dyn ActionValueFn> = Arc::new(TableAction { na, table: r_hat.clone() });
        let est_p: Arc<dyn NextValueModel> = Arc::new(FixedNext { na, table: p_hat.clone() });
        let make = |wf: RatioFn, rf: Arc<dyn ActionValueFn>, pf: Arc<dyn NextValueModel>| {
            NuisanceModels::new(NuisanceMode::EstimatedWeights, WeightSource::Ratio(wf), Some(rf), Some(pf))
                .with_clip(f64::MAX)
        };
        let both_est = make(est_w.clone(), est_r.clone(), est_p.clone());
        let exact_w = make(true_w, est_r, est_p);
        let exact_q = make(
            est_w,
            Arc::new(ExactReward(mdp.clone())),
            Arc::new(ExactNextValue(mdp.clone())),
        );
        for s in 0..ns {
            let bias: f64 = (0..na)
                .map(|a| inst.b0.prob(s, a) * (w(s, a) - w_hat[s * na + a]) * (q_hat(s, a) - q(s, a)))
                .sum();
            let lhs = expected_target(&inst, &v, &both_est, s) - tv(s);
            worst_identity = worst_identity.max((lhs - bias).abs());
            for nuis in [&exact_w, &exact_q] {
                worst_exact = worst_exact.max((expected_target(&inst, &v, nuis, s) - tv(s)).abs());
            }
        }
    }
    outcome(
        worst_identity <= 1e-10 && worst_exact <= 1e-10,
        format!("100 MDPs, identity residual {worst_identity:.1e}, exact-nuisance bias {worst_exact:.1e} (tol 1e-10)"),
    )
}

fn criterion_4() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut exact = true;
    for seed in 0..50u64 {
        let mut r = rng(3000 + seed);
        let inst = random_instance(&mut r, 15, Some(0.0));
        let ns = inst.mdp.num_states();
        let rho = vec![1.0 / ns as f64; ns];
        let data = sample_transitions(&inst.mdp, &inst.b0, &rho, r.random_range(50..1500), seed).unwrap();
        let v_hat = ValuePredictor::tabular((0..ns).map(|_| r.random_range(0..6) as f64).collect());
        let cfg = CalibrationConfig {
            iterations: Some(1),
            isotonic_min_block: Some(1),
            ..CalibrationConfig::with_class(CalibratorClass::Isotonic)
        };
        let nuis = NuisanceModels::iw_only(WeightSource::Logged);
        let (out, _) = iterated_calibration(&v_hat, &CalibrationFold::new(data.clone()), &nuis, &inst.b0, 0.0, &cfg)
            .unwrap();
        let xs: Vec<f64> = data.iter().map(|t| v_hat.predict(&t.state)).collect();
        let ys: Vec<f64> = data.iter().map(|t| t.reward).collect();
        let classical = fit_isotonic_pava(&xs, &ys, None).unwrap();
        let oracle = minmax_isotonic(&xs, &ys, &vec![1.0; xs.len()]);
        for ((t, x), o) in data.iter().zip(&xs).zip(&oracle) {
            let p = out.predict(&t.state);
            exact &= p == classical.evaluate(*x);
            worst = worst.max((p - o).abs());
        }
    }
    outcome(
        exact && worst <= 1e-10,
        format!("50 datasets, bitwise equal to PAVA on rewards = {exact}, max |out − min-max oracle| = {worst:.1e} (tol 1e-10)"),
    )
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let mut r = rng(4000);
    let ns = 20;
    let gamma = 0.9;
    let mdp = TabularMdp::random(&mut r, ns, 2, gamma).unwrap();
    let b0 = TabularPolicy::random(&mut r, ns, 2, 0.1);
    let pi = TabularPolicy::random(&mut r, ns, 2, 0.0);
    let rho = vec![1.0 / ns as f64; ns];
    let data = sample_transitions(&mdp, &b0, &rho, 100_000, 4000).unwrap();
    let values: Vec<f64> = (0..ns).map(|s| s as f64 * 0.25).collect();
    let v_hat = ValuePredictor::tabular(values.clone());
    let partition = HistogramPartition::explicit(vec![0.9, 1.9, 2.9, 3.9]).unwrap();
    let cfg = CalibrationConfig {
        iterations: Some(100),
        ..CalibrationConfig::with_class(CalibratorClass::HistogramEqualMass)
    };
    let nuis = exact_nuisances(&mdp);
    let (out, run) =
        calibrate_with_partition(&v_hat, &partition, &CalibrationFold::new(data), &nuis, &pi, gamma, &cfg).unwrap();
    let exact = coarsened_fixed_point_exact(&mdp, &pi, &values, &partition, &rho).unwrap();
    let err = (0..ns)
        .map(|s| (out.predict(&one_hot(s, ns)) - exact[s]).abs())
        .fold(0.0, f64::max);
    let tol = 0.05 * mdp.max_abs_reward() / (1.0 - gamma);
    let ratios = run.successive_ratios();
    let window = &ratios[2..8];
    let ratios_ok = window.iter().all(|q| (gamma - 0.15..=gamma + 0.15).contains(q));
    let secs = start.elapsed().as_secs_f64();
    let shown: Vec<String> = window.iter().map(|q| format!("{q:.3}")).collect();
    outcome(
        err <= tol && ratios_ok && secs < 60.0,
        format!(
            "sup error {err:.4} (tol {tol:.4}), ratios k=3..8 [{}] (band [0.75, 1.05]), K = {}, {secs:.1} s (limit 60 s)",
            shown.join(", "),
            run.diagnostics.len()
        ),
    )
}

fn criterion_6() -> Outcome {
    let (mut converged, mut holds, mut worst_slack) = (0, 0, f64::NEG_INFINITY);
    for seed in 0..500u64 {
        let mut r = rng(5000 + seed);
        let inst = random_instance(&mut r, 15, None);
        let ns = inst.mdp.num_states();
        let values: Vec<f64> = (0..ns).map(|_| r.random_range(-5.0..10.0)).collect();
        let weights: Vec<f64> = (0..ns).map(|_| r.random_range(0.1..1.0)).collect();
        let partition = if seed % 2 == 0 {
            level_set_partition(&values).unwrap()
        } else {
            make_partition(&values, r.random_range(1..=ns), PartitionScheme::EqualMass).unwrap()
        };
        match decomposition_report(&inst.mdp, &inst.pi, &values, &partition, &weights) {
            Ok(rep) => {
                converged += 1;
                let slack = rep.total - rep.refinement - rep.calibration;
                worst_slack = worst_slack.max(slack);
                if slack <= DECOMPOSITION_TOL {
                    holds += 1;
                }
            }
            Err(Error::StationaryNotFound) => {}
            Err(e) => panic!("instance {seed}: {e}"),
        }
    }
    outcome(
        converged > 0 && holds == converged,
        format!("{holds}/{converged} converged instances of 500, max (total − bound) = {worst_slack:.2e} (tol 1e-9)"),
    )
}

fn criterion_7() -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    let mut stationary_residual: f64 = 0.0;
    for seed in 0..20u64 {
        let mut r = rng(6000 + seed);
        let inst = random_instance(&mut r, 20, None);
        let ns = inst.mdp.num_states();
        let kernel = inst.mdp.policy_kernel(&inst.pi);
        let mu = stationary_distribution(&kernel, STATIONARY_TOL, STATIONARY_MAX_ITER).expect("stationary measure");
        for t in 0..ns {
            let mp: f64 = (0..ns).map(|s| mu[s] * kernel[(s, t)]).sum();
            stationary_residual = stationary_residual.max((mp - mu[t]).abs());
        }
        let norm = |h: &[f64]| h.iter().zip(&mu).map(|(x, m)| m * x * x).sum::<f64>().sqrt();
        for _ in 0..100 {
            let h: Vec<f64> = (0..ns).map(|_| r.random_range(-10.0..10.0)).collect();
            let ph: Vec<f64> = (0..ns).map(|s| (0..ns).map(|t| kernel[(s, t)] * h[t]).sum()).collect();
            worst = worst.max(norm(&ph) - norm(&h));
        }
    }
    outcome(
        worst <= 1e-9 && stationary_residual <= 1e-9,
        format!("20 MDPs × 100 h, max ‖Ph‖ − ‖h‖ = {worst:.2e} (tol 1e-9), ‖μP − μ‖∞ = {stationary_residual:.1e}"),
    )
}

fn crm_rows() -> (Vec<ResultRow>, f64) {
    let start = Instant::now();
    let mut cfg = ExperimentConfig::default();
    cfg.base.fit.snapshot_at = Some(2);
    let out = run_experiment(&cfg, false).unwrap();
    assert!(out.failures.is_empty(), "{:?}", out.failures);
    (out.rows, start.elapsed().as_secs_f64())
}

fn metric<'a>(rows: &'a [ResultRow], method: &str, seed: u64) -> &'a ResultRow {
    rows.iter().find(|r| r.method == method && r.seed == seed).unwrap()
}

fn criterion_8(rows: &[ResultRow], secs: f64) -> Outcome {
    let seeds: Vec<u64> = (1..=10).collect();
    let wins = |method: &str| {
        seeds
            .iter()
            .filter(|&&s| metric(rows, method, s).cal_error < metric(rows, "raw", s).cal_error)
            .count()
    };
    let (iso, hybrid) = (wins("iso"), wins("hybrid"));
    outcome(
        iso >= 9 && hybrid >= 9 && secs < 300.0,
        format!("cal_error below raw: iso {iso}/10, hybrid {hybrid}/10 (need 9), harness {secs:.0} s (limit 300 s)"),
    )
}

fn criterion_9(rows: &[ResultRow]) -> Outcome {
    let mut within = 0;
    let mut below = 0;
    let mut worst: f64 = 0.0;
    for s in 1..=10 {
        let ratio = metric(rows, "hybrid", s).scaled_rmse / metric(rows, "raw", s).scaled_rmse;
        worst = worst.max(ratio);
        within += usize::from(ratio <= 1.05);
        below += usize::from(ratio < 1.0);
    }
    outcome(
        within == 10 && below >= 7,
        format!("hybrid/raw scaled RMSE ≤ 1.05 on {within}/10 (max {worst:.3}), < 1 on {below}/10 (need 7)"),
    )
}

fn criterion_10() -> Outcome {
    let transforms: [fn(f64) -> f64; 10] = [
        |x| 2.0 * x + 1.0,
        |x| x.exp(),
        |x| x * x * x + x,
        |x| x.atan(),
        |x| 5.0 * x - 100.0,
        |x| (0.5 * x).tanh(),
        |x| x.exp() - (-x).exp(),
        |x| x / (1.0 + x.abs()),
        |x| 1e-3 * x,
        |x| x + x.exp(),
    ];
    let mut worst_coord: f64 = 0.0;
    let mut worst_converged: f64 = 0.0;
    for seed in 0..10u64 {
        let mut r = rng(7000 + seed);
        let gamma = r.random_range(0.3..0.6);
        let inst = random_instance(&mut r, 12, Some(gamma));
        let ns = inst.mdp.num_states();
        let rho = vec![1.0 / ns as f64; ns];
        let data = sample_transitions(&inst.mdp, &inst.b0, &rho, 3000, seed).unwrap();
        let cal = CalibrationFold::new(data);
        let nuis = exact_nuisances(&inst.mdp);
        let values: Vec<f64> = (0..ns).map(|_| r.random_range(-2.0..2.0)).collect();
        let v_hat = ValuePredictor::tabular(values.clone());
        let states: Vec<Vec<f64>> = cal.data().iter().map(|t| t.state.clone()).collect();
        for class in [
            CalibratorClass::Isotonic,
            CalibratorClass::HistogramEqualMass,
            CalibratorClass::HistogramEqualWidth,
            CalibratorClass::Hybrid,
        ] {
            let cfg = CalibrationConfig::with_class(class);
            let reference = calibrate_coordinates(&v_hat, &v_hat, &cal, &nuis, &inst.pi, gamma, &cfg).unwrap();
            for g in transforms {
                if class == CalibratorClass::HistogramEqualWidth && !is_affine(g) {
                    continue;
                }
                let moved = TableValue(values.iter().map(|&v| g(v)).collect());
                let run = calibrate_coordinates(&moved, &v_hat, &cal, &nuis, &inst.pi, gamma, &cfg).unwrap();
                for (a, b) in run.calibrated_values().iter().zip(reference.calibrated_values()) {
                    worst_coord = worst_coord.max((a - b).abs());
                }
            }
        }
        // Iterating to convergence from the transformed predictor itself.
        let cfg = CalibrationConfig {
            iterations: Some(400),
            early_stop: Some(1e-13),
            ..CalibrationConfig::with_class(CalibratorClass::HistogramEqualMass)
        };
        let (base_out, _) = iterated_calibration(&v_hat, &cal, &nuis, &inst.pi, gamma, &cfg).unwrap();
        for g in transforms {
            let moved = ValuePredictor::tabular(values.iter().map(|&v| g(v)).collect());
            let (out, _) = iterated_calibration(&moved, &cal, &nuis, &inst.pi, gamma, &cfg).unwrap();
            for s in &states {
                worst_converged = worst_converged.max((out.predict(s) - base_out.predict(s)).abs());
            }
        }
    }
    outcome(
        worst_coord <= 1e-9 && worst_converged <= 1e-9,
        format!(
            "10 datasets × 10 transforms, fixed-start max diff {worst_coord:.1e}, converged histogram max diff {worst_converged:.1e} (tol 1e-9)"
        ),
    )
}

/// Equal-width bins are invariant only under affine maps.
fn is_affine(g: fn(f64) -> f64) -> bool {
    let slope = g(1.0) - g(0.0);
    [-2.0, -0.5, 0.5, 3.0]
        .iter()
        .all(|&x| (g(x) - g(0.0) - slope * x).abs() <= 1e-9 * (1.0 + g(0.0).abs()))
}

fn main() -> ExitCode {
    let mut all = true;
    let mut report = |id: usize, name: &str, o: Outcome| {
        all &= o.pass;
        println!("[{}] C{id:<2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    };
    report(1, "PAVA vs min-max isotonic oracle", criterion_1());
    report(2, "histogram first-order optimality", criterion_2());
    report(3, "doubly robust error identity", criterion_3());
    report(4, "myopic reduction to isotonic calibration", criterion_4());
    report(5, "coarsened fixed-point recovery", criterion_5());
    report(6, "calibration-refinement bound", criterion_6());
    report(7, "contraction under the stationary measure", criterion_7());
    let (rows, secs) = crm_rows();
    report(8, "CRM calibration-error reduction", criterion_8(&rows, secs));
    report(9, "CRM hybrid RMSE preservation", criterion_9(&rows));
    report(10, "order invariance", criterion_10());
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
