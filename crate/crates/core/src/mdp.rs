//! Core MDP abstractions: logged transitions, policies, and the exact
//! tabular machinery (Bellman operator, direct value solve, stationary
//! distributions) used as a brute-force oracle throughout the crate.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest state space the dense tabular oracles accept.
pub const MAX_TABULAR_STATES: usize = 2000;

/// One observed `(S, A, R, S', done)` tuple logged under the behavior policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    #[serde(rename = "s")]
    pub state: Vec<f64>,
    #[serde(rename = "a")]
    pub action: usize,
    #[serde(rename = "r")]
    pub reward: f64,
    #[serde(rename = "sn")]
    pub next_state: Vec<f64>,
    pub done: bool,
    /// Behavior probabilities at `state`, when the logger recorded them.
    #[serde(rename = "bp", default, skip_serializing_if = "Option::is_none")]
    pub behavior_probs: Option<Vec<f64>>,
    /// Episode (customer) id, used for trajectory-respecting splits.
    #[serde(rename = "ep", default, skip_serializing_if = "Option::is_none")]
    pub episode: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct DatasetHeader {
    state_dim: usize,
    num_actions: usize,
    seed: u64,
}

/// An ordered, validated collection of transitions sharing one state
/// dimension and action count.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    transitions: Vec<Transition>,
    num_actions: usize,
    state_dim: usize,
    seed: u64,
}

impl TransitionDataset {
    pub fn new(
        transitions: Vec<Transition>,
        num_actions: usize,
        state_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        if transitions.is_empty() {
            return Err(Error::Empty("transition dataset"));
        }
        if num_actions == 0 {
            return Err(Error::InvalidDataset("num_actions must be positive".into()));
        }
        for (i, tr) in transitions.iter().enumerate() {
            if tr.state.len() != state_dim || tr.next_state.len() != state_dim {
                return Err(Error::InvalidDataset(format!(
                    "transition {i}: state dimension {} / {} does not match {state_dim}",
                    tr.state.len(),
                    tr.next_state.len()
                )));
            }
            if tr.action >= num_actions {
                return Err(Error::InvalidDataset(format!(
                    "transition {i}: action {} out of range 0..{num_actions}",
                    tr.action
                )));
            }
            if !tr.reward.is_finite() {
                return Err(Error::InvalidDataset(format!("transition {i}: non-finite reward")));
            }
            if let Some(bp) = &tr.behavior_probs {
                if bp.len() != num_actions {
                    return Err(Error::InvalidDataset(format!(
                        "transition {i}: behavior probability vector has length {}",
                        bp.len()
                    )));
                }
            }
        }
        Ok(Self {
            transitions,
            num_actions,
            state_dim,
            seed,
        })
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Transition> {
        self.transitions.iter()
    }

    /// True when every transition carries logged behavior probabilities.
    pub fn has_behavior_probs(&self) -> bool {
        self.transitions.iter().all(|t| t.behavior_probs.is_some())
    }

    /// Keeps the transitions matching `keep`; `None` if nothing survives.
    pub fn filter(&self, mut keep: impl FnMut(&Transition) -> bool) -> Option<Self> {
        let transitions: Vec<_> = self.transitions.iter().filter(|t| keep(t)).cloned().collect();
        if transitions.is_empty() {
            return None;
        }
        Some(Self {
            transitions,
            ..self.clone_header()
        })
    }

    fn clone_header(&self) -> Self {
        Self {
            transitions: Vec::new(),
            num_actions: self.num_actions,
            state_dim: self.state_dim,
            seed: self.seed,
        }
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        let header = DatasetHeader {
            state_dim: self.state_dim,
            num_actions: self.num_actions,
            seed: self.seed,
        };
        let mut line = serde_json::to_string(&header)?;
        line.push('\n');
        out.write_all(line.as_bytes()).map_err(|e| Error::io("<writer>", e))?;
        for tr in &self.transitions {
            let mut line = serde_json::to_string(tr)?;
            line.push('\n');
            out.write_all(line.as_bytes()).map_err(|e| Error::io("<writer>", e))?;
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header_line = loop {
            match lines.next() {
                Some(line) => {
                    let line = line.map_err(|e| Error::io("<reader>", e))?;
                    if !line.trim().is_empty() {
                        break line;
                    }
                }
                None => return Err(Error::Empty("dataset header")),
            }
        };
        let header: DatasetHeader = serde_json::from_str(&header_line)?;
        let mut transitions = Vec::new();
        for line in lines {
            let line = line.map_err(|e| Error::io("<reader>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            transitions.push(serde_json::from_str(&line)?);
        }
        Self::new(transitions, header.num_actions, header.state_dim, header.seed)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_jsonl(std::io::BufReader::new(file)).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
    }

    /// Writes the dataset atomically (temp file + rename).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_atomic(path, self.to_jsonl_string().as_bytes())
    }
}

impl<'a> IntoIterator for &'a TransitionDataset {
    type Item = &'a Transition;
    type IntoIter = std::slice::Iter<'a, Transition>;

    fn into_iter(self) -> Self::IntoIter {
        self.transitions.iter()
    }
}

/// A stochastic policy over dense action indices `0..num_actions`.
pub trait Policy: Send + Sync {
    fn num_actions(&self) -> usize;

    /// Probability vector over actions at `state`; nonnegative, sums to one.
    fn action_probs(&self, state: &[f64]) -> Vec<f64>;
}

impl<P: Policy + ?Sized> Policy for &P {
    fn num_actions(&self) -> usize {
        (**self).num_actions()
    }

    fn action_probs(&self, state: &[f64]) -> Vec<f64> {
        (**self).action_probs(state)
    }
}

impl<P: Policy + ?Sized> Policy for std::sync::Arc<P> {
    fn num_actions(&self) -> usize {
        (**self).num_actions()
    }

    fn action_probs(&self, state: &[f64]) -> Vec<f64> {
        (**self).action_probs(state)
    }
}

/// `(πf)(s) = Σ_a π(a|s) f(s, a)`.
pub fn policy_marginalize<P: Policy + ?Sized>(
    pi: &P,
    state: &[f64],
    f: impl Fn(usize) -> f64,
) -> Result<f64> {
    let probs = pi.action_probs(state);
    let mut total = 0.0;
    for (a, p) in probs.iter().enumerate() {
        let q = f(a);
        if !q.is_finite() {
            return Err(Error::NonFinite("q-function value"));
        }
        total += p * q;
    }
    Ok(total)
}

/// Ratio `π(a|s) / b(a|s)`; zero when both vanish.
pub fn ratio_from_probs(target: f64, behavior: f64, action: usize) -> Result<f64> {
    if behavior > 0.0 {
        Ok(target / behavior)
    } else if target > 0.0 {
        Err(Error::OverlapViolation { action, target })
    } else {
        Ok(0.0)
    }
}

/// Importance ratio `w_π(a|s) = π(a|s) / b₀(a|s)`.
pub fn importance_ratio<P: Policy + ?Sized, B: Policy + ?Sized>(
    pi: &P,
    b0: &B,
    state: &[f64],
    action: usize,
) -> Result<f64> {
    let target = pi.action_probs(state)[action];
    let behavior = b0.action_probs(state)[action];
    ratio_from_probs(target, behavior, action)
}

/// A policy that always selects one action.
#[derive(Debug, Clone, Copy)]
pub struct DeterministicPolicy<F> {
    num_actions: usize,
    choose: F,
}

impl<F: Fn(&[f64]) -> usize + Send + Sync> DeterministicPolicy<F> {
    pub fn new(num_actions: usize, choose: F) -> Self {
        Self { num_actions, choose }
    }
}

impl<F: Fn(&[f64]) -> usize + Send + Sync> Policy for DeterministicPolicy<F> {
    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn action_probs(&self, state: &[f64]) -> Vec<f64> {
        let mut probs = vec![0.0; self.num_actions];
        probs[(self.choose)(state)] = 1.0;
        probs
    }
}

/// Exact finite MDP. Tensors are stored row-major:
/// `transition[(s * A + a) * S + s']` and `reward[s * A + a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    initial: Vec<f64>,
    discount: f64,
}

impl TabularMdp {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        initial: Vec<f64>,
        discount: f64,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidMdp("empty state or action space".into()));
        }
        if num_states > MAX_TABULAR_STATES {
            return Err(Error::InvalidMdp(format!(
                "{num_states} states exceeds the oracle cap of {MAX_TABULAR_STATES}"
            )));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::InvalidMdp(format!("discount {discount} outside [0, 1)")));
        }
        if transition.len() != num_states * num_actions * num_states {
            return Err(Error::DimensionMismatch {
                expected: num_states * num_actions * num_states,
                got: transition.len(),
            });
        }
        if reward.len() != num_states * num_actions {
            return Err(Error::DimensionMismatch {
                expected: num_states * num_actions,
                got: reward.len(),
            });
        }
        if initial.len() != num_states {
            return Err(Error::DimensionMismatch {
                expected: num_states,
                got: initial.len(),
            });
        }
        for (row_idx, row) in transition.chunks(num_states).enumerate() {
            if row.iter().any(|p| *p < 0.0 || !p.is_finite()) {
                return Err(Error::InvalidMdp(format!("row {row_idx} has an invalid probability")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidMdp(format!("row {row_idx} sums to {sum}")));
            }
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite("reward table"));
        }
        let init_sum: f64 = initial.iter().sum();
        if initial.iter().any(|p| *p < 0.0) || (init_sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMdp(format!("initial distribution sums to {init_sum}")));
        }
        Ok(Self {
            num_states,
            num_actions,
            transition,
            reward,
            initial,
            discount,
        })
    }

    /// Random dense MDP: exponential-normalized rows, rewards in `[0, 1)`.
    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        num_states: usize,
        num_actions: usize,
        discount: f64,
    ) -> Result<Self> {
        let mut transition = Vec::with_capacity(num_states * num_actions * num_states);
        for _ in 0..num_states * num_actions {
            transition.extend(random_simplex(rng, num_states));
        }
        let reward = (0..num_states * num_actions).map(|_| rng.random::<f64>()).collect();
        let initial = random_simplex(rng, num_states);
        Self::new(num_states, num_actions, transition, reward, initial, discount)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn initial_distribution(&self) -> &[f64] {
        &self.initial
    }

    /// `P(·|s, a)`.
    pub fn next_state_probs(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.transition[start..start + self.num_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.num_actions + a]
    }

    pub fn max_abs_reward(&self) -> f64 {
        self.reward.iter().fold(0.0_f64, |m, r| m.max(r.abs()))
    }

    /// Same MDP with a different discount factor.
    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        Self::new(
            self.num_states,
            self.num_actions,
            self.transition.clone(),
            self.reward.clone(),
            self.initial.clone(),
            discount,
        )
    }

    /// `(Pv)(s, a) = Σ_{s'} P(s'|s,a) v(s')`.
    pub fn expected_next(&self, s: usize, a: usize, v: &[f64]) -> f64 {
        self.next_state_probs(s, a).iter().zip(v).map(|(p, x)| p * x).sum()
    }

    /// `r_{0,π}(s) = Σ_a π(a|s) r₀(s, a)`.
    pub fn policy_reward(&self, pi: &TabularPolicy) -> Vec<f64> {
        (0..self.num_states)
            .map(|s| (0..self.num_actions).map(|a| pi.prob(s, a) * self.reward(s, a)).sum())
            .collect()
    }

    /// State-to-state kernel `P_π(s, s') = Σ_a π(a|s) P(s'|s,a)`.
    pub fn policy_kernel(&self, pi: &TabularPolicy) -> DMatrix<f64> {
        let n = self.num_states;
        let mut kernel = DMatrix::zeros(n, n);
        for s in 0..n {
            for a in 0..self.num_actions {
                let p_a = pi.prob(s, a);
                if p_a == 0.0 {
                    continue;
                }
                for (sn, p) in self.next_state_probs(s, a).iter().enumerate() {
                    kernel[(s, sn)] += p_a * p;
                }
            }
        }
        kernel
    }

    fn check_policy(&self, pi: &TabularPolicy) -> Result<()> {
        if pi.num_states != self.num_states || pi.num_actions != self.num_actions {
            return Err(Error::DimensionMismatch {
                expected: self.num_states * self.num_actions,
                got: pi.num_states * pi.num_actions,
            });
        }
        Ok(())
    }
}

fn random_simplex<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = raw.iter().sum();
    let mut out: Vec<f64> = raw.iter().map(|x| x / total).collect();
    // Push the rounding residue into the largest entry so rows sum to 1 within 1e-12.
    let residue = 1.0 - out.iter().sum::<f64>();
    let argmax = out
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    out[argmax] += residue;
    out
}

/// Tabular policy `π(a|s)` stored as a row-major `S × A` table.
///
/// As a [`Policy`] over feature vectors it reads states as one-hot
/// encodings (see [`one_hot`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != num_states * num_actions {
            return Err(Error::DimensionMismatch {
                expected: num_states * num_actions,
                got: probs.len(),
            });
        }
        for (s, row) in probs.chunks(num_actions).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidMdp(format!("policy row {s} is not a distribution")));
            }
        }
        Ok(Self {
            num_states,
            num_actions,
            probs,
        })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            num_actions,
            probs: vec![1.0 / num_actions as f64; num_states * num_actions],
        }
    }

    /// Random policy with every probability at least `floor`.
    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        num_states: usize,
        num_actions: usize,
        floor: f64,
    ) -> Self {
        assert!(floor * num_actions as f64 <= 1.0, "floor too large for the action count");
        let mut probs = Vec::with_capacity(num_states * num_actions);
        for _ in 0..num_states {
            let row = random_simplex(rng, num_actions);
            let scale = 1.0 - floor * num_actions as f64;
            probs.extend(row.iter().map(|p| floor + scale * p));
        }
        Self {
            num_states,
            num_actions,
            probs,
        }
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.num_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }
}

impl Policy for TabularPolicy {
    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn action_probs(&self, state: &[f64]) -> Vec<f64> {
        self.row(state_index(state)).to_vec()
    }
}

/// One-hot feature encoding of tabular state `s`.
pub fn one_hot(s: usize, num_states: usize) -> Vec<f64> {
    let mut v = vec![0.0; num_states];
    v[s] = 1.0;
    v
}

/// Inverse of [`one_hot`]: index of the largest coordinate.
pub fn state_index(features: &[f64]) -> usize {
    features
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// `𝒯_π v = r_{0,π} + γ P_π v`, computed directly from the tensors.
pub fn bellman_apply(mdp: &TabularMdp, pi: &TabularPolicy, v: &[f64]) -> Result<Vec<f64>> {
    mdp.check_policy(pi)?;
    if v.len() != mdp.num_states {
        return Err(Error::DimensionMismatch {
            expected: mdp.num_states,
            got: v.len(),
        });
    }
    let out = (0..mdp.num_states)
        .map(|s| {
            (0..mdp.num_actions)
                .map(|a| pi.prob(s, a) * (mdp.reward(s, a) + mdp.discount * mdp.expected_next(s, a, v)))
                .sum()
        })
        .collect();
    Ok(out)
}

/// Solves `(I − γ P_π) v = r_{0,π}` by dense LU.
pub fn tabular_value_solve(mdp: &TabularMdp, pi: &TabularPolicy) -> Result<Vec<f64>> {
    mdp.check_policy(pi)?;
    let n = mdp.num_states;
    let system = DMatrix::<f64>::identity(n, n) - mdp.policy_kernel(pi) * mdp.discount;
    let rhs = DVector::from_vec(mdp.policy_reward(pi));
    let solution = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SolverFailure("singular (I - γP_π)".into()))?;
    let v: Vec<f64> = solution.iter().copied().collect();
    let residual = sup_distance(&bellman_apply(mdp, pi, &v)?, &v);
    let scale = 1.0_f64.max(v.iter().fold(0.0_f64, |m, x| m.max(x.abs())));
    if !residual.is_finite() || residual > 1e-8 * scale {
        return Err(Error::SolverFailure(format!("fixed-point residual {residual:.3e}")));
    }
    Ok(v)
}

/// Power iteration on `μ ← μ K` from the uniform vector.
///
/// Returns `None` when the L1 change does not drop below `tol` within
/// `max_iter` steps (periodic or otherwise non-mixing kernels).
pub fn stationary_distribution(kernel: &DMatrix<f64>, tol: f64, max_iter: usize) -> Option<Vec<f64>> {
    let n = kernel.nrows();
    if n == 0 || kernel.ncols() != n {
        return None;
    }
    let transpose = kernel.transpose();
    let mut mu = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..max_iter {
        let mut next = &transpose * &mu;
        let total: f64 = next.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return None;
        }
        next /= total;
        let change: f64 = next.iter().zip(mu.iter()).map(|(a, b)| (a - b).abs()).sum();
        mu = next;
        if change < tol {
            return Some(mu.iter().copied().collect());
        }
    }
    None
}

/// Default tolerance and iteration cap for stationary measures.
pub const STATIONARY_TOL: f64 = 1e-12;
pub const STATIONARY_MAX_ITER: usize = 10_000;

/// `‖h‖_{2,μ}`.
pub fn weighted_l2(h: &[f64], mu: &[f64]) -> f64 {
    h.iter().zip(mu).map(|(x, m)| m * x * x).sum::<f64>().sqrt()
}

pub fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}
