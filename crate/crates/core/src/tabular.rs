//! Adapters that expose a [`TabularMdp`] through the generic interfaces:
//! dataset sampling with one-hot features, exact nuisance models and a
//! rollout environment.

use rand::Rng;
use rayon::prelude::*;

use crate::crm::{sample_action, Environment};
use crate::error::{Error, Result};
use crate::mdp::{one_hot, state_index, TabularMdp, TabularPolicy, Transition, TransitionDataset};
use crate::nuisance::{ActionValueFn, NextValueModel, ValueFn};
use crate::rng;

const SAMPLE_CHUNK: usize = 4096;

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    sample_action(probs, rng)
}

/// Draws `n` independent transitions `S ~ ρ, A ~ b₀(·|S), S′ ~ P(·|S, A)`
/// with one-hot state features, logged behavior probabilities and reward
/// `r(S, A)`. Chunk `c` uses RNG stream `(seed, c)`.
pub fn sample_transitions(
    mdp: &TabularMdp,
    b0: &TabularPolicy,
    rho: &[f64],
    n: usize,
    seed: u64,
) -> Result<TransitionDataset> {
    let ns = mdp.num_states();
    if rho.len() != ns || b0.num_states() != ns {
        return Err(Error::DimensionMismatch {
            expected: ns,
            got: if rho.len() != ns { rho.len() } else { b0.num_states() },
        });
    }
    let chunks = n.div_ceil(SAMPLE_CHUNK);
    let transitions: Vec<Transition> = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = rng::stream(seed, c as u64);
            let len = SAMPLE_CHUNK.min(n - c * SAMPLE_CHUNK);
            (0..len)
                .map(|j| {
                    let s = sample_index(rho, &mut rng);
                    let a = sample_index(b0.row(s), &mut rng);
                    let sn = sample_index(mdp.next_state_probs(s, a), &mut rng);
                    Transition {
                        state: one_hot(s, ns),
                        action: a,
                        reward: mdp.reward(s, a),
                        next_state: one_hot(sn, ns),
                        done: false,
                        behavior_probs: Some(b0.row(s).to_vec()),
                        episode: Some((c * SAMPLE_CHUNK + j) as u64),
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect();
    TransitionDataset::new(transitions, mdp.num_actions(), ns, seed)
}

/// Value function given by a per-state table, read through one-hot features.
#[derive(Debug, Clone)]
pub struct TableValue(pub Vec<f64>);

impl ValueFn for TableValue {
    fn value(&self, state: &[f64]) -> f64 {
        self.0[state_index(state)]
    }
}

/// Exact `r(s, a)`.
#[derive(Debug, Clone)]
pub struct ExactReward(pub TabularMdp);

impl ActionValueFn for ExactReward {
    fn eval(&self, state: &[f64], action: usize) -> f64 {
        self.0.reward(state_index(state), action)
    }
}

/// Exact `P v`.
#[derive(Debug, Clone)]
pub struct ExactNextValue(pub TabularMdp);

struct ExpectedNext {
    mdp: TabularMdp,
    values: Vec<f64>,
}

impl ActionValueFn for ExpectedNext {
    fn eval(&self, state: &[f64], action: usize) -> f64 {
        self.mdp.expected_next(state_index(state), action, &self.values)
    }
}

impl NextValueModel for ExactNextValue {
    fn fit(&self, v: &dyn ValueFn) -> Result<Box<dyn ActionValueFn>> {
        let ns = self.0.num_states();
        let values = (0..ns).map(|s| v.value(&one_hot(s, ns))).collect();
        Ok(Box::new(ExpectedNext {
            mdp: self.0.clone(),
            values,
        }))
    }
}

/// Rollout environment over state indices.
#[derive(Debug, Clone)]
pub struct TabularEnv(pub TabularMdp);

impl Environment for TabularEnv {
    type State = usize;

    fn step<R: Rng + ?Sized>(&self, state: &usize, action: usize, rng: &mut R) -> (usize, f64) {
        let next = sample_index(self.0.next_state_probs(*state, action), rng);
        (next, self.0.reward(*state, action))
    }

    fn is_absorbing(&self, _state: &usize) -> bool {
        false
    }

    fn features(&self, state: &usize) -> Vec<f64> {
        one_hot(*state, self.0.num_states())
    }

    fn absorption_horizon(&self, _state: &usize) -> Option<usize> {
        None
    }
}
