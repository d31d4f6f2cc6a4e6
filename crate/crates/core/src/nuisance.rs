//! Nuisance functions for the doubly robust target: importance weights,
//! a reward model `r̂` and a next-value model `𝑃̂v`.
//!
//! Fitting functions only accept a [`TrainFold`], so models cannot be
//! fit on the calibration data by accident.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{importance_ratio, ratio_from_probs, Policy, Transition, TransitionDataset};
use crate::regress::{Features, FittedRegressor, PreparedRegressor, RegressorConfig, SoftmaxModel};
use crate::rng;

pub const DEFAULT_WEIGHT_CLIP: f64 = 50.0;
pub const BEHAVIOR_PROB_FLOOR: f64 = 1e-4;
pub const BEHAVIOR_GRAD_TOL: f64 = 1e-6;
pub const BEHAVIOR_MAX_EPOCHS: usize = 5000;

/// A state-value function on feature vectors.
pub trait ValueFn: Sync {
    fn value(&self, state: &[f64]) -> f64;
}

impl<F: Fn(&[f64]) -> f64 + Sync> ValueFn for F {
    fn value(&self, state: &[f64]) -> f64 {
        self(state)
    }
}

/// A function of `(state, action)`.
pub trait ActionValueFn: Send + Sync {
    fn eval(&self, state: &[f64], action: usize) -> f64;
}

impl<F: Fn(&[f64], usize) -> f64 + Send + Sync> ActionValueFn for F {
    fn eval(&self, state: &[f64], action: usize) -> f64 {
        self(state, action)
    }
}

/// Maps a value function `v` to an estimate of `(s, a) ↦ E[v(S′) | s, a]`.
pub trait NextValueModel: Send + Sync {
    fn fit(&self, v: &dyn ValueFn) -> Result<Box<dyn ActionValueFn>>;
}

/// Data used to fit nuisances and base models.
#[derive(Debug, Clone)]
pub struct TrainFold(TransitionDataset);

/// Data used only for calibration.
#[derive(Debug, Clone)]
pub struct CalibrationFold(TransitionDataset);

impl TrainFold {
    /// Tags `data` as training data. The caller vouches that it is
    /// independent of whatever will be calibrated on.
    pub fn new(data: TransitionDataset) -> Self {
        Self(data)
    }

    pub fn data(&self) -> &TransitionDataset {
        &self.0
    }
}

impl CalibrationFold {
    pub fn new(data: TransitionDataset) -> Self {
        Self(data)
    }

    pub fn data(&self) -> &TransitionDataset {
        &self.0
    }
}

/// Splits by episode id so that all transitions of one customer land in the
/// same fold. Transitions without an id are treated as their own episode.
///
/// A `train_fraction` of 0 returns the full dataset as both folds; the
/// resulting nuisances are not independent of the calibration data.
pub fn split_by_episode(
    data: &TransitionDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(TrainFold, CalibrationFold)> {
    if !(0.0..1.0).contains(&train_fraction) {
        return Err(Error::InvalidConfig(format!(
            "train_fraction {train_fraction} outside [0, 1)"
        )));
    }
    if train_fraction == 0.0 {
        return Ok((TrainFold(data.clone()), CalibrationFold(data.clone())));
    }
    let key = |i: usize, tr: &Transition| tr.episode.map_or((1, i as u64), |e| (0, e));
    let mut ids: Vec<(u8, u64)> = data.iter().enumerate().map(|(i, t)| key(i, t)).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::InvalidDataset("need at least two episodes to split".into()));
    }
    ids.shuffle(&mut rng::stream(seed, 0));
    let n_train = ((train_fraction * ids.len() as f64).round() as usize).clamp(1, ids.len() - 1);
    let train_ids: std::collections::HashSet<(u8, u64)> = ids[..n_train].iter().copied().collect();

    let mut index = 0;
    let train = data.filter(|t| {
        let k = key(index, t);
        index += 1;
        train_ids.contains(&k)
    });
    let mut index = 0;
    let cal = data.filter(|t| {
        let k = key(index, t);
        index += 1;
        !train_ids.contains(&k)
    });
    match (train, cal) {
        (Some(t), Some(c)) => Ok((TrainFold(t), CalibrationFold(c))),
        _ => Err(Error::InvalidDataset("split produced an empty fold".into())),
    }
}

/// `min(w, M_w)`.
pub fn clip_weights(w: f64, clip: f64) -> Result<f64> {
    if w < 0.0 {
        return Err(Error::NegativeWeight(w));
    }
    if !w.is_finite() {
        return Err(Error::NonFinite("importance weight"));
    }
    Ok(w.min(clip))
}

/// Multinomial logistic behavior model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedBehavior {
    model: SoftmaxModel,
    /// Actions never observed in the training fold.
    pub missing_actions: Vec<usize>,
    pub epochs: usize,
    pub grad_norm: f64,
}

impl FittedBehavior {
    pub fn is_degenerate(&self) -> bool {
        !self.missing_actions.is_empty()
    }
}

impl Policy for FittedBehavior {
    fn num_actions(&self) -> usize {
        self.model.classes()
    }

    fn action_probs(&self, state: &[f64]) -> Vec<f64> {
        let mut p = self.model.predict_proba(state);
        p.iter_mut().for_each(|q| *q = q.max(BEHAVIOR_PROB_FLOOR));
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|q| *q /= total);
        p
    }
}

fn state_features<'a>(data: &'a TransitionDataset, rows: impl Iterator<Item = &'a Transition>) -> Result<Features> {
    Features::from_rows(rows.map(|t| t.state.as_slice()), data.state_dim())
}

/// Fits `b̂(a|s)`. Unobserved actions are listed in
/// [`FittedBehavior::missing_actions`] rather than rejected.
pub fn fit_behavior_policy(train: &TrainFold) -> Result<FittedBehavior> {
    let data = train.data();
    let x = state_features(data, data.iter())?;
    let labels: Vec<usize> = data.iter().map(|t| t.action).collect();
    let mut seen = vec![false; data.num_actions()];
    labels.iter().for_each(|&a| seen[a] = true);
    let missing_actions = (0..seen.len()).filter(|&a| !seen[a]).collect();
    let (model, report) = SoftmaxModel::fit(&x, &labels, data.num_actions(), BEHAVIOR_GRAD_TOL, BEHAVIOR_MAX_EPOCHS)?;
    Ok(FittedBehavior {
        model,
        missing_actions,
        epochs: report.epochs,
        grad_norm: report.grad_norm,
    })
}

/// One regressor per action; empty strata fall back to a constant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerActionModel {
    pub per_action: Vec<FittedRegressor>,
    /// Outputs are clipped to `[-clip, clip]` when set.
    pub clip: Option<f64>,
}

impl ActionValueFn for PerActionModel {
    fn eval(&self, state: &[f64], action: usize) -> f64 {
        let y = self.per_action[action].predict(state);
        match self.clip {
            Some(m) => y.clamp(-m, m),
            None => y,
        }
    }
}

/// Training rows grouped by action, with the regression design prepared.
struct ActionStrata {
    rows: Vec<Vec<usize>>,
    fitters: Vec<Option<PreparedRegressor>>,
}

impl ActionStrata {
    fn new(data: &TransitionDataset, cfg: &RegressorConfig) -> Result<Self> {
        let mut rows = vec![Vec::new(); data.num_actions()];
        for (i, t) in data.iter().enumerate() {
            rows[t.action].push(i);
        }
        let transitions = data.transitions();
        let fitters = rows
            .iter()
            .map(|idx| {
                if idx.is_empty() {
                    Ok(None)
                } else {
                    let x = state_features(data, idx.iter().map(|&i| &transitions[i]))?;
                    PreparedRegressor::new(&x, cfg).map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rows, fitters })
    }

    /// Fits `ys` (indexed like the dataset) per action.
    fn fit(&self, ys: &[f64]) -> Result<Vec<FittedRegressor>> {
        let global = ys.iter().sum::<f64>() / ys.len().max(1) as f64;
        self.rows
            .iter()
            .zip(&self.fitters)
            .map(|(idx, fitter)| match fitter {
                Some(f) => f.fit(&idx.iter().map(|&i| ys[i]).collect::<Vec<_>>()),
                None => Ok(FittedRegressor::Constant { value: global }),
            })
            .collect()
    }
}

/// Per-action regression of `R` on state features.
pub fn fit_reward_model(train: &TrainFold, cfg: &RegressorConfig) -> Result<PerActionModel> {
    let data = train.data();
    if data.is_empty() {
        return Err(Error::Empty("training fold"));
    }
    let strata = ActionStrata::new(data, cfg)?;
    let rewards: Vec<f64> = data.iter().map(|t| t.reward).collect();
    Ok(PerActionModel {
        per_action: strata.fit(&rewards)?,
        clip: None,
    })
}

/// Regression-based `𝑃̂`: each call to [`NextValueModel::fit`] regresses
/// `v(S′)` (zero on terminal transitions) on state features per action,
/// clipping outputs to `1.5 · sup |v(S′)|` over the training fold.
pub struct RegressionNextValue {
    strata: ActionStrata,
    next_states: Vec<Vec<f64>>,
    done: Vec<bool>,
}

impl RegressionNextValue {
    pub fn fit_design(train: &TrainFold, cfg: &RegressorConfig) -> Result<Self> {
        let data = train.data();
        if data.is_empty() {
            return Err(Error::Empty("training fold"));
        }
        Ok(Self {
            strata: ActionStrata::new(data, cfg)?,
            next_states: data.iter().map(|t| t.next_state.clone()).collect(),
            done: data.iter().map(|t| t.done).collect(),
        })
    }

    pub fn fit_values(&self, v: &dyn ValueFn) -> Result<PerActionModel> {
        let ys: Vec<f64> = self
            .next_states
            .iter()
            .zip(&self.done)
            .map(|(s, &d)| if d { 0.0 } else { v.value(s) })
            .collect();
        if ys.iter().any(|y| !y.is_finite()) {
            return Err(Error::NonFinite("value at next state"));
        }
        let sup = ys.iter().fold(0.0_f64, |m, y| m.max(y.abs()));
        Ok(PerActionModel {
            per_action: self.strata.fit(&ys)?,
            clip: Some(1.5 * sup),
        })
    }
}

impl NextValueModel for RegressionNextValue {
    fn fit(&self, v: &dyn ValueFn) -> Result<Box<dyn ActionValueFn>> {
        Ok(Box::new(self.fit_values(v)?))
    }
}

pub fn fit_next_value_model(train: &TrainFold, cfg: &RegressorConfig) -> Result<RegressionNextValue> {
    RegressionNextValue::fit_design(train, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NuisanceMode {
    #[default]
    ExactWeights,
    EstimatedWeights,
    IwOnly,
}

pub type RatioFn = Arc<dyn Fn(&[f64], usize) -> f64 + Send + Sync>;

/// Where `ŵ_π(a|s)` comes from.
#[derive(Clone)]
pub enum WeightSource {
    /// `π(a|s) / bp(a)` from the behavior probabilities logged with the transition.
    Logged,
    /// `π(a|s) / b(a|s)` for a known or fitted behavior policy.
    Behavior(Arc<dyn Policy>),
    /// A ratio function used directly.
    Ratio(RatioFn),
}

impl std::fmt::Debug for WeightSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WeightSource::Logged => f.write_str("Logged"),
            WeightSource::Behavior(_) => f.write_str("Behavior(..)"),
            WeightSource::Ratio(_) => f.write_str("Ratio(..)"),
        }
    }
}

/// Fitted nuisances. Missing reward or next-value models act as zero.
#[derive(Clone)]
pub struct NuisanceModels {
    pub mode: NuisanceMode,
    pub weight_clip: f64,
    pub weights: WeightSource,
    pub reward: Option<Arc<dyn ActionValueFn>>,
    pub next_value: Option<Arc<dyn NextValueModel>>,
}

impl NuisanceModels {
    pub fn new(
        mode: NuisanceMode,
        weights: WeightSource,
        reward: Option<Arc<dyn ActionValueFn>>,
        next_value: Option<Arc<dyn NextValueModel>>,
    ) -> Self {
        let (reward, next_value) = if mode == NuisanceMode::IwOnly {
            (None, None)
        } else {
            (reward, next_value)
        };
        Self {
            mode,
            weight_clip: DEFAULT_WEIGHT_CLIP,
            weights,
            reward,
            next_value,
        }
    }

    pub fn iw_only(weights: WeightSource) -> Self {
        Self::new(NuisanceMode::IwOnly, weights, None, None)
    }

    pub fn with_clip(mut self, clip: f64) -> Self {
        self.weight_clip = clip;
        self
    }

    pub fn is_iw_only(&self) -> bool {
        self.mode == NuisanceMode::IwOnly
    }

    /// Clipped `ŵ_π(A|S)` for a logged transition.
    pub fn weight(&self, pi: &dyn Policy, tr: &Transition) -> Result<f64> {
        let raw = match &self.weights {
            WeightSource::Logged => {
                let bp = tr
                    .behavior_probs
                    .as_ref()
                    .ok_or_else(|| Error::InvalidDataset("transition lacks logged behavior probabilities".into()))?;
                ratio_from_probs(pi.action_probs(&tr.state)[tr.action], bp[tr.action], tr.action)?
            }
            WeightSource::Behavior(b) => importance_ratio(pi, b.as_ref(), &tr.state, tr.action)?,
            WeightSource::Ratio(f) => f(&tr.state, tr.action),
        };
        clip_weights(raw, self.weight_clip)
    }

    pub fn reward_at(&self, state: &[f64], action: usize) -> f64 {
        self.reward.as_ref().map_or(0.0, |r| r.eval(state, action))
    }

    /// `𝑃̂v`, or `None` when the model is absent (treated as zero).
    pub fn next_value_for(&self, v: &dyn ValueFn) -> Result<Option<Box<dyn ActionValueFn>>> {
        match &self.next_value {
            Some(m) => m.fit(v).map(Some),
            None => Ok(None),
        }
    }
}

impl std::fmt::Debug for NuisanceModels {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NuisanceModels")
            .field("mode", &self.mode)
            .field("weight_clip", &self.weight_clip)
            .field("weights", &self.weights)
            .field("reward", &self.reward.is_some())
            .field("next_value", &self.next_value.is_some())
            .finish()
    }
}

/// JSON section `nuisance`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NuisanceConfig {
    pub mode: NuisanceMode,
    pub weight_clip: f64,
    pub regressor: RegressorConfig,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        Self {
            mode: NuisanceMode::ExactWeights,
            weight_clip: DEFAULT_WEIGHT_CLIP,
            regressor: RegressorConfig::default(),
        }
    }
}

impl NuisanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.weight_clip > 0.0) {
            return Err(Error::InvalidConfig("nuisance.weight_clip must be positive".into()));
        }
        Ok(())
    }
}

/// Metadata from [`fit_nuisances`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NuisanceFitInfo {
    pub behavior_fitted: bool,
    pub missing_actions: Vec<usize>,
}

/// Fits every nuisance the mode needs on the training fold.
///
/// In `exact_weights` mode logged behavior probabilities are used and no
/// behavior model is fit; the same holds for `iw_only` when they are
/// present.
pub fn fit_nuisances(train: &TrainFold, cfg: &NuisanceConfig) -> Result<(NuisanceModels, NuisanceFitInfo)> {
    cfg.validate()?;
    let data = train.data();
    let mut info = NuisanceFitInfo::default();
    let logged = data.has_behavior_probs();
    let weights = match cfg.mode {
        NuisanceMode::ExactWeights if !logged => {
            return Err(Error::InvalidDataset(
                "exact_weights mode needs logged behavior probabilities".into(),
            ))
        }
        NuisanceMode::ExactWeights => WeightSource::Logged,
        NuisanceMode::IwOnly if logged => WeightSource::Logged,
        NuisanceMode::EstimatedWeights | NuisanceMode::IwOnly => {
            let b = fit_behavior_policy(train)?;
            info.behavior_fitted = true;
            info.missing_actions = b.missing_actions.clone();
            WeightSource::Behavior(Arc::new(b))
        }
    };
    let models = if cfg.mode == NuisanceMode::IwOnly {
        NuisanceModels::iw_only(weights)
    } else {
        let reward: Arc<dyn ActionValueFn> = Arc::new(fit_reward_model(train, &cfg.regressor)?);
        let next: Arc<dyn NextValueModel> = Arc::new(fit_next_value_model(train, &cfg.regressor)?);
        NuisanceModels::new(cfg.mode, weights, Some(reward), Some(next))
    };
    Ok((models.with_clip(cfg.weight_clip), info))
}

/// Counts transitions per episode id (transitions without one are skipped).
pub fn episode_sizes(data: &TransitionDataset) -> BTreeMap<u64, usize> {
    let mut out = BTreeMap::new();
    for t in data {
        if let Some(e) = t.episode {
            *out.entry(e).or_insert(0) += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{one_hot, TabularMdp, TabularPolicy};
    use crate::tabular::sample_transitions;
    use rand::Rng;

    fn dataset(rows: Vec<(Vec<f64>, usize, f64, Vec<f64>, bool)>, actions: usize) -> TransitionDataset {
        let dim = rows[0].0.len();
        let transitions = rows
            .into_iter()
            .enumerate()
            .map(|(i, (state, action, reward, next_state, done))| Transition {
                state,
                action,
                reward,
                next_state,
                done,
                behavior_probs: None,
                episode: Some(i as u64 / 3),
            })
            .collect();
        TransitionDataset::new(transitions, actions, dim, 0).unwrap()
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip_weights(3.0, 50.0).unwrap(), 3.0);
        assert_eq!(clip_weights(120.0, 50.0).unwrap(), 50.0);
        assert!(matches!(clip_weights(-1.0, 50.0), Err(Error::NegativeWeight(_))));
    }

    #[test]
    fn uniform_behavior_is_recovered() {
        let mut rng = rng::stream(11, 0);
        let rows = (0..50_000)
            .map(|_| {
                let s = vec![rng.random_range(-1.0..1.0), rng.random_range(0.0..3.0)];
                (s.clone(), rng.random_range(0..3), 0.0, s, false)
            })
            .collect();
        let train = TrainFold::new(dataset(rows, 3));
        let b = fit_behavior_policy(&train).unwrap();
        assert!(!b.is_degenerate());
        for _ in 0..100 {
            let s = [rng.random_range(-1.0..1.0), rng.random_range(0.0..3.0)];
            for p in b.action_probs(&s) {
                assert!((p - 1.0 / 3.0).abs() < 0.03, "{p}");
            }
        }
    }

    #[test]
    fn single_action_dataset_is_flagged() {
        let mut rng = rng::stream(12, 0);
        let rows = (0..500)
            .map(|_| {
                let s = vec![rng.random_range(-1.0..1.0)];
                (s.clone(), 1, 0.0, s, false)
            })
            .collect();
        let b = fit_behavior_policy(&TrainFold::new(dataset(rows, 3))).unwrap();
        assert_eq!(b.missing_actions, vec![0, 2]);
        assert!(b.action_probs(&[0.3])[1] > 0.99);
    }

    #[test]
    fn exact_mode_bypasses_behavior_model() {
        let mdp = TabularMdp::random(&mut rng::stream(1, 0), 4, 2, 0.9).unwrap();
        let b0 = TabularPolicy::random(&mut rng::stream(1, 1), 4, 2, 0.1);
        let rho = vec![0.25; 4];
        let data = sample_transitions(&mdp, &b0, &rho, 200, 3).unwrap();
        let (models, info) = fit_nuisances(&TrainFold::new(data.clone()), &NuisanceConfig::default()).unwrap();
        assert!(!info.behavior_fitted);
        let pi = TabularPolicy::random(&mut rng::stream(1, 2), 4, 2, 0.0);
        for tr in &data {
            let expected = pi.action_probs(&tr.state)[tr.action] / tr.behavior_probs.as_ref().unwrap()[tr.action];
            assert_eq!(models.weight(&pi, tr).unwrap(), expected.min(50.0));
        }
    }

    #[test]
    fn iw_only_drops_models() {
        let zero: Arc<dyn ActionValueFn> = Arc::new(|_: &[f64], _: usize| 5.0);
        let m = NuisanceModels::new(NuisanceMode::IwOnly, WeightSource::Logged, Some(zero), None);
        assert!(m.reward.is_none() && m.next_value.is_none());
        assert_eq!(m.reward_at(&[0.0], 0), 0.0);
    }

    #[test]
    fn reward_model_examples() {
        let mut rng = rng::stream(21, 0);
        // Constant reward; action 2 never observed.
        let rows = (0..300)
            .map(|_| {
                let s = vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
                (s.clone(), rng.random_range(0..2), 4.0, s, false)
            })
            .collect();
        let m = fit_reward_model(&TrainFold::new(dataset(rows, 3)), &RegressorConfig::default()).unwrap();
        for a in 0..3 {
            assert!((m.eval(&[0.7, -1.3], a) - 4.0).abs() < 1e-6);
        }

        let rows = (0..20_000)
            .map(|_| {
                let s = vec![rng.random_range(-1.0..1.0)];
                let noise: f64 = rng.random_range(-0.5..0.5);
                (s.clone(), 0, 2.0 * s[0] + noise, s, false)
            })
            .collect();
        let m = fit_reward_model(&TrainFold::new(dataset(rows, 1)), &RegressorConfig::default()).unwrap();
        let FittedRegressor::Linear(lin) = &m.per_action[0] else {
            panic!("expected a linear model")
        };
        assert!((lin.coef[0] - 2.0).abs() < 0.05, "{}", lin.coef[0]);
    }

    #[test]
    fn empty_stratum_uses_global_mean() {
        let rows = vec![
            (vec![0.0], 0, 1.0, vec![0.0], false),
            (vec![1.0], 0, 3.0, vec![1.0], false),
        ];
        let m = fit_reward_model(&TrainFold::new(dataset(rows, 2)), &RegressorConfig::default()).unwrap();
        assert_eq!(m.eval(&[0.5], 1), 2.0);
    }

    #[test]
    fn next_value_examples() {
        let mut rng = rng::stream(31, 0);
        let rows = (0..400)
            .map(|_| {
                let s = vec![rng.random_range(-1.0..1.0)];
                let sn = vec![rng.random_range(-1.0..1.0)];
                (s, rng.random_range(0..2), 0.0, sn, false)
            })
            .collect();
        let train = TrainFold::new(dataset(rows, 2));
        let model = fit_next_value_model(&train, &RegressorConfig::default()).unwrap();
        let zero = model.fit(&|_: &[f64]| 0.0).unwrap();
        let constant = model.fit(&|_: &[f64]| 7.0).unwrap();
        for s in [-0.9, 0.0, 0.8] {
            for a in 0..2 {
                assert_eq!(zero.eval(&[s], a), 0.0);
                assert!((constant.eval(&[s], a) - 7.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn next_value_matches_tabular_expectation() {
        let mdp = TabularMdp::random(&mut rng::stream(41, 0), 6, 2, 0.9).unwrap();
        let b0 = TabularPolicy::uniform(6, 2);
        let data = sample_transitions(&mdp, &b0, &[1.0 / 6.0; 6], 200_000, 4).unwrap();
        let model = fit_next_value_model(&TrainFold::new(data), &RegressorConfig::default()).unwrap();
        let values = [1.0, -2.0, 0.5, 3.0, 0.0, 2.0];
        let v = |s: &[f64]| values[crate::mdp::state_index(s)];
        let fitted = model.fit(&v).unwrap();
        for s in 0..6 {
            for a in 0..2 {
                let exact = mdp.expected_next(s, a, &values);
                let got = fitted.eval(&one_hot(s, 6), a);
                assert!((got - exact).abs() < 0.05, "s={s} a={a} {got} vs {exact}");
            }
        }
    }

    #[test]
    fn next_value_output_is_clipped() {
        let rows = vec![
            (vec![0.0], 0, 0.0, vec![0.0], false),
            (vec![1.0], 0, 0.0, vec![1.0], false),
            (vec![2.0], 0, 0.0, vec![2.0], false),
        ];
        let model = fit_next_value_model(&TrainFold::new(dataset(rows, 1)), &RegressorConfig::default()).unwrap();
        let fitted = model.fit(&|s: &[f64]| s[0]).unwrap();
        assert_eq!(fitted.eval(&[100.0], 0), 3.0);
    }

    #[test]
    fn split_keeps_episodes_together() {
        let crm = crate::crm::simulate_dataset(&crate::crm::CrmParams::default(), 200, 24, 3).unwrap();
        let (train, cal) = split_by_episode(&crm, 0.5, 9).unwrap();
        let a = episode_sizes(train.data());
        let b = episode_sizes(cal.data());
        assert!(a.keys().all(|k| !b.contains_key(k)));
        assert_eq!(train.data().len() + cal.data().len(), crm.len());
        assert_eq!(a.len() + b.len(), 200);
        assert_eq!(a.len(), 100);
        let (t0, c0) = split_by_episode(&crm, 0.0, 9).unwrap();
        assert_eq!(t0.data().len(), crm.len());
        assert_eq!(c0.data().len(), crm.len());
    }
}
