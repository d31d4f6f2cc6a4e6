//! Small regression toolkit backing the nuisance and base-value models:
//! standardized ridge regression, depth-1 gradient-boosted stumps and a
//! multinomial logistic classifier.
//!
//! Ridge and stump fitters come in "prepared" form: the feature-dependent
//! work (Gram factorization, per-feature sort orders) is done once so
//! refitting new targets on the same rows is cheap.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl Features {
    pub fn from_rows<'a>(rows: impl IntoIterator<Item = &'a [f64]>, cols: usize) -> Result<Self> {
        let mut data = Vec::new();
        let mut n = 0;
        for row in rows {
            if row.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
            n += 1;
        }
        Ok(Self { data, rows: n, cols })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RegressorKind {
    #[default]
    LinearRidge,
    BoostedStumps,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressorConfig {
    pub kind: RegressorKind,
    /// Ridge penalty is `ridge_lambda_per_n · n`.
    pub ridge_lambda_per_n: f64,
    pub rounds: usize,
    pub learning_rate: f64,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self {
            kind: RegressorKind::LinearRidge,
            ridge_lambda_per_n: 1e-3,
            rounds: 200,
            learning_rate: 0.1,
        }
    }
}

impl RegressorConfig {
    pub fn with_kind(kind: RegressorKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }
}

/// Affine predictor `intercept + coef · x` in the original feature scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub coef: Vec<f64>,
}

impl LinearModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub feature: usize,
    pub threshold: f64,
    pub left: f64,
    pub right: f64,
}

/// Additive ensemble of depth-1 trees; `x[feature] <= threshold` goes left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StumpEnsemble {
    pub init: f64,
    pub stumps: Vec<Stump>,
}

impl StumpEnsemble {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.init
            + self
                .stumps
                .iter()
                .map(|s| if x[s.feature] <= s.threshold { s.left } else { s.right })
                .sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedRegressor {
    Constant { value: f64 },
    Linear(LinearModel),
    Stumps(StumpEnsemble),
}

impl FittedRegressor {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            FittedRegressor::Constant { value } => *value,
            FittedRegressor::Linear(m) => m.predict(x),
            FittedRegressor::Stumps(m) => m.predict(x),
        }
    }
}

fn column_stats(x: &Features) -> (Vec<f64>, Vec<f64>) {
    let n = x.rows as f64;
    let mut mean = vec![0.0; x.cols];
    for i in 0..x.rows {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; x.cols];
    for i in 0..x.rows {
        for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    // Constant columns get scale 0 and drop out of the fit.
    let scale = var
        .iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            if sd > 1e-12 {
                1.0 / sd
            } else {
                0.0
            }
        })
        .collect();
    (mean, scale)
}

/// Ridge regression on standardized features with an unpenalized intercept.
#[derive(Debug, Clone)]
pub struct PreparedRidge {
    z: DMatrix<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl PreparedRidge {
    pub fn new(x: &Features, lambda_per_n: f64) -> Result<Self> {
        if x.rows == 0 {
            return Err(Error::Empty("ridge design"));
        }
        let (mean, scale) = column_stats(x);
        let z = DMatrix::from_fn(x.rows, x.cols, |i, j| (x.row(i)[j] - mean[j]) * scale[j]);
        let lambda = (lambda_per_n * x.rows as f64).max(1e-12);
        let gram = z.transpose() * &z + DMatrix::identity(x.cols, x.cols) * lambda;
        let chol = Cholesky::new(gram).ok_or_else(|| Error::SolverFailure("ridge Gram matrix".into()))?;
        Ok(Self { z, chol, mean, scale })
    }

    pub fn fit(&self, ys: &[f64]) -> Result<LinearModel> {
        if ys.len() != self.z.nrows() {
            return Err(Error::LengthMismatch {
                left: self.z.nrows(),
                right: ys.len(),
            });
        }
        let y_mean = ys.iter().sum::<f64>() / ys.len() as f64;
        let centered = DVector::from_iterator(ys.len(), ys.iter().map(|y| y - y_mean));
        let beta = self.chol.solve(&(self.z.transpose() * centered));
        let coef: Vec<f64> = beta.iter().zip(&self.scale).map(|(b, s)| b * s).collect();
        let intercept = y_mean - coef.iter().zip(&self.mean).map(|(c, m)| c * m).sum::<f64>();
        Ok(LinearModel { intercept, coef })
    }
}

/// Gradient-boosted depth-1 stumps under squared loss.
#[derive(Debug, Clone)]
pub struct PreparedStumps {
    x: Features,
    /// Per feature: row indices sorted by that feature's value.
    order: Vec<Vec<usize>>,
    rounds: usize,
    learning_rate: f64,
}

impl PreparedStumps {
    pub fn new(x: &Features, rounds: usize, learning_rate: f64) -> Result<Self> {
        if x.rows == 0 {
            return Err(Error::Empty("stump design"));
        }
        let order = (0..x.cols)
            .map(|j| {
                let mut idx: Vec<usize> = (0..x.rows).collect();
                idx.sort_by(|&a, &b| x.row(a)[j].total_cmp(&x.row(b)[j]));
                idx
            })
            .collect();
        Ok(Self {
            x: x.clone(),
            order,
            rounds,
            learning_rate,
        })
    }

    pub fn fit(&self, ys: &[f64]) -> Result<StumpEnsemble> {
        let n = self.x.rows;
        if ys.len() != n {
            return Err(Error::LengthMismatch { left: n, right: ys.len() });
        }
        let init = ys.iter().sum::<f64>() / n as f64;
        let mut pred = vec![init; n];
        let mut resid = vec![0.0; n];
        let mut stumps = Vec::with_capacity(self.rounds);
        for _ in 0..self.rounds {
            for i in 0..n {
                resid[i] = ys[i] - pred[i];
            }
            let total: f64 = resid.iter().sum();
            let mut best: Option<(f64, Stump)> = None;
            for (j, order) in self.order.iter().enumerate() {
                let mut left_sum = 0.0;
                for (k, &i) in order[..n - 1].iter().enumerate() {
                    left_sum += resid[i];
                    let here = self.x.row(i)[j];
                    let next = self.x.row(order[k + 1])[j];
                    if here == next {
                        continue;
                    }
                    let nl = (k + 1) as f64;
                    let nr = (n - k - 1) as f64;
                    let right_sum = total - left_sum;
                    let gain = left_sum * left_sum / nl + right_sum * right_sum / nr;
                    if best.as_ref().is_none_or(|(g, _)| gain > *g) {
                        best = Some((
                            gain,
                            Stump {
                                feature: j,
                                threshold: split_point(here, next),
                                left: left_sum / nl,
                                right: right_sum / nr,
                            },
                        ));
                    }
                }
            }
            let Some((_, mut stump)) = best else { break };
            stump.left *= self.learning_rate;
            stump.right *= self.learning_rate;
            for i in 0..n {
                pred[i] += if self.x.row(i)[stump.feature] <= stump.threshold {
                    stump.left
                } else {
                    stump.right
                };
            }
            stumps.push(stump);
        }
        Ok(StumpEnsemble { init, stumps })
    }
}

fn split_point(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid >= lo && mid < hi {
        mid
    } else {
        lo
    }
}

/// Either prepared fitter, chosen by [`RegressorConfig`].
#[derive(Debug, Clone)]
pub enum PreparedRegressor {
    Ridge(PreparedRidge),
    Stumps(PreparedStumps),
}

impl PreparedRegressor {
    pub fn new(x: &Features, cfg: &RegressorConfig) -> Result<Self> {
        Ok(match cfg.kind {
            RegressorKind::LinearRidge => Self::Ridge(PreparedRidge::new(x, cfg.ridge_lambda_per_n)?),
            RegressorKind::BoostedStumps => {
                Self::Stumps(PreparedStumps::new(x, cfg.rounds, cfg.learning_rate)?)
            }
        })
    }

    pub fn fit(&self, ys: &[f64]) -> Result<FittedRegressor> {
        if ys.iter().any(|y| !y.is_finite()) {
            return Err(Error::NonFinite("regression targets"));
        }
        Ok(match self {
            Self::Ridge(r) => FittedRegressor::Linear(r.fit(ys)?),
            Self::Stumps(s) => FittedRegressor::Stumps(s.fit(ys)?),
        })
    }
}

/// Multinomial logistic regression on standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxModel {
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// `classes × (cols + 1)`, intercept last.
    weights: Vec<f64>,
    classes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftmaxFitReport {
    pub epochs: usize,
    pub grad_norm: f64,
}

impl SoftmaxModel {
    /// Full-batch accelerated gradient descent on the mean log-loss, stopping
    /// when the gradient norm drops below `tol` or after `max_epochs`.
    pub fn fit(
        x: &Features,
        labels: &[usize],
        classes: usize,
        tol: f64,
        max_epochs: usize,
    ) -> Result<(Self, SoftmaxFitReport)> {
        let n = x.rows;
        if n == 0 {
            return Err(Error::Empty("classifier design"));
        }
        if labels.len() != n {
            return Err(Error::LengthMismatch { left: n, right: labels.len() });
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidDataset(format!("label {bad} out of range")));
        }
        let (mean, scale) = column_stats(x);
        let p = x.cols + 1;
        let mut z = Vec::with_capacity(n * p);
        for i in 0..n {
            let row = x.row(i);
            z.extend((0..p).map(|j| if j + 1 == p { 1.0 } else { (row[j] - mean[j]) * scale[j] }));
        }
        // Hessian of the mean log-loss is bounded by ½·λ_max(ZᵀZ/n).
        let zmat = DMatrix::from_row_slice(n, p, &z);
        let gram = zmat.transpose() * &zmat / n as f64;
        let lipschitz = 0.5 * gram.symmetric_eigenvalues().max().max(1e-12);
        let step = 1.0 / lipschitz;

        let mut w = vec![0.0; classes * p];
        let mut w_prev = w.clone();
        let mut grad = vec![0.0; classes * p];
        let mut probs = vec![0.0; classes];
        let mut momentum_t: f64 = 1.0;
        let mut report = SoftmaxFitReport {
            epochs: 0,
            grad_norm: f64::INFINITY,
        };
        let mut prev_loss = f64::INFINITY;
        for epoch in 0..max_epochs {
            // Nesterov look-ahead point.
            let t_next = (1.0 + (1.0 + 4.0 * momentum_t * momentum_t).sqrt()) / 2.0;
            let beta = (momentum_t - 1.0) / t_next;
            let look: Vec<f64> = w.iter().zip(&w_prev).map(|(a, b)| a + beta * (a - b)).collect();
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut loss = 0.0;
            for i in 0..n {
                let zi = &z[i * p..(i + 1) * p];
                softmax_into(&look, zi, classes, &mut probs);
                loss -= probs[labels[i]].max(1e-300).ln();
                for c in 0..classes {
                    let err = probs[c] - if labels[i] == c { 1.0 } else { 0.0 };
                    for (g, v) in grad[c * p..(c + 1) * p].iter_mut().zip(zi) {
                        *g += err * v;
                    }
                }
            }
            grad.iter_mut().for_each(|g| *g /= n as f64);
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            report = SoftmaxFitReport {
                epochs: epoch,
                grad_norm: norm,
            };
            if norm < tol {
                w = look;
                break;
            }
            w_prev = std::mem::replace(
                &mut w,
                look.iter().zip(&grad).map(|(a, g)| a - step * g).collect(),
            );
            // Adaptive restart keeps the momentum from overshooting.
            if loss > prev_loss {
                momentum_t = 1.0;
            } else {
                momentum_t = t_next;
            }
            prev_loss = loss;
        }
        Ok((
            Self {
                mean,
                scale,
                weights: w,
                classes,
            },
            report,
        ))
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let p = self.mean.len() + 1;
        let z: Vec<f64> = (0..p)
            .map(|j| if j + 1 == p { 1.0 } else { (x[j] - self.mean[j]) * self.scale[j] })
            .collect();
        let mut out = vec![0.0; self.classes];
        softmax_into(&self.weights, &z, self.classes, &mut out);
        out
    }
}

fn softmax_into(w: &[f64], z: &[f64], classes: usize, out: &mut [f64]) {
    let p = z.len();
    let mut max = f64::NEG_INFINITY;
    for c in 0..classes {
        let logit: f64 = w[c * p..(c + 1) * p].iter().zip(z).map(|(a, b)| a * b).sum();
        out[c] = logit;
        max = max.max(logit);
    }
    let mut total = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn design(rows: &[Vec<f64>]) -> Features {
        Features::from_rows(rows.iter().map(|r| r.as_slice()), rows[0].len()).unwrap()
    }

    #[test]
    fn ridge_recovers_constant_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<Vec<f64>> = (0..500).map(|_| vec![rng.random(), rng.random()]).collect();
        let ridge = PreparedRidge::new(&design(&rows), 1e-3).unwrap();
        let m = ridge.fit(&vec![4.2; 500]).unwrap();
        for r in &rows {
            assert!((m.predict(r) - 4.2).abs() < 1e-9);
        }
    }

    #[test]
    fn ridge_recovers_linear_slope() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows: Vec<Vec<f64>> = (0..20_000).map(|_| vec![rng.random_range(-1.0..1.0), rng.random()]).collect();
        let ys: Vec<f64> = rows.iter().map(|r| 2.0 * r[0] + rng.random_range(-0.5..0.5)).collect();
        let m = PreparedRidge::new(&design(&rows), 1e-3).unwrap().fit(&ys).unwrap();
        assert!((m.coef[0] - 2.0).abs() < 0.05, "{}", m.coef[0]);
    }

    #[test]
    fn stumps_fit_a_step() {
        let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64, 0.0]).collect();
        let ys: Vec<f64> = (0..100).map(|i| if i < 40 { 1.0 } else { 3.0 }).collect();
        let m = PreparedStumps::new(&design(&rows), 200, 0.1).unwrap().fit(&ys).unwrap();
        assert!((m.predict(&[10.0, 0.0]) - 1.0).abs() < 1e-6);
        assert!((m.predict(&[70.0, 0.0]) - 3.0).abs() < 1e-6);
        assert!(m.stumps.iter().all(|s| s.feature == 0 && s.threshold == 39.5));
    }

    #[test]
    fn stumps_on_constant_features_predict_mean() {
        let rows = vec![vec![1.0]; 10];
        let ys: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let m = PreparedStumps::new(&design(&rows), 50, 0.1).unwrap().fit(&ys).unwrap();
        assert!(m.stumps.is_empty());
        assert!((m.predict(&[1.0]) - 4.5).abs() < 1e-12);
    }

    #[test]
    fn softmax_learns_uniform_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..6000).map(|_| vec![rng.random(), rng.random()]).collect();
        let labels: Vec<usize> = (0..6000).map(|_| rng.random_range(0..3)).collect();
        let (m, report) = SoftmaxModel::fit(&design(&rows), &labels, 3, 1e-6, 5000).unwrap();
        assert!(report.grad_norm < 1e-6);
        let p = m.predict_proba(&[0.5, 0.5]);
        assert!(p.iter().all(|q| (q - 1.0 / 3.0).abs() < 0.05), "{p:?}");
    }
}
