//! L2-regularized logistic regression.
//!
//! Minimizes `½‖w‖² + C Σ sᵢ log(1 + exp(−yᵢ(w·xᵢ + b)))` with a truncated
//! Newton method (conjugate gradient on Hessian-vector products, then a
//! backtracking line search). The intercept is unregularized unless
//! [`TrainOptions::regularize_bias`] is set.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{fit_scaler, ScalerParams};

pub const DEFAULT_COST_GRID: [f64; 7] = [0.01, 0.05, 0.1, 0.55, 1.0, 5.0, 10.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub cost_grid: Vec<f64>,
    pub folds: usize,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub seed: u64,
    pub regularize_bias: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            cost_grid: DEFAULT_COST_GRID.to_vec(),
            folds: 5,
            tolerance: 1e-8,
            max_iterations: 200,
            seed: 1,
            regularize_bias: false,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::config("folds must be at least 2"));
        }
        if self.cost_grid.is_empty() {
            return Err(Error::config("cost grid is empty"));
        }
        if let Some(c) = self.cost_grid.iter().find(|c| !(c.is_finite() && **c > 0.0)) {
            return Err(Error::config(format!("cost {c} is not a positive number")));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::config("tolerance must be positive"));
        }
        Ok(())
    }
}

/// Numerically stable `log(1 + exp(-m))`.
fn log1p_exp_neg(m: f64) -> f64 {
    if m > 0.0 {
        (-m).exp().ln_1p()
    } else {
        -m + m.exp().ln_1p()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// The training objective over parameters `θ = [w₁..w_d, b]`.
pub struct Objective<'a> {
    x: &'a [Vec<f64>],
    y: Vec<f64>,
    weights: Vec<f64>,
    c: f64,
    regularize_bias: bool,
    dim: usize,
}

impl<'a> Objective<'a> {
    /// `labels[i]` is true for the positive (Good) class. `sample_weights`
    /// defaults to all ones.
    pub fn new(
        x: &'a [Vec<f64>],
        labels: &[bool],
        sample_weights: Option<&[f64]>,
        c: f64,
        regularize_bias: bool,
    ) -> Result<Self> {
        if x.len() != labels.len() {
            return Err(Error::config(format!("{} rows but {} labels", x.len(), labels.len())));
        }
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::config(format!("cost {c} is not a positive number")));
        }
        let dim = x.first().map_or(0, Vec::len);
        if let Some(r) = x.iter().find(|r| r.len() != dim) {
            return Err(Error::config(format!("ragged matrix: row of length {} vs {dim}", r.len())));
        }
        if x.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite feature value".into()));
        }
        let weights = match sample_weights {
            Some(s) if s.len() != x.len() => {
                return Err(Error::config("sample weight count does not match rows"))
            }
            Some(s) => s.to_vec(),
            None => vec![1.0; x.len()],
        };
        Ok(Self {
            x,
            y: labels.iter().map(|&g| if g { 1.0 } else { -1.0 }).collect(),
            weights,
            c,
            regularize_bias,
            dim,
        })
    }

    /// Number of parameters (features plus intercept).
    pub fn len(&self) -> usize {
        self.dim + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn margin(&self, theta: &[f64], i: usize) -> f64 {
        dot(&theta[..self.dim], &self.x[i]) + theta[self.dim]
    }

    fn reg(&self, theta: &[f64]) -> f64 {
        let w = &theta[..self.dim];
        let mut r = 0.5 * dot(w, w);
        if self.regularize_bias {
            r += 0.5 * theta[self.dim] * theta[self.dim];
        }
        r
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        let loss: f64 = (0..self.x.len())
            .map(|i| self.weights[i] * log1p_exp_neg(self.y[i] * self.margin(theta, i)))
            .sum();
        self.reg(theta) + self.c * loss
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = theta.to_vec();
        if !self.regularize_bias {
            g[self.dim] = 0.0;
        }
        for i in 0..self.x.len() {
            let yi = self.y[i];
            let coef = self.c * self.weights[i] * (sigmoid(yi * self.margin(theta, i)) - 1.0) * yi;
            for (gj, xj) in g.iter_mut().zip(&self.x[i]) {
                *gj += coef * xj;
            }
            g[self.dim] += coef;
        }
        g
    }

    /// Curvature terms `C sᵢ σ(zᵢ)(1 − σ(zᵢ))` at `theta`.
    fn curvature(&self, theta: &[f64]) -> Vec<f64> {
        (0..self.x.len())
            .map(|i| {
                let p = sigmoid(self.margin(theta, i));
                self.c * self.weights[i] * p * (1.0 - p)
            })
            .collect()
    }

    fn hess_vec(&self, d: &[f64], v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        if !self.regularize_bias {
            out[self.dim] = 0.0;
        }
        for (i, &di) in d.iter().enumerate() {
            let s = di * (dot(&v[..self.dim], &self.x[i]) + v[self.dim]);
            for (oj, xj) in out.iter_mut().zip(&self.x[i]) {
                *oj += s * xj;
            }
            out[self.dim] += s;
        }
        out
    }
}

/// Optimizer trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    pub theta: Vec<f64>,
    /// Objective value before the first step and after each iteration.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Solves `H d = −g` approximately by conjugate gradient.
fn conjugate_gradient(obj: &Objective<'_>, curv: &[f64], g: &[f64]) -> Vec<f64> {
    let n = g.len();
    let mut d = vec![0.0; n];
    let mut r: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    // forcing term min(0.1, sqrt‖g‖) gives superlinear convergence
    let gn = norm(g);
    let stop = gn.sqrt().min(0.1) * gn;
    for _ in 0..n.max(10) {
        if rr.sqrt() <= stop {
            break;
        }
        let hp = obj.hess_vec(curv, &p);
        let php = dot(&p, &hp);
        if php <= 1e-300 {
            break;
        }
        let alpha = rr / php;
        for j in 0..n {
            d[j] += alpha * p[j];
            r[j] -= alpha * hp[j];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for j in 0..n {
            p[j] = r[j] + beta * p[j];
        }
    }
    if d.iter().all(|v| *v == 0.0) {
        // flat curvature along the gradient: fall back to steepest descent
        d = g.iter().map(|v| -v).collect();
    }
    d
}

/// Truncated Newton with Armijo backtracking. Stops once
/// `‖g‖ ≤ tolerance · max(1, ‖g₀‖)` or after `max_iterations`.
pub fn minimize(obj: &Objective<'_>, tolerance: f64, max_iterations: usize) -> Fit {
    let mut theta = vec![0.0; obj.len()];
    let mut f = obj.value(&theta);
    let mut g = obj.gradient(&theta);
    let threshold = tolerance * norm(&g).max(1.0);
    let mut history = vec![f];
    let mut iterations = 0;
    let mut converged = norm(&g) <= threshold;
    while !converged && iterations < max_iterations {
        let curv = obj.curvature(&theta);
        let mut d = conjugate_gradient(obj, &curv, &g);
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = theta.iter().zip(&d).map(|(t, di)| t + step * di).collect();
            let fc = obj.value(&cand);
            if fc <= f + 1e-4 * step * slope {
                accepted = Some((cand, fc));
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        let Some((cand, fc)) = accepted.filter(|(_, fc)| *fc < f) else {
            // no decrease representable in floating point: we are at the optimum
            history.push(f);
            break;
        };
        theta = cand;
        f = fc;
        g = obj.gradient(&theta);
        history.push(f);
        converged = norm(&g) <= threshold;
    }
    Fit {
        theta,
        objective_history: history,
        iterations,
        converged,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub schema_hash: String,
    pub cost_c: f64,
    pub bias: f64,
    pub weights: Vec<f64>,
    /// Scaler fitted on the training rows; absent when trained on
    /// already-scaled data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaler: Option<ScalerParams>,
}

fn check_classes(labels: &[bool]) -> Result<()> {
    let pos = labels.iter().filter(|&&g| g).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::DegenerateData(
            "training labels contain a single class".into(),
        ));
    }
    Ok(())
}

/// Fits weights on scaled rows `x` with binary labels (true = Good).
pub fn train(x: &[Vec<f64>], labels: &[bool], c: f64, opts: &TrainOptions) -> Result<LogRegModel> {
    train_weighted(x, labels, None, c, opts)
}

pub fn train_weighted(
    x: &[Vec<f64>],
    labels: &[bool],
    sample_weights: Option<&[f64]>,
    c: f64,
    opts: &TrainOptions,
) -> Result<LogRegModel> {
    check_classes(labels)?;
    let obj = Objective::new(x, labels, sample_weights, c, opts.regularize_bias)?;
    let fit = minimize(&obj, opts.tolerance, opts.max_iterations);
    if fit.theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("optimizer produced non-finite weights".into()));
    }
    if !fit.converged && fit.iterations >= opts.max_iterations {
        log::warn!(
            "logistic regression stopped after {} iterations without reaching tolerance",
            fit.iterations
        );
    }
    let d = obj.dim;
    Ok(LogRegModel {
        schema_hash: String::new(),
        cost_c: c,
        bias: fit.theta[d],
        weights: fit.theta[..d].to_vec(),
        scaler: None,
    })
}

/// Fits a scaler on raw rows, then trains on the scaled rows.
pub fn fit_scaled(
    raw: &[Vec<f64>],
    labels: &[bool],
    c: f64,
    opts: &TrainOptions,
    schema_hash: &str,
) -> Result<LogRegModel> {
    let scaler = fit_scaler(raw);
    let x: Vec<Vec<f64>> = raw.iter().map(|r| scaler.apply(r)).collect();
    let mut m = train(&x, labels, c, opts)?;
    m.scaler = Some(scaler);
    m.schema_hash = schema_hash.to_string();
    Ok(m)
}

impl LogRegModel {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// `σ(w·x + b)` for an already-scaled row.
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.weights.len(), "feature dimension mismatch");
        sigmoid(dot(&self.weights, x) + self.bias)
    }

    /// Applies the stored scaler (if any) and predicts.
    pub fn predict_raw(&self, raw: &[f64]) -> f64 {
        match &self.scaler {
            Some(s) => self.predict_proba(&s.apply(raw)),
            None => self.predict_proba(raw),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: LogRegModel = serde_json::from_str(text)?;
        if let Some(s) = &m.scaler {
            if s.min.len() != m.weights.len() || s.max.len() != m.weights.len() {
                return Err(Error::format("scaler and weight dimensions differ"));
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Threshold on the Good probability used for hard predictions.
pub const DECISION_THRESHOLD: f64 = 0.5;

pub fn predict_good(p: f64) -> bool {
    p > DECISION_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub c: f64,
    pub accuracy: f64,
    pub fold_accuracy: Vec<f64>,
    /// Folds whose training or held-out part had a single class.
    pub degenerate_folds: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub best_c: f64,
    pub table: Vec<CvRow>,
}

/// Fold index ranges after one seeded shuffle of `0..n`.
pub fn fold_indices(n: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    (0..folds)
        .map(|f| order[f * n / folds..(f + 1) * n / folds].to_vec())
        .collect()
}

/// Picks the cost with the best mean k-fold accuracy; ties go to the
/// smaller cost.
pub fn cross_validate_c(x: &[Vec<f64>], labels: &[bool], opts: &TrainOptions) -> Result<CvResult> {
    opts.validate()?;
    if x.len() != labels.len() {
        return Err(Error::config(format!("{} rows but {} labels", x.len(), labels.len())));
    }
    if labels.len() < opts.folds {
        return Err(Error::config(format!(
            "{} rows cannot be split into {} folds",
            labels.len(),
            opts.folds
        )));
    }
    let folds = fold_indices(x.len(), opts.folds, opts.seed);
    let mut grid = opts.cost_grid.clone();
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|ci| (0..folds.len()).map(move |fi| (ci, fi)))
        .collect();
    let scored: Vec<Result<(f64, bool)>> = jobs
        .par_iter()
        .map(|&(ci, fi)| {
            let held = &folds[fi];
            let mut in_fold = vec![false; x.len()];
            for &i in held {
                in_fold[i] = true;
            }
            let (tx, ty): (Vec<Vec<f64>>, Vec<bool>) = (0..x.len())
                .filter(|&i| !in_fold[i])
                .map(|i| (x[i].clone(), labels[i]))
                .unzip();
            let held_single = held.iter().all(|&i| labels[i]) || held.iter().all(|&i| !labels[i]);
            match train(&tx, &ty, grid[ci], opts) {
                Ok(m) => Ok((accuracy_of(held, labels, |i| predict_good(m.predict_proba(&x[i]))), held_single)),
                Err(Error::DegenerateData(_)) => {
                    let only = ty[0];
                    Ok((accuracy_of(held, labels, |_| only), true))
                }
                Err(e) => Err(e),
            }
        })
        .collect();

    let mut table = Vec::with_capacity(grid.len());
    let mut it = scored.into_iter();
    for &c in &grid {
        let mut fold_accuracy = Vec::new();
        let mut degenerate_folds = Vec::new();
        for fi in 0..folds.len() {
            let (acc, degenerate) = it.next().expect("one result per job")?;
            fold_accuracy.push(acc);
            if degenerate {
                degenerate_folds.push(fi);
            }
        }
        let accuracy = fold_accuracy.iter().sum::<f64>() / fold_accuracy.len() as f64;
        table.push(CvRow {
            c,
            accuracy,
            fold_accuracy,
            degenerate_folds,
        });
    }
    let mut best = &table[0];
    for row in &table[1..] {
        if row.accuracy > best.accuracy {
            best = row;
        }
    }
    Ok(CvResult {
        best_c: best.c,
        table,
    })
}

fn accuracy_of(held: &[usize], labels: &[bool], predict: impl Fn(usize) -> bool) -> f64 {
    let hits = held.iter().filter(|&&i| predict(i) == labels[i]).count();
    hits as f64 / held.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_1d_gives_positive_weight() {
        let x = vec![vec![-1.0], vec![1.0]];
        let m = train(&x, &[false, true], 1.0, &TrainOptions::default()).unwrap();
        assert!(m.weights[0] > 0.0);
        assert!(m.predict_proba(&[1.0]) > 0.5);
    }

    #[test]
    fn tiny_cost_shrinks_weights() {
        let x = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 0.0]];
        let y = [true, false, true, false];
        let m = train(&x, &y, 1e-9, &TrainOptions::default()).unwrap();
        assert!(m.weights.iter().all(|w| w.abs() < 1e-8));
        // balanced classes: the free intercept also sits at zero
        assert!((m.predict_proba(&[0.3, 0.7]) - 0.5).abs() < 1e-8);
    }

    #[test]
    fn single_class_is_degenerate() {
        let x = vec![vec![0.0], vec![1.0]];
        assert!(matches!(
            train(&x, &[true, true], 1.0, &TrainOptions::default()),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn predict_examples() {
        let zero = LogRegModel {
            schema_hash: String::new(),
            cost_c: 1.0,
            bias: 0.0,
            weights: vec![0.0, 0.0],
            scaler: None,
        };
        assert_eq!(zero.predict_proba(&[3.0, -7.0]), 0.5);
        let one = LogRegModel {
            weights: vec![1.0],
            ..zero.clone()
        };
        assert!((one.predict_proba(&[0.5]) - 1.0 / (1.0 + (-0.5f64).exp())).abs() < 1e-15);
        assert!((one.predict_proba(&[0.5]) - 0.62246).abs() < 1e-5);
        assert!(one.predict_proba(&[800.0]) == 1.0);
        assert!(one.predict_proba(&[-800.0]) >= 0.0);
    }

    #[test]
    #[should_panic(expected = "dimension mismatch")]
    fn predict_dimension_mismatch_panics() {
        let m = LogRegModel {
            schema_hash: String::new(),
            cost_c: 1.0,
            bias: 0.0,
            weights: vec![0.0],
            scaler: None,
        };
        m.predict_proba(&[1.0, 2.0]);
    }

    #[test]
    fn cv_single_cost_and_ties() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 20.0]).collect();
        let y: Vec<bool> = (0..20).map(|i| i >= 10).collect();
        let opts = TrainOptions {
            cost_grid: vec![0.55],
            ..Default::default()
        };
        let r = cross_validate_c(&x, &y, &opts).unwrap();
        assert_eq!(r.best_c, 0.55);
        assert_eq!(r.table.len(), 1);
        // every cost scores identically on this trivially separable set once
        // the weights are large enough; identical rows must pick the smaller
        let opts = TrainOptions {
            cost_grid: vec![1e4, 1e3],
            ..Default::default()
        };
        let r = cross_validate_c(&x, &y, &opts).unwrap();
        assert_eq!(r.table[0].accuracy, r.table[1].accuracy);
        assert_eq!(r.best_c, 1e3);
    }

    #[test]
    fn model_json_round_trip_is_exact() {
        let x = vec![vec![0.1, 2.0], vec![0.7, -1.0], vec![0.3, 0.3], vec![0.9, 0.0]];
        let y = [false, true, false, true];
        let m = fit_scaled(&x, &y, 0.55, &TrainOptions::default(), "abc").unwrap();
        let back = LogRegModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        for r in &x {
            assert_eq!(back.predict_raw(r).to_bits(), m.predict_raw(r).to_bits());
        }
    }
}
