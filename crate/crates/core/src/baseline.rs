//! Comparison method: single-alpha diffusion features fed to an
//! L2-regularized logistic classifier trained by gradient descent.

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{rwr_steady_state, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::graph::{CompoundSet, SharedGraph};

/// Restart probability for baseline feature vectors. The upstream method
/// this row stands in for does not pin one down, so the midpoint is used
/// and reports flag it as an assumption.
pub const DEFAULT_BASELINE_ALPHA: f64 = 0.5;

/// Default regularization strength for the baseline classifier, likewise an
/// assumption surfaced in reports.
pub const DEFAULT_BASELINE_L2: f64 = 0.01;

const GRAD_TOL: f64 = 1e-6;
const MAX_FIT_ITERS: usize = 100_000;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearModel {
    pub w: Vec<f64>,
    pub b: f64,
    pub l2: f64,
}

/// Diffusion profile of one compound's target set at a single restart
/// probability; the baseline's whole node representation.
pub fn baseline_features(graph: &SharedGraph, x0: &[f64], alpha: f64) -> Result<Vec<f64>> {
    rwr_steady_state(graph, x0, alpha, DEFAULT_TOL, DEFAULT_MAX_ITER)
}

/// Feature matrix with one diffusion profile per compound row.
pub fn baseline_feature_matrix(
    graph: &SharedGraph,
    compounds: &CompoundSet,
    alpha: f64,
) -> Result<Array2<f64>> {
    let n = graph.n_nodes();
    let rows: Vec<Vec<f64>> = (0..compounds.n_compounds())
        .into_par_iter()
        .map(|c| baseline_features(graph, &compounds.dense_features(c), alpha))
        .collect::<Result<_>>()?;
    let mut m = Array2::zeros((rows.len(), n));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    Ok(m)
}

fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^x) without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Mean weighted logistic loss plus (l2/2)||w||^2, and its gradient in
/// (w, b).
fn loss_and_grad(
    x: &Array2<f64>,
    labels: &[u8],
    weights: [f64; 2],
    l2: f64,
    w: &Array1<f64>,
    b: f64,
) -> (f64, Array1<f64>, f64) {
    let n = x.nrows() as f64;
    let margins = x.dot(w) + b;
    let mut loss = 0.0;
    let mut dmargin = Array1::zeros(x.nrows());
    for (i, (&s, &y)) in margins.iter().zip(labels).enumerate() {
        let c = weights[y as usize];
        // -[y ln p + (1-y) ln(1-p)] written via softplus for stability
        loss += c * if y == 1 { softplus(-s) } else { softplus(s) };
        dmargin[i] = c * (sigmoid(s) - y as f64);
    }
    loss = loss / n + 0.5 * l2 * w.dot(w);
    let gw = x.t().dot(&dmargin) / n + &(w * l2);
    let gb = dmargin.sum() / n;
    (loss, gw, gb)
}

fn grad_norm(gw: &Array1<f64>, gb: f64) -> f64 {
    (gw.dot(gw) + gb * gb).sqrt()
}

/// Fit from explicit starting weights. Backtracking line search with step
/// regrowth; the loss is convex, so any start converges to the same
/// optimum.
pub fn fit_logistic_from(
    x: &Array2<f64>,
    labels: &[u8],
    weights: [f64; 2],
    l2: f64,
    init_w: Array1<f64>,
    init_b: f64,
) -> Result<LinearModel> {
    if x.nrows() != labels.len() {
        return Err(Error::shape(format!(
            "{} feature rows but {} labels",
            x.nrows(),
            labels.len()
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::invalid("cannot fit a classifier on zero samples"));
    }
    if init_w.len() != x.ncols() {
        return Err(Error::shape("initial weights do not match feature width"));
    }
    if labels.iter().all(|&y| y == 1) || labels.iter().all(|&y| y == 0) {
        return Err(Error::invalid("logistic fit needs both classes present"));
    }
    if l2 < 0.0 || !l2.is_finite() {
        return Err(Error::invalid("l2 must be finite and non-negative"));
    }
    if weights.iter().any(|&c| !(c > 0.0) || !c.is_finite()) {
        return Err(Error::invalid("class weights must be positive"));
    }

    let mut w = init_w;
    let mut b = init_b;
    let (mut loss, mut gw, mut gb) = loss_and_grad(x, labels, weights, l2, &w, b);
    let mut step = 1.0;
    for _ in 0..MAX_FIT_ITERS {
        let gn = grad_norm(&gw, gb);
        if gn <= GRAD_TOL {
            return Ok(LinearModel {
                w: w.to_vec(),
                b,
                l2,
            });
        }
        // Armijo backtracking: shrink until the decrease matches half the
        // first-order prediction
        let gsq = gn * gn;
        loop {
            let wt = &w - &(&gw * step);
            let bt = b - step * gb;
            let (lt, gwt, gbt) = loss_and_grad(x, labels, weights, l2, &wt, bt);
            if lt <= loss - 0.5 * step * gsq {
                w = wt;
                b = bt;
                loss = lt;
                gw = gwt;
                gb = gbt;
                step *= 2.0;
                break;
            }
            step *= 0.5;
            if step < 1e-18 {
                return Err(Error::Numerical(
                    "line search stalled while fitting the baseline classifier".into(),
                ));
            }
        }
    }
    let (_, gw, gb) = loss_and_grad(x, labels, weights, l2, &w, b);
    Err(Error::NoConvergence {
        max_iter: MAX_FIT_ITERS,
        residual: grad_norm(&gw, gb),
    })
}

/// Fit from zero weights.
pub fn fit_logistic(
    x: &Array2<f64>,
    labels: &[u8],
    weights: [f64; 2],
    l2: f64,
) -> Result<LinearModel> {
    fit_logistic_from(x, labels, weights, l2, Array1::zeros(x.ncols()), 0.0)
}

/// Positive-class probability for one feature row.
pub fn baseline_predict(model: &LinearModel, features: &[f64]) -> Result<f64> {
    if features.len() != model.w.len() {
        return Err(Error::shape(format!(
            "feature length {} does not match model width {}",
            features.len(),
            model.w.len()
        )));
    }
    let s: f64 = model
        .w
        .iter()
        .zip(features)
        .map(|(w, x)| w * x)
        .sum::<f64>()
        + model.b;
    Ok(sigmoid(s))
}

/// Scores for a batch of feature rows.
pub fn baseline_scores(model: &LinearModel, x: &Array2<f64>, ids: &[usize]) -> Result<Vec<f64>> {
    ids.iter()
        .map(|&i| {
            if i >= x.nrows() {
                return Err(Error::invalid(format!("row {i} out of range")));
            }
            baseline_predict(model, x.row(i).as_slice().unwrap())
        })
        .collect()
}
