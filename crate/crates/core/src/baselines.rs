//! Model-fitting entry points: the two latent factor models (thin wrappers
//! over the Gibbs sampler) and the L1-penalized logistic regression used as
//! the non-hierarchical baseline.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::data::{ColumnMeta, Dataset, Hyperparameters, Standardizer};
use crate::error::{Error, Result};
use crate::eval::stratified_fold_assignment;
use crate::gibbs::{run_chain, ChainConfig, ModelKind, PosteriorSamples, RunHooks};
use crate::rng::stream;

/// Fit the hierarchical transfer-learning factor model: population-specific
/// loadings shrunk toward shared global loadings.
pub fn fit_tl_lfm(
    dataset: &Dataset,
    hyper: &Hyperparameters,
    config: &ChainConfig,
    hooks: &RunHooks,
) -> Result<PosteriorSamples> {
    run_chain(dataset, hyper, config, ModelKind::Hierarchical, hooks)
}

/// Fit the plain latent factor model: one set of loadings for all rows,
/// ignoring the population labels.
pub fn fit_plain_lfm(
    dataset: &Dataset,
    hyper: &Hyperparameters,
    config: &ChainConfig,
    hooks: &RunHooks,
) -> Result<PosteriorSamples> {
    run_chain(dataset, hyper, config, ModelKind::Pooled, hooks)
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn soft_threshold(u: f64, lambda: f64) -> f64 {
    if u > lambda {
        u - lambda
    } else if u < -lambda {
        u + lambda
    } else {
        0.0
    }
}

fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Objective from precomputed linear predictors; avoids the O(n p) rebuild
/// when eta is maintained incrementally.
#[cfg(debug_assertions)]
fn objective_from_eta(eta: &[f64], y: &[u8], weights: &[f64], lambda: f64) -> f64 {
    let nll: f64 = eta
        .iter()
        .zip(y)
        .map(|(&e, &yi)| softplus((1.0 - 2.0 * yi as f64) * e))
        .sum();
    nll / eta.len() as f64 + lambda * weights.iter().map(|w| w.abs()).sum::<f64>()
}

/// Average logistic loss plus L1 penalty: the objective minimized by the
/// coordinate-descent solver.
pub fn lasso_objective(x: &ArrayView2<f64>, y: &[u8], weights: &[f64], intercept: f64, lambda: f64) -> f64 {
    let n = x.nrows();
    let mut nll = 0.0;
    for i in 0..n {
        let mut eta = intercept;
        for (j, &w) in weights.iter().enumerate() {
            eta += x[(i, j)] * w;
        }
        let sign = 1.0 - 2.0 * y[i] as f64;
        nll += softplus(sign * eta);
    }
    nll / n as f64 + lambda * weights.iter().map(|w| w.abs()).sum::<f64>()
}

/// Solution of one penalized fit.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub sweeps: usize,
    /// Worst stationarity violation at exit (see [`kkt_gap`]).
    pub kkt_gap: f64,
    pub converged: bool,
}

/// Gradient of the average logistic loss at (weights, intercept):
/// returns (per-coordinate gradient, intercept gradient).
fn loss_gradient(x: &ArrayView2<f64>, y: &[u8], eta: &[f64]) -> (Vec<f64>, f64) {
    let n = x.nrows();
    let p = x.ncols();
    let mut g = vec![0.0; p];
    let mut gb = 0.0;
    for i in 0..n {
        let r = sigmoid(eta[i]) - y[i] as f64;
        gb += r;
        for j in 0..p {
            g[j] += x[(i, j)] * r;
        }
    }
    for v in g.iter_mut() {
        *v /= n as f64;
    }
    (g, gb / n as f64)
}

/// Worst violation of the subgradient stationarity conditions: for zero
/// weights `max(|g_j| - lambda, 0)`, for active weights `|g_j + lambda
/// sign(w_j)|`, and `|g_b|` for the intercept.
pub fn kkt_gap(x: &ArrayView2<f64>, y: &[u8], weights: &[f64], intercept: f64, lambda: f64) -> f64 {
    let eta: Vec<f64> = (0..x.nrows())
        .map(|i| {
            let mut e = intercept;
            for (j, &w) in weights.iter().enumerate() {
                e += x[(i, j)] * w;
            }
            e
        })
        .collect();
    let (g, gb) = loss_gradient(x, y, &eta);
    let mut gap = gb.abs();
    for (j, &w) in weights.iter().enumerate() {
        let v = if w == 0.0 {
            (g[j].abs() - lambda).max(0.0)
        } else {
            (g[j] + lambda * w.signum()).abs()
        };
        gap = gap.max(v);
    }
    gap
}

/// Cyclic coordinate descent with a quadratic majorization of the logistic
/// loss (curvature bound 1/4 per instance). Each sweep re-anchors the
/// majorizer at the current point and runs one coordinate pass on it, so the
/// inner loop needs no logistic evaluations; the bound is global, so the
/// true objective never increases across sweeps (debug-asserted per sweep).
/// Between full sweeps the pass is restricted to the current support;
/// convergence is declared only from a full-range stationarity check.
pub fn solve_logistic_lasso(
    x: &ArrayView2<f64>,
    y: &[u8],
    lambda: f64,
    warm: Option<(&[f64], f64)>,
    max_sweeps: usize,
    tol: f64,
) -> Result<LassoFit> {
    let n = x.nrows();
    let p = x.ncols();
    if y.len() != n {
        return Err(Error::dimension(format!("{n} rows but {} labels", y.len())));
    }
    if n == 0 || p == 0 {
        return Err(Error::dimension("empty design matrix"));
    }
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::invalid(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let n_pos = y.iter().filter(|&&v| v == 1).count();
    if n_pos == 0 || n_pos == n {
        return Err(Error::invalid("outcome has a single class; nothing to fit"));
    }

    let nf = n as f64;
    // Column-major copy: the per-coordinate loops walk single columns, which
    // stride by p in the row-major input.
    let cols: Vec<Vec<f64>> = (0..p).map(|j| x.column(j).to_vec()).collect();
    // Majorization curvatures: 0.25 * mean(x_j^2). Zero for all-zero columns,
    // whose weights stay at zero (their gradient is identically zero).
    let curv: Vec<f64> =
        cols.iter().map(|c| 0.25 * c.iter().map(|v| v * v).sum::<f64>() / nf).collect();

    let (mut w, mut b) = match warm {
        Some((w0, b0)) => {
            if w0.len() != p {
                return Err(Error::dimension("warm start has the wrong width"));
            }
            (w0.to_vec(), b0)
        }
        None => (vec![0.0; p], logit(n_pos as f64 / nf)),
    };
    let mut eta = vec![b; n];
    for (j, &wj) in w.iter().enumerate() {
        if wj != 0.0 {
            for (e, &v) in eta.iter_mut().zip(&cols[j]) {
                *e += v * wj;
            }
        }
    }

    #[cfg(debug_assertions)]
    let mut prev_obj = objective_from_eta(&eta, y, &w, lambda);

    let mut sweeps = 0usize;
    // True-loss residuals at the current point, refreshed once per round.
    let mut res = vec![0.0; n];
    // Residuals of the anchored quadratic, kept in sync with eta during a
    // pass: r_i = z_i - eta_i where z is the working response.
    let mut r = vec![0.0; n];
    // A restricted pass cannot discover new active coordinates, so it only
    // certifies stationarity of the support; full-range scope is required to
    // finish.
    let mut full_scope = true;
    let in_scope = |full: bool, wj: f64, cj: f64| -> bool { cj > 0.0 && (full || wj != 0.0) };
    loop {
        for ((ri, &e), &yi) in res.iter_mut().zip(eta.iter()).zip(y) {
            *ri = sigmoid(e) - yi as f64;
        }
        // Stationarity of the true objective at the current point, over the
        // current scope; the quadratic's gradient matches it at the anchor.
        let mut scope_gap = (res.iter().sum::<f64>() / nf).abs();
        for j in 0..p {
            if !in_scope(full_scope, w[j], curv[j]) {
                continue;
            }
            let g = dot(&cols[j], &res) / nf;
            let v = if w[j] == 0.0 {
                (g.abs() - lambda).max(0.0)
            } else {
                (g + lambda * w[j].signum()).abs()
            };
            scope_gap = scope_gap.max(v);
        }
        if scope_gap <= tol {
            if full_scope {
                return Ok(LassoFit {
                    weights: w,
                    intercept: b,
                    sweeps,
                    kkt_gap: scope_gap,
                    converged: true,
                });
            }
            full_scope = true;
            continue;
        }
        if sweeps >= max_sweeps {
            let gap = kkt_gap(x, y, &w, b, lambda);
            return Ok(LassoFit { weights: w, intercept: b, sweeps, kkt_gap: gap, converged: false });
        }

        // One coordinate pass on the majorizer anchored here. The 1/4 bound
        // keeps it above the loss everywhere, so the pass cannot raise the
        // true objective.
        for (ri, &resi) in r.iter_mut().zip(res.iter()) {
            *ri = -4.0 * resi;
        }
        for j in 0..p {
            if !in_scope(full_scope, w[j], curv[j]) {
                continue;
            }
            let g = dot(&cols[j], &r) / (-4.0 * nf);
            let new = soft_threshold(curv[j] * w[j] - g, lambda) / curv[j];
            let delta = new - w[j];
            if delta != 0.0 {
                w[j] = new;
                for ((e, ri), &v) in eta.iter_mut().zip(r.iter_mut()).zip(&cols[j]) {
                    let step = delta * v;
                    *e += step;
                    *ri -= step;
                }
            }
        }
        // Intercept step on the same quadratic: curvature 1/4, so the step
        // is simply the mean residual.
        let db = r.iter().sum::<f64>() / nf;
        if db != 0.0 {
            b += db;
            for (e, ri) in eta.iter_mut().zip(r.iter_mut()) {
                *e += db;
                *ri -= db;
            }
        }
        sweeps += 1;
        full_scope = false;

        #[cfg(debug_assertions)]
        {
            let obj = objective_from_eta(&eta, y, &w, lambda);
            debug_assert!(
                obj <= prev_obj + 1e-12 * (1.0 + prev_obj.abs()),
                "objective rose from {prev_obj} to {obj} on sweep {sweeps}"
            );
            prev_obj = obj;
        }
    }
}

/// Penalized logistic regression settings. With `lambda_grid: None` the grid
/// is built from the data: `n_lambda` log-spaced values from the smallest
/// all-zero penalty down by `lambda_min_ratio`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoConfig {
    pub lambda_grid: Option<Vec<f64>>,
    pub n_lambda: usize,
    pub lambda_min_ratio: f64,
    pub folds: usize,
    pub max_sweeps: usize,
    /// Sweep cap for the cross-validation fold fits. Fold fits only rank
    /// penalties by held-out AUROC, which is insensitive to the last digits
    /// of the weights, so they get a smaller budget than the final refit
    /// and may stop at the cap without error.
    pub cv_max_sweeps: usize,
    pub kkt_tol: f64,
    pub seed: u64,
}

impl Default for LassoConfig {
    fn default() -> LassoConfig {
        LassoConfig {
            lambda_grid: None,
            n_lambda: 50,
            lambda_min_ratio: 1e-3,
            folds: 5,
            // Near-separable small-n fits crawl once the probabilities
            // saturate (the 1/4 curvature bound turns very loose there); the
            // budget is sized for that worst case, cheap at small n.
            max_sweeps: 20_000,
            cv_max_sweeps: 300,
            kkt_tol: 1e-5,
            seed: 0,
        }
    }
}

/// Fitted penalized logistic model, on the standardized scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub columns: Vec<ColumnMeta>,
    pub standardizer: Standardizer,
    /// Mean held-out AUROC at the chosen lambda (absent when the grid had a
    /// single value and selection was skipped).
    pub cv_mean_auroc: Option<f64>,
}

impl LassoModel {
    pub fn schema_hash(&self) -> String {
        crate::data::schema_hash(&self.columns)
    }

    pub fn n_active(&self) -> usize {
        self.weights.iter().filter(|&&w| w != 0.0).count()
    }
}

const LASSO_TAG: u64 = 0x6c61_7300; // "las"

/// Smallest penalty at which the all-zero solution is stationary: the
/// largest absolute loss gradient under the intercept-only model.
pub(crate) fn lambda_max(x: &ArrayView2<f64>, y: &[u8]) -> f64 {
    let n = x.nrows() as f64;
    let ybar = y.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mut best = 0.0f64;
    for j in 0..x.ncols() {
        let g: f64 = x
            .column(j)
            .iter()
            .zip(y)
            .map(|(&xij, &yi)| xij * (ybar - yi as f64))
            .sum::<f64>()
            / n;
        best = best.max(g.abs());
    }
    best
}

fn build_grid(x: &ArrayView2<f64>, y: &[u8], config: &LassoConfig) -> Result<Vec<f64>> {
    let mut grid = match &config.lambda_grid {
        Some(g) => {
            if g.is_empty() {
                return Err(Error::invalid("empty lambda grid"));
            }
            if let Some(bad) = g.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(Error::invalid(format!("bad lambda {bad}")));
            }
            g.clone()
        }
        None => {
            if config.n_lambda == 0 {
                return Err(Error::invalid("n_lambda must be at least 1"));
            }
            if !(config.lambda_min_ratio > 0.0 && config.lambda_min_ratio <= 1.0) {
                return Err(Error::invalid("lambda_min_ratio must lie in (0, 1]"));
            }
            let top = lambda_max(x, y);
            if top <= 0.0 {
                // Degenerate design: nothing correlates with the outcome.
                vec![0.0]
            } else if config.n_lambda == 1 {
                vec![top]
            } else {
                let ratio = config.lambda_min_ratio.powf(1.0 / (config.n_lambda - 1) as f64);
                (0..config.n_lambda).map(|i| top * ratio.powi(i as i32)).collect()
            }
        }
    };
    grid.sort_by(|a, b| b.total_cmp(a));
    grid.dedup();
    Ok(grid)
}

/// Fit the lasso baseline: standardize, build the penalty grid, choose the
/// penalty by stratified k-fold cross-validation maximizing held-out AUROC
/// (ties resolve toward the stronger penalty), then refit on all rows.
///
/// Fold fits along the path may stop at the sweep cap; their solutions are
/// still scored. The final refit at the chosen penalty must converge.
pub fn fit_lasso(dataset: &Dataset, config: &LassoConfig) -> Result<LassoModel> {
    let y = dataset
        .y()
        .ok_or_else(|| Error::invalid("lasso fitting requires an outcome column"))?;
    let standardizer = Standardizer::fit(dataset);
    let x = standardizer.apply(dataset.x());
    let grid = build_grid(&x.view(), y, config)?;

    let mut cv_mean_auroc = None;
    let chosen_idx = if grid.len() == 1 {
        0
    } else {
        if config.folds < 2 || config.folds > dataset.n_rows() {
            return Err(Error::invalid(format!(
                "fold count {} invalid for {} rows",
                config.folds,
                dataset.n_rows()
            )));
        }
        let keys: Vec<u64> = y.iter().map(|&v| v as u64).collect();
        let mut assignment =
            stratified_fold_assignment(&keys, config.folds, &mut stream(config.seed, &[LASSO_TAG, 0]));
        let usable = |a: &[usize]| {
            (0..config.folds).all(|f| {
                let pos = a.iter().zip(y).filter(|(&af, &yi)| af == f && yi == 1).count();
                let neg = a.iter().zip(y).filter(|(&af, &yi)| af == f && yi == 0).count();
                pos > 0 && neg > 0
            })
        };
        if !usable(&assignment) {
            assignment = stratified_fold_assignment(
                &keys,
                config.folds,
                &mut stream(config.seed, &[LASSO_TAG, 1]),
            );
            if !usable(&assignment) {
                return Err(Error::invalid(
                    "lasso folds keep a single outcome class even after re-dealing; use fewer folds",
                ));
            }
        }

        let mut fold_scores = vec![Vec::with_capacity(config.folds); grid.len()];
        for f in 0..config.folds {
            let train_rows: Vec<usize> =
                (0..assignment.len()).filter(|&i| assignment[i] != f).collect();
            let held_rows: Vec<usize> =
                (0..assignment.len()).filter(|&i| assignment[i] == f).collect();
            let xt = x.select(ndarray::Axis(0), &train_rows);
            let yt: Vec<u8> = train_rows.iter().map(|&i| y[i]).collect();
            let xh = x.select(ndarray::Axis(0), &held_rows);
            let yh: Vec<u8> = held_rows.iter().map(|&i| y[i]).collect();
            let mut warm: Option<(Vec<f64>, f64)> = None;
            for (gi, &lambda) in grid.iter().enumerate() {
                let fit = solve_logistic_lasso(
                    &xt.view(),
                    &yt,
                    lambda,
                    warm.as_ref().map(|(w, b)| (w.as_slice(), *b)),
                    config.cv_max_sweeps,
                    config.kkt_tol,
                )?;
                let scores: Vec<f64> = (0..xh.nrows())
                    .map(|i| {
                        let mut e = fit.intercept;
                        for (j, &wj) in fit.weights.iter().enumerate() {
                            e += xh[(i, j)] * wj;
                        }
                        sigmoid(e)
                    })
                    .collect();
                fold_scores[gi].push(crate::eval::auroc(&scores, &yh)?);
                warm = Some((fit.weights, fit.intercept));
            }
        }
        let mut best = 0usize;
        let mut best_mean = f64::NEG_INFINITY;
        for (gi, scores) in fold_scores.iter().enumerate() {
            let mean = scores.iter().sum::<f64>() / scores.len() as f64;
            // Strictly-greater keeps the earliest (largest) lambda on ties.
            if mean > best_mean {
                best_mean = mean;
                best = gi;
            }
        }
        cv_mean_auroc = Some(best_mean);
        best
    };

    let mut warm: Option<(Vec<f64>, f64)> = None;
    let mut final_fit = None;
    for &lambda in &grid[..=chosen_idx] {
        let fit = solve_logistic_lasso(
            &x.view(),
            y,
            lambda,
            warm.as_ref().map(|(w, b)| (w.as_slice(), *b)),
            config.max_sweeps,
            config.kkt_tol,
        )?;
        warm = Some((fit.weights.clone(), fit.intercept));
        final_fit = Some(fit);
    }
    let fit = final_fit.expect("grid is non-empty");
    if !fit.converged {
        return Err(Error::NonConvergence {
            context: format!("lasso coordinate descent at lambda {}", grid[chosen_idx]),
            sweeps: fit.sweeps,
            gap: fit.kkt_gap,
        });
    }
    Ok(LassoModel {
        weights: fit.weights,
        intercept: fit.intercept,
        lambda: grid[chosen_idx],
        columns: dataset.columns().to_vec(),
        standardizer,
        cv_mean_auroc,
    })
}

/// Probabilities for new rows; the dataset schema must match training.
pub fn predict_lasso(model: &LassoModel, dataset: &Dataset) -> Result<Vec<f64>> {
    if dataset.columns() != model.columns.as_slice() {
        let got: Vec<&str> = dataset.columns().iter().map(|c| c.name.as_str()).collect();
        let want: Vec<&str> = model.columns.iter().map(|c| c.name.as_str()).collect();
        return Err(Error::schema(format!(
            "dataset columns {got:?} do not match the model's training schema {want:?}"
        )));
    }
    let x = model.standardizer.apply(dataset.x());
    Ok(predict_lasso_standardized(model, &x.view()))
}

/// Probabilities on already-standardized rows.
pub fn predict_lasso_standardized(model: &LassoModel, x: &ArrayView2<f64>) -> Vec<f64> {
    (0..x.nrows())
        .map(|i| {
            let mut e = model.intercept;
            for (j, &w) in model.weights.iter().enumerate() {
                e += x[(i, j)] * w;
            }
            sigmoid(e)
        })
        .collect()
}

/// KKT stationarity gap of a fitted model on its training data (after
/// applying the persisted standardizer).
pub fn lasso_kkt_gap_on(model: &LassoModel, dataset: &Dataset) -> Result<f64> {
    let y = dataset
        .y()
        .ok_or_else(|| Error::invalid("KKT check needs the training outcome"))?;
    let x = model.standardizer.apply(dataset.x());
    Ok(kkt_gap(&x.view(), y, &model.weights, model.intercept, model.lambda))
}
