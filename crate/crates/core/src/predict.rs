//! Posterior-predictive classification: turn retained states into regression
//! coefficients on the latent scale and probabilities for new rows.
//!
//! For each retained state the marginal covariance over Z = {Y, X} is
//! assembled from that draw's loadings, partitioned, and solved for
//! theta = Omega_XX^-1 Omega_YX and the conditional variance
//! s = Omega_YY - Omega_YX' theta. A new row scores Phi(x' theta / sqrt(s)),
//! and the returned probability is the average over draws (a Rao-
//! Blackwellized Monte Carlo integral of the posterior predictive).

use ndarray::{Array1, Array2};

use crate::cov::{assemble_marginal_covariance, MarginalCovariance};
use crate::data::{Dataset, Population};
use crate::error::{Error, Result};
use crate::gibbs::PosteriorSamples;
use crate::linalg::cholesky_with_jitter;
use crate::rng::norm_cdf;

/// Index of the outcome coordinate inside the latent vector Z = {Y, X}.
pub const OUTCOME_INDEX: usize = 0;

#[derive(Debug, Clone)]
pub struct PredictiveResult {
    /// Posterior-predictive P(y = 1 | x) per row.
    pub prob: Vec<f64>,
    /// Chain average of the conditional latent mean x' theta per row.
    pub latent_mean: Vec<f64>,
    /// Chain average of the conditional latent standard deviation sqrt(s);
    /// identical across rows of one call by construction.
    pub latent_sd: Vec<f64>,
    pub n_draws_used: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PredictOptions {
    /// Average the covariance over draws first and solve once, instead of
    /// integrating per draw. Faster, slightly less faithful.
    pub posterior_mean_shortcut: bool,
}

/// Split a covariance at `y_index` into (Omega_XX, Omega_YX, Omega_YY).
pub fn partition_covariance(
    omega: &MarginalCovariance,
    y_index: usize,
) -> Result<(Array2<f64>, Array1<f64>, f64)> {
    let p = omega.dim();
    if y_index >= p {
        return Err(Error::dimension(format!(
            "y index {y_index} out of range for a {p}-dimensional covariance"
        )));
    }
    let m = omega.matrix();
    let keep: Vec<usize> = (0..p).filter(|&j| j != y_index).collect();
    let mut xx = Array2::<f64>::zeros((p - 1, p - 1));
    for (a, &i) in keep.iter().enumerate() {
        for (b, &j) in keep.iter().enumerate() {
            xx[(a, b)] = m[(i, j)];
        }
    }
    let yx = Array1::from_iter(keep.iter().map(|&j| m[(y_index, j)]));
    Ok((xx, yx, m[(y_index, y_index)]))
}

#[derive(Debug, Clone)]
pub struct RegressionCoefficients {
    pub theta: Array1<f64>,
    /// Conditional variance s = Omega_YY - Omega_YX' theta.
    pub conditional_var: f64,
}

/// Solve Omega_XX theta = Omega_YX with the house jitter policy.
pub fn regression_coefficients(
    omega: &MarginalCovariance,
    y_index: usize,
) -> Result<RegressionCoefficients> {
    let (xx, yx, yy) = partition_covariance(omega, y_index)?;
    let chol = cholesky_with_jitter(&xx.view(), "Omega_XX")?;
    let theta = chol.solve_vec(&yx.view());
    let mut s = yy - yx.dot(&theta);
    if s < 0.0 {
        // PSD round-off can leave a tiny negative remainder; anything larger
        // means the covariance was not PSD to begin with.
        if s < -1e-8 * yy.abs() {
            return Err(Error::numerical(format!(
                "negative conditional variance {s:.3e} from a non-PSD covariance"
            )));
        }
        s = f64::EPSILON * yy.abs().max(f64::MIN_POSITIVE);
    }
    Ok(RegressionCoefficients { theta, conditional_var: s })
}

/// Score standardized covariate rows (one row per prediction) against the
/// chain. Binary covariate cells must hold their raw 0/1 values; continuous
/// cells must already be standardized with the training statistics.
pub fn predict_standardized(
    samples: &PosteriorSamples,
    x_new: &Array2<f64>,
    pop: Population,
    opts: &PredictOptions,
) -> Result<PredictiveResult> {
    let p_cov = samples.columns.len();
    if x_new.ncols() != p_cov {
        return Err(Error::Schema(format!(
            "model was trained on {p_cov} covariates but rows have {}",
            x_new.ncols()
        )));
    }
    let n_states = samples.n_states();
    if n_states == 0 {
        return Err(Error::invalid("empty chain: nothing to predict with"));
    }
    let n = x_new.nrows();
    let mut prob = vec![0.0f64; n];
    let mut latent_mean = vec![0.0f64; n];
    let mut latent_sd_acc = 0.0f64;

    if opts.posterior_mean_shortcut {
        let p_latent = p_cov + 1;
        let mut mean_omega = Array2::<f64>::zeros((p_latent, p_latent));
        for state in samples.states() {
            let omega =
                assemble_marginal_covariance(&state.loadings_for(pop).view(), &state.noise_vars.view())?;
            mean_omega += omega.matrix();
        }
        mean_omega /= n_states as f64;
        let omega = MarginalCovariance::try_new(mean_omega)?;
        let reg = regression_coefficients(&omega, OUTCOME_INDEX)?;
        let sd = reg.conditional_var.sqrt();
        for r in 0..n {
            let eta = x_new.row(r).dot(&reg.theta);
            prob[r] = norm_cdf(eta / sd);
            latent_mean[r] = eta;
        }
        return Ok(PredictiveResult {
            prob,
            latent_mean,
            latent_sd: vec![sd; n],
            n_draws_used: n_states,
        });
    }

    for state in samples.states() {
        let omega =
            assemble_marginal_covariance(&state.loadings_for(pop).view(), &state.noise_vars.view())?;
        let reg = regression_coefficients(&omega, OUTCOME_INDEX)?;
        let sd = reg.conditional_var.sqrt();
        latent_sd_acc += sd;
        for r in 0..n {
            let eta = x_new.row(r).dot(&reg.theta);
            prob[r] += norm_cdf(eta / sd);
            latent_mean[r] += eta;
        }
    }
    let scale = 1.0 / n_states as f64;
    for r in 0..n {
        prob[r] *= scale;
        latent_mean[r] *= scale;
    }
    Ok(PredictiveResult {
        prob,
        latent_mean,
        latent_sd: vec![latent_sd_acc * scale; n],
        n_draws_used: n_states,
    })
}

/// Score a raw dataset: checks the covariate schema against the training
/// schema, applies the persisted standardization, and delegates to
/// [`predict_standardized`].
pub fn predict(
    samples: &PosteriorSamples,
    dataset: &Dataset,
    pop: Population,
    opts: &PredictOptions,
) -> Result<PredictiveResult> {
    if dataset.schema_hash() != samples.schema_hash() {
        return Err(Error::Schema(format!(
            "covariate schema mismatch: model trained on [{}], data has [{}]",
            describe_columns(&samples.columns),
            describe_columns(dataset.columns()),
        )));
    }
    let x_std = samples.standardizer.apply(dataset.x());
    predict_standardized(samples, &x_std, pop, opts)
}

fn describe_columns(cols: &[crate::data::ColumnMeta]) -> String {
    cols.iter()
        .map(|c| c.name.as_str())
        .collect::<Vec<_>>()
        .join(", ")
}
