//! Full-conditional Gibbs updates and chain orchestration for the
//! hierarchical (TL-LFM) and pooled (LFM) factor models.
//!
//! The latent data matrix Z has the binary outcome in column 0 and the
//! standardized covariates after it. Binary cells are probit-augmented:
//! the working state keeps a utility for each, and continuous cells carry
//! their observed values unchanged.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicBool, Ordering};

use crate::data::{ColumnKind, ColumnMeta, Dataset, Hyperparameters, Population, Standardizer};
use crate::error::{Error, Result};
use crate::linalg::{self, cholesky_with_jitter};
use crate::rng::{sample_probit_utility, sample_truncnorm_lower, sample_truncnorm_upper, stream};

/// Which model the sampler runs: the two-population hierarchy or the pooled
/// flat factor model (same code path, one loadings matrix, no shared level).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Hierarchical,
    Pooled,
}

/// Chain settings split out of [`Hyperparameters`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub iters: usize,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
    pub n_chains: usize,
    pub record_factors: bool,
}

impl ChainConfig {
    pub fn from_hyper(hyper: &Hyperparameters) -> ChainConfig {
        ChainConfig {
            iters: hyper.iters,
            burnin: hyper.burnin,
            thin: hyper.thin,
            seed: hyper.seed,
            n_chains: 1,
            record_factors: false,
        }
    }

    pub fn retained_per_chain(&self) -> usize {
        if self.iters <= self.burnin {
            0
        } else {
            (self.iters - self.burnin) / self.thin.max(1)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 {
            return Err(Error::invalid("n_chains must be at least 1"));
        }
        if self.thin == 0 {
            return Err(Error::invalid("thin must be at least 1"));
        }
        if self.iters <= self.burnin {
            return Err(Error::invalid(format!(
                "iters ({}) must exceed burnin ({})",
                self.iters, self.burnin
            )));
        }
        if self.retained_per_chain() == 0 {
            return Err(Error::invalid("chain settings retain zero samples"));
        }
        Ok(())
    }
}

/// One Gibbs state. For the pooled model `shared_loadings` is all zeros and
/// `target_loadings` mirrors `source_loadings`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub shared_loadings: Array2<f64>,
    pub source_loadings: Array2<f64>,
    pub target_loadings: Array2<f64>,
    /// Idiosyncratic variances; exactly 1 for binary columns.
    pub noise_vars: Array1<f64>,
    pub factor_scores: Array2<f64>,
    /// z-tilde: observed values at continuous cells, current probit utilities
    /// at binary cells.
    pub latent: Array2<f64>,
    /// Current population precisions (fixed at the hyperparameter values
    /// unless a precision prior is set).
    pub source_prec: f64,
    pub target_prec: f64,
}

/// Snapshot kept per retained draw.
#[derive(Debug, Clone, PartialEq)]
pub struct RetainedState {
    pub shared_loadings: Array2<f64>,
    pub source_loadings: Array2<f64>,
    pub target_loadings: Array2<f64>,
    pub noise_vars: Array1<f64>,
    pub factor_scores: Option<Array2<f64>>,
    pub source_prec: f64,
    pub target_prec: f64,
}

impl RetainedState {
    pub fn loadings_for(&self, pop: Population) -> &Array2<f64> {
        match pop {
            Population::Source => &self.source_loadings,
            Population::Target => &self.target_loadings,
        }
    }
}

/// Retained draws of one chain plus the factor-score summaries used by the
/// scatter export.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSamples {
    pub states: Vec<RetainedState>,
    /// F at the final completed sweep.
    pub final_factors: Array2<f64>,
    /// Mean of F over retained sweeps.
    pub mean_factors: Array2<f64>,
    pub sweeps_completed: usize,
}

/// Posterior samples with everything needed to score new rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSamples {
    pub kind: ModelKind,
    pub hyper: Hyperparameters,
    pub config: ChainConfig,
    /// Covariate schema of the training data (outcome excluded).
    pub columns: Vec<ColumnMeta>,
    pub standardizer: Standardizer,
    /// Population label per training row, aligned with the factor summaries.
    pub train_populations: Vec<Population>,
    pub chains: Vec<ChainSamples>,
    /// True when the run was cancelled before completing all sweeps.
    pub interrupted: bool,
}

impl PosteriorSamples {
    /// All retained states across chains, chain-major.
    pub fn states(&self) -> impl Iterator<Item = &RetainedState> {
        self.chains.iter().flat_map(|c| c.states.iter())
    }

    pub fn n_states(&self) -> usize {
        self.chains.iter().map(|c| c.states.len()).sum()
    }

    pub fn schema_hash(&self) -> String {
        crate::data::schema_hash(&self.columns)
    }

    /// Column kinds of the latent vector Z = {Y, X}.
    pub fn latent_kinds(&self) -> Vec<ColumnKind> {
        let mut kinds = Vec::with_capacity(self.columns.len() + 1);
        kinds.push(ColumnKind::Binary);
        kinds.extend(self.columns.iter().map(|c| c.kind));
        kinds
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ProgressEvent {
    pub chain: usize,
    pub sweep: usize,
    pub total_sweeps: usize,
}

/// Cancellation flag and progress callback for long runs. The callback fires
/// once per sweep; cancellation is honored at sweep boundaries so every
/// retained state is complete.
#[derive(Default)]
pub struct RunHooks<'a> {
    pub cancel: Option<&'a AtomicBool>,
    pub progress: Option<&'a (dyn Fn(ProgressEvent) + Sync)>,
}

struct Block {
    rows: Vec<usize>,
}

/// Problem definition: observed data, column kinds, population blocks, and
/// hyperparameters. Immutable while a chain runs; the Geweke harness swaps
/// the observed data between rounds via [`Sampler::redraw_data_from_model`].
pub struct Sampler {
    z: Array2<f64>,
    kinds: Vec<ColumnKind>,
    kind: ModelKind,
    hyper: Hyperparameters,
    blocks: Vec<Block>,
    /// Loadings-group index per row: 0 = source (or pooled), 1 = target.
    row_group: Vec<usize>,
    binary_cols: Vec<usize>,
    continuous_cols: Vec<usize>,
}

impl Sampler {
    /// `z` holds 0/1 at binary cells and (standardized) values elsewhere.
    /// Hyperparameters are taken as given so degenerate values usable only
    /// in tests (zero precisions, empty blocks) are representable;
    /// [`run_chain`] validates before constructing one.
    pub fn new(
        z: Array2<f64>,
        kinds: Vec<ColumnKind>,
        pops: Vec<Population>,
        hyper: Hyperparameters,
        kind: ModelKind,
    ) -> Result<Sampler> {
        if kinds.len() != z.ncols() {
            return Err(Error::dimension(format!(
                "{} columns but {} kind entries",
                z.ncols(),
                kinds.len()
            )));
        }
        if pops.len() != z.nrows() {
            return Err(Error::dimension(format!(
                "{} rows but {} population labels",
                z.nrows(),
                pops.len()
            )));
        }
        for (j, kindj) in kinds.iter().enumerate() {
            if *kindj == ColumnKind::Binary {
                for i in 0..z.nrows() {
                    let v = z[(i, j)];
                    if v != 0.0 && v != 1.0 {
                        return Err(Error::invalid(format!(
                            "binary column {j} holds {v} at row {i}"
                        )));
                    }
                }
            }
        }
        let (blocks, row_group) = match kind {
            ModelKind::Pooled => {
                let rows: Vec<usize> = (0..z.nrows()).collect();
                (vec![Block { rows }], vec![0usize; z.nrows()])
            }
            ModelKind::Hierarchical => {
                let mut source = Vec::new();
                let mut target = Vec::new();
                let mut row_group = Vec::with_capacity(pops.len());
                for (i, p) in pops.iter().enumerate() {
                    match p {
                        Population::Source => {
                            source.push(i);
                            row_group.push(0);
                        }
                        Population::Target => {
                            target.push(i);
                            row_group.push(1);
                        }
                    }
                }
                (vec![Block { rows: source }, Block { rows: target }], row_group)
            }
        };
        let binary_cols = kinds
            .iter()
            .enumerate()
            .filter(|(_, k)| **k == ColumnKind::Binary)
            .map(|(j, _)| j)
            .collect();
        let continuous_cols = kinds
            .iter()
            .enumerate()
            .filter(|(_, k)| **k == ColumnKind::Continuous)
            .map(|(j, _)| j)
            .collect();
        Ok(Sampler {
            z,
            kinds,
            kind,
            hyper,
            blocks,
            row_group,
            binary_cols,
            continuous_cols,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.z.nrows()
    }

    pub fn p_latent(&self) -> usize {
        self.z.ncols()
    }

    pub fn observed(&self) -> &Array2<f64> {
        &self.z
    }

    pub fn model_kind(&self) -> ModelKind {
        self.kind
    }

    pub fn hyper(&self) -> &Hyperparameters {
        &self.hyper
    }

    fn n_groups(&self) -> usize {
        self.blocks.len()
    }

    fn group_of(&self, pop: Population) -> usize {
        match (self.kind, pop) {
            (ModelKind::Pooled, _) => 0,
            (ModelKind::Hierarchical, Population::Source) => 0,
            (ModelKind::Hierarchical, Population::Target) => 1,
        }
    }

    fn group_precision(&self, state: &ModelState, group: usize) -> f64 {
        match self.kind {
            // Pooled loadings sit directly on the global prior N(0, 1/phi).
            ModelKind::Pooled => self.hyper.global_precision,
            ModelKind::Hierarchical => {
                if group == 0 {
                    state.source_prec
                } else {
                    state.target_prec
                }
            }
        }
    }

    fn group_loadings<'s>(&self, state: &'s ModelState, group: usize) -> &'s Array2<f64> {
        if group == 0 {
            &state.source_loadings
        } else {
            &state.target_loadings
        }
    }

    /// Initial state: small random loadings, unit variances, prior factor
    /// scores, utilities from truncated standard normals.
    pub fn init_state(&self, rng: &mut ChaCha20Rng) -> ModelState {
        let p = self.p_latent();
        let k = self.hyper.n_factors;
        let n = self.n_rows();
        let small = move |rng: &mut ChaCha20Rng| {
            Array2::from_shape_fn((p, k), |_| 0.1 * rng.sample::<f64, _>(StandardNormal))
        };
        let shared = match self.kind {
            ModelKind::Hierarchical => small(rng),
            ModelKind::Pooled => Array2::zeros((p, k)),
        };
        let source = small(rng);
        let target = match self.kind {
            ModelKind::Hierarchical => small(rng),
            ModelKind::Pooled => source.clone(),
        };
        let factor_scores =
            Array2::from_shape_fn((n, k), |_| rng.sample::<f64, _>(StandardNormal));
        let mut latent = self.z.clone();
        for &j in &self.binary_cols {
            for i in 0..n {
                latent[(i, j)] = if self.z[(i, j)] == 1.0 {
                    sample_truncnorm_lower(rng, 0.0)
                } else {
                    sample_truncnorm_upper(rng, 0.0)
                };
            }
        }
        let (source_prec, target_prec) = match self.kind {
            ModelKind::Hierarchical => (self.hyper.source_precision, self.hyper.target_precision),
            ModelKind::Pooled => (self.hyper.global_precision, self.hyper.global_precision),
        };
        ModelState {
            shared_loadings: shared,
            source_loadings: source,
            target_loadings: target,
            noise_vars: Array1::ones(p),
            factor_scores,
            latent,
            source_prec,
            target_prec,
        }
    }

    /// ModelState invariants: positive variances (exactly 1 at binary
    /// columns), utility signs consistent with the observed binary values,
    /// continuous latent cells equal to the observed data.
    pub fn check_state(&self, state: &ModelState) -> Result<()> {
        for (j, kindj) in self.kinds.iter().enumerate() {
            let s2 = state.noise_vars[j];
            if !(s2 > 0.0) {
                return Err(Error::invalid(format!("noise variance {s2} at column {j}")));
            }
            if *kindj == ColumnKind::Binary && s2 != 1.0 {
                return Err(Error::invalid(format!(
                    "binary column {j} must keep unit variance, got {s2}"
                )));
            }
        }
        for &j in &self.binary_cols {
            for i in 0..self.n_rows() {
                let obs = self.z[(i, j)];
                let util = state.latent[(i, j)];
                let ok = if obs == 1.0 { util > 0.0 } else { util <= 0.0 };
                if !ok {
                    return Err(Error::invalid(format!(
                        "utility sign mismatch at ({i},{j}): observed {obs}, utility {util}"
                    )));
                }
            }
        }
        for &j in &self.continuous_cols {
            for i in 0..self.n_rows() {
                if state.latent[(i, j)] != self.z[(i, j)] {
                    return Err(Error::invalid(format!(
                        "continuous latent cell ({i},{j}) drifted from the observed value"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Redraw utilities for every binary cell from N(beta_j' f_i, 1)
    /// truncated to the side of the observed value.
    pub fn update_probit_latents(&self, state: &mut ModelState, rng: &mut ChaCha20Rng) {
        let mut means = Vec::with_capacity(self.binary_cols.len());
        for i in 0..self.n_rows() {
            means.clear();
            {
                let beta = self.group_loadings(state, self.row_group[i]);
                let f_i = state.factor_scores.row(i);
                means.extend(self.binary_cols.iter().map(|&j| beta.row(j).dot(&f_i)));
            }
            for (&j, &mean) in self.binary_cols.iter().zip(&means) {
                state.latent[(i, j)] = sample_probit_utility(rng, mean, self.z[(i, j)] == 1.0);
            }
        }
    }

    /// Redraw every factor-score row from N(A beta' Sigma^-1 z_i, A) with
    /// A = (I_K + beta' Sigma^-1 beta)^-1, shared within a population.
    pub fn update_factor_scores(&self, state: &mut ModelState, rng: &mut ChaCha20Rng) -> Result<()> {
        let k = self.hyper.n_factors;
        let p = self.p_latent();
        for (g, block) in self.blocks.iter().enumerate() {
            if block.rows.is_empty() {
                continue;
            }
            let beta = self.group_loadings(state, g);
            // W = Sigma^-1 beta
            let mut w = beta.clone();
            for j in 0..p {
                let inv = 1.0 / state.noise_vars[j];
                w.row_mut(j).mapv_inplace(|v| v * inv);
            }
            // Precision I_K + beta' W, exactly symmetric.
            let mut prec = Array2::<f64>::zeros((k, k));
            for a in 0..k {
                for b in 0..=a {
                    let mut s = 0.0;
                    for j in 0..p {
                        s += beta[(j, a)] * w[(j, b)];
                    }
                    prec[(a, b)] = s;
                    prec[(b, a)] = s;
                }
                prec[(a, a)] += 1.0;
            }
            let chol = cholesky_with_jitter(&prec.view(), "factor-score precision")?;
            let a_cov = chol.inverse();
            let g_inv = chol.lower_inverse();
            let zg = state.latent.select(Axis(0), &block.rows);
            let mean = zg.dot(&w).dot(&a_cov);
            let noise = Array2::from_shape_fn((block.rows.len(), k), |_| {
                rng.sample::<f64, _>(StandardNormal)
            })
            .dot(&g_inv);
            let fg = mean + noise;
            for (local, &row) in block.rows.iter().enumerate() {
                state.factor_scores.row_mut(row).assign(&fg.row(local));
            }
        }
        Ok(())
    }

    /// Posterior draw for one loadings row given precomputed block sufficient
    /// statistics F'F and (F'z)_j. Shared by the batched sweep and the
    /// public per-row sampler.
    fn loadings_row_draw(
        &self,
        state: &ModelState,
        group: usize,
        j: usize,
        f_gram: &Array2<f64>,
        ftz_j: &ArrayView1<f64>,
        rng: &mut ChaCha20Rng,
    ) -> Result<Array1<f64>> {
        let k = self.hyper.n_factors;
        let phi_pop = self.group_precision(state, group);
        let sigma2_inv = 1.0 / state.noise_vars[j];
        let mut prec = Array2::<f64>::zeros((k, k));
        for a in 0..k {
            for b in 0..k {
                prec[(a, b)] = f_gram[(a, b)] * sigma2_inv;
            }
            prec[(a, a)] += phi_pop;
        }
        let chol = cholesky_with_jitter(&prec.view(), "loadings-row precision")?;
        let prior_mean = state.shared_loadings.row(j);
        let rhs = Array1::from_shape_fn(k, |c| phi_pop * prior_mean[c] + ftz_j[c] * sigma2_inv);
        let mean = chol.solve_vec(&rhs.view());
        let z = Array1::from_shape_fn(k, |_| rng.sample::<f64, _>(StandardNormal));
        let noise = chol.solve_transpose_vec(&z.view());
        Ok(mean + noise)
    }

    /// Public per-row op: draw beta_j for one population from its full
    /// conditional N(C(phi m_j + F'z_j / sigma2_j), C).
    pub fn sample_loadings_row(
        &self,
        state: &ModelState,
        pop: Population,
        j: usize,
        rng: &mut ChaCha20Rng,
    ) -> Result<Array1<f64>> {
        let group = self.group_of(pop);
        let block = &self.blocks[group];
        let fg = state.factor_scores.select(Axis(0), &block.rows);
        let f_gram = linalg::gram(&fg.view());
        let ftz_j = Array1::from_shape_fn(self.hyper.n_factors, |c| {
            block
                .rows
                .iter()
                .enumerate()
                .map(|(local, &row)| fg[(local, c)] * state.latent[(row, j)])
                .sum()
        });
        self.loadings_row_draw(state, group, j, &f_gram, &ftz_j.view(), rng)
    }

    fn update_loadings_block(
        &self,
        state: &mut ModelState,
        group: usize,
        rng: &mut ChaCha20Rng,
    ) -> Result<()> {
        let block = &self.blocks[group];
        let fg = state.factor_scores.select(Axis(0), &block.rows);
        let zg = state.latent.select(Axis(0), &block.rows);
        let f_gram = linalg::gram(&fg.view());
        let ftz = fg.t().dot(&zg); // K x P'
        for j in 0..self.p_latent() {
            let draw =
                self.loadings_row_draw(state, group, j, &f_gram, &ftz.column(j), rng)?;
            if group == 0 {
                state.source_loadings.row_mut(j).assign(&draw);
            } else {
                state.target_loadings.row_mut(j).assign(&draw);
            }
        }
        if self.kind == ModelKind::Pooled {
            state.target_loadings.assign(&state.source_loadings);
        }
        Ok(())
    }

    /// Public per-row op: draw the shared loadings row m_j from
    /// N((phi_S beta^S_j + phi_T beta^T_j) / (phi + phi_S + phi_T),
    ///   (phi + phi_S + phi_T)^-1 I_K).
    pub fn sample_shared_row(
        &self,
        state: &ModelState,
        j: usize,
        rng: &mut ChaCha20Rng,
    ) -> Array1<f64> {
        let (phi_s, phi_t) = (state.source_prec, state.target_prec);
        let denom = self.hyper.global_precision + phi_s + phi_t;
        let sd = denom.powf(-0.5);
        let bs = state.source_loadings.row(j);
        let bt = state.target_loadings.row(j);
        Array1::from_shape_fn(self.hyper.n_factors, |c| {
            let mean = (phi_s * bs[c] + phi_t * bt[c]) / denom;
            mean + sd * rng.sample::<f64, _>(StandardNormal)
        })
    }

    fn update_shared_loadings(&self, state: &mut ModelState, rng: &mut ChaCha20Rng) {
        if self.kind == ModelKind::Pooled {
            return;
        }
        for j in 0..self.p_latent() {
            let draw = self.sample_shared_row(state, j, rng);
            state.shared_loadings.row_mut(j).assign(&draw);
        }
    }

    /// Public per-column op: draw sigma2_j for a continuous column from
    /// IG((v + n)/2, (v + residual sum of squares)/2).
    pub fn sample_noise_var(
        &self,
        state: &ModelState,
        j: usize,
        rng: &mut ChaCha20Rng,
    ) -> Result<f64> {
        if self.kinds[j] == ColumnKind::Binary {
            return Err(Error::invalid(format!(
                "column {j} is binary; its variance is fixed at 1"
            )));
        }
        let mut ss = 0.0;
        for (g, block) in self.blocks.iter().enumerate() {
            let beta = self.group_loadings(state, g);
            for &i in &block.rows {
                let pred = beta.row(j).dot(&state.factor_scores.row(i));
                let r = state.latent[(i, j)] - pred;
                ss += r * r;
            }
        }
        Ok(draw_inverse_gamma(
            0.5 * (self.hyper.noise_df + self.n_rows() as f64),
            0.5 * (self.hyper.noise_df + ss),
            rng,
        ))
    }

    fn update_noise_vars(&self, state: &mut ModelState, rng: &mut ChaCha20Rng) {
        if self.continuous_cols.is_empty() {
            return;
        }
        let p = self.p_latent();
        let mut ss = vec![0.0f64; p];
        for (g, block) in self.blocks.iter().enumerate() {
            if block.rows.is_empty() {
                continue;
            }
            let beta = self.group_loadings(state, g);
            let fg = state.factor_scores.select(Axis(0), &block.rows);
            let pred = fg.dot(&beta.t());
            for (local, &row) in block.rows.iter().enumerate() {
                for &j in &self.continuous_cols {
                    let r = state.latent[(row, j)] - pred[(local, j)];
                    ss[j] += r * r;
                }
            }
        }
        let shape = 0.5 * (self.hyper.noise_df + self.n_rows() as f64);
        for &j in &self.continuous_cols {
            state.noise_vars[j] =
                draw_inverse_gamma(shape, 0.5 * (self.hyper.noise_df + ss[j]), rng);
        }
    }

    /// Public op: draw a population precision from its Gamma full
    /// conditional under the configured Gamma prior.
    pub fn sample_precision(
        &self,
        state: &ModelState,
        pop: Population,
        rng: &mut ChaCha20Rng,
    ) -> Result<f64> {
        let prior = self.hyper.precision_prior.ok_or_else(|| {
            Error::invalid("precision sampling requires a precision prior")
        })?;
        let beta = match pop {
            Population::Source => &state.source_loadings,
            Population::Target => &state.target_loadings,
        };
        let mut ssq = 0.0;
        for j in 0..self.p_latent() {
            for c in 0..self.hyper.n_factors {
                let d = beta[(j, c)] - state.shared_loadings[(j, c)];
                ssq += d * d;
            }
        }
        let shape = prior.shape + 0.5 * (self.p_latent() * self.hyper.n_factors) as f64;
        let rate = prior.rate + 0.5 * ssq;
        Ok(Gamma::new(shape, 1.0 / rate)
            .expect("positive gamma parameters")
            .sample(rng))
    }

    fn update_precisions(&self, state: &mut ModelState, rng: &mut ChaCha20Rng) -> Result<()> {
        if self.hyper.precision_prior.is_none() || self.kind == ModelKind::Pooled {
            return Ok(());
        }
        state.source_prec = self.sample_precision(state, Population::Source, rng)?;
        state.target_prec = self.sample_precision(state, Population::Target, rng)?;
        Ok(())
    }

    /// One full sweep in the fixed order: utilities, factor scores, source
    /// loadings, target loadings, shared loadings, noise variances, optional
    /// precisions.
    pub fn sweep(&self, state: &mut ModelState, rng: &mut ChaCha20Rng) -> Result<()> {
        self.update_probit_latents(state, rng);
        self.update_factor_scores(state, rng)?;
        for g in 0..self.n_groups() {
            self.update_loadings_block(state, g, rng)?;
        }
        self.update_shared_loadings(state, rng);
        self.update_noise_vars(state, rng);
        self.update_precisions(state, rng)?;
        debug_assert!(self.check_state(state).is_ok(), "state invariants violated");
        Ok(())
    }

    /// Geweke data kernel: redraw (F, Z) from the model given the current
    /// parameters, replacing the observed data in place.
    pub fn redraw_data_from_model(&mut self, state: &mut ModelState, rng: &mut ChaCha20Rng) {
        let k = self.hyper.n_factors;
        for i in 0..self.n_rows() {
            let beta = if self.row_group[i] == 0 {
                &state.source_loadings
            } else {
                &state.target_loadings
            };
            let f_i = Array1::from_shape_fn(k, |_| rng.sample::<f64, _>(StandardNormal));
            for j in 0..self.p_latent() {
                let sd = state.noise_vars[j].sqrt();
                let z = beta.row(j).dot(&f_i) + sd * rng.sample::<f64, _>(StandardNormal);
                match self.kinds[j] {
                    ColumnKind::Continuous => {
                        self.z[(i, j)] = z;
                        state.latent[(i, j)] = z;
                    }
                    ColumnKind::Binary => {
                        self.z[(i, j)] = if z > 0.0 { 1.0 } else { 0.0 };
                        state.latent[(i, j)] = z;
                    }
                }
            }
            state.factor_scores.row_mut(i).assign(&f_i);
        }
    }
}

/// Draw from InverseGamma(shape, rate): invert a Gamma(shape, 1/rate) draw.
fn draw_inverse_gamma(shape: f64, rate: f64, rng: &mut ChaCha20Rng) -> f64 {
    let g = Gamma::new(shape, 1.0 / rate)
        .expect("positive inverse-gamma parameters")
        .sample(rng);
    1.0 / g
}

const CHAIN_TAG: u64 = 0x6368_6169; // "chai"

/// Run the Gibbs sampler on a validated dataset. The outcome joins the
/// covariates as column 0 of the latent vector; covariates are standardized
/// with training statistics that are persisted in the result.
pub fn run_chain(
    dataset: &Dataset,
    hyper: &Hyperparameters,
    config: &ChainConfig,
    kind: ModelKind,
    hooks: &RunHooks,
) -> Result<PosteriorSamples> {
    let y = dataset
        .y()
        .ok_or_else(|| Error::invalid("fitting requires an outcome column"))?;
    if kind == ModelKind::Hierarchical && dataset.count_population(Population::Target) == 0 {
        return Err(Error::invalid(
            "hierarchical fit requires at least one target row",
        ));
    }
    let p_latent = dataset.n_covariates() + 1;
    hyper.validate(p_latent)?;
    config.validate()?;

    let standardizer = Standardizer::fit(dataset);
    let x_std = standardizer.apply(dataset.x());
    let n = dataset.n_rows();
    let mut z = Array2::<f64>::zeros((n, p_latent));
    for i in 0..n {
        z[(i, 0)] = f64::from(y[i]);
        for j in 0..dataset.n_covariates() {
            z[(i, j + 1)] = x_std[(i, j)];
        }
    }
    let mut kinds = vec![ColumnKind::Binary];
    kinds.extend(dataset.columns().iter().map(|c| c.kind));

    let sampler = Sampler::new(z, kinds, dataset.populations().to_vec(), hyper.clone(), kind)?;
    let mut chains = Vec::with_capacity(config.n_chains);
    let mut interrupted = false;
    for chain_idx in 0..config.n_chains {
        if cancelled(hooks) {
            interrupted = true;
            break;
        }
        let mut rng = stream(config.seed, &[CHAIN_TAG, chain_idx as u64]);
        let mut state = sampler.init_state(&mut rng);
        let mut states = Vec::with_capacity(config.retained_per_chain());
        let mut mean_factors = Array2::<f64>::zeros(state.factor_scores.raw_dim());
        let mut sweeps_completed = 0usize;
        for sweep_idx in 1..=config.iters {
            if cancelled(hooks) {
                interrupted = true;
                break;
            }
            sampler.sweep(&mut state, &mut rng).map_err(|e| {
                Error::numerical(format!("sweep {sweep_idx} of chain {chain_idx}: {e}"))
            })?;
            sweeps_completed = sweep_idx;
            if sweep_idx > config.burnin && (sweep_idx - config.burnin) % config.thin == 0 {
                mean_factors += &state.factor_scores;
                states.push(RetainedState {
                    shared_loadings: state.shared_loadings.clone(),
                    source_loadings: state.source_loadings.clone(),
                    target_loadings: state.target_loadings.clone(),
                    noise_vars: state.noise_vars.clone(),
                    factor_scores: config
                        .record_factors
                        .then(|| state.factor_scores.clone()),
                    source_prec: state.source_prec,
                    target_prec: state.target_prec,
                });
            }
            if let Some(progress) = &hooks.progress {
                progress(ProgressEvent {
                    chain: chain_idx,
                    sweep: sweep_idx,
                    total_sweeps: config.iters,
                });
            }
        }
        if !states.is_empty() {
            mean_factors /= states.len() as f64;
        }
        chains.push(ChainSamples {
            states,
            final_factors: state.factor_scores.clone(),
            mean_factors,
            sweeps_completed,
        });
    }
    let samples = PosteriorSamples {
        kind,
        hyper: hyper.clone(),
        config: config.clone(),
        columns: dataset.columns().to_vec(),
        standardizer,
        train_populations: dataset.populations().to_vec(),
        chains,
        interrupted,
    };
    if samples.n_states() == 0 {
        return Err(Error::invalid(
            "run was cancelled before any sample was retained",
        ));
    }
    Ok(samples)
}

fn cancelled(hooks: &RunHooks) -> bool {
    hooks.cancel.is_some_and(|c| c.load(Ordering::Relaxed))
}
