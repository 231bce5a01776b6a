//! Evaluation: AUROC, cross-validation, the simulation benchmark runner, and
//! the factor-score scatter export.

use std::sync::atomic::{AtomicBool, Ordering};

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{fit_lasso, fit_plain_lfm, fit_tl_lfm, predict_lasso, LassoConfig};
use crate::data::{Dataset, Hyperparameters, Population};
use crate::error::{Error, Result};
use crate::gibbs::{ChainConfig, ModelKind, PosteriorSamples, RunHooks};
use crate::linalg::{gram, symmetric_eigen};
use crate::predict::{predict, PredictOptions};
use crate::rng::{derive_u64, stream};
use crate::simulate::{simulate, SimulationSpec, SplitRatio};

/// Exact Mann-Whitney AUROC with average ranks for ties. The numerator and
/// denominator are assembled in integer arithmetic, so the result equals the
/// all-pairs count (wins plus half-ties) bit for bit.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dimension(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::invalid("AUROC needs at least one instance"));
    }
    if let Some(bad) = scores.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite score {bad}")));
    }
    if let Some(bad) = labels.iter().find(|&&v| v > 1) {
        return Err(Error::invalid(format!("labels must be 0/1, got {bad}")));
    }
    let n = scores.len();
    let n_pos = labels.iter().filter(|&&v| v == 1).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid(
            "AUROC undefined: all instances share one outcome class",
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of positives; a tie group spanning 1-based ranks
    // a..=b contributes (a + b) per member.
    let mut twice_rank_sum_pos: u64 = 0;
    let mut i = 0usize;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let twice_avg_rank = (i + 1 + j + 1) as u64;
        let pos_in_group = (i..=j).filter(|&t| labels[order[t]] == 1).count() as u64;
        twice_rank_sum_pos += twice_avg_rank * pos_in_group;
        i = j + 1;
    }
    let n_pos = n_pos as u64;
    let n_neg = n_neg as u64;
    let numerator = twice_rank_sum_pos - n_pos * (n_pos + 1);
    Ok(numerator as f64 / (2 * n_pos * n_neg) as f64)
}

/// Deal rows into `n_folds` folds, stratified by `keys`: rows sharing a key
/// are shuffled and spread round-robin, with the starting fold rotating
/// across strata so overall fold sizes stay balanced.
pub fn stratified_fold_assignment(
    keys: &[u64],
    n_folds: usize,
    rng: &mut ChaCha20Rng,
) -> Vec<usize> {
    assert!(n_folds >= 2, "need at least two folds");
    let mut strata: Vec<(u64, Vec<usize>)> = Vec::new();
    for (i, &k) in keys.iter().enumerate() {
        match strata.iter_mut().find(|(sk, _)| *sk == k) {
            Some((_, rows)) => rows.push(i),
            None => strata.push((k, vec![i])),
        }
    }
    strata.sort_by_key(|(k, _)| *k);
    let mut assignment = vec![0usize; keys.len()];
    let mut offset = 0usize;
    for (_, mut rows) in strata {
        rows.shuffle(rng);
        for (pos, row) in rows.iter().enumerate() {
            assignment[*row] = (offset + pos) % n_folds;
        }
        offset = (offset + rows.len()) % n_folds;
    }
    assignment
}

const CV_TAG: u64 = 0x6376_6b00; // "cvk"
const EXPERIMENT_TAG: u64 = 0x6578_7000; // "exp"

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KScore {
    pub k: usize,
    pub mean_auroc: f64,
    pub fold_aurocs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    pub chosen_k: usize,
    pub table: Vec<KScore>,
    /// True when the first fold assignment left a single-class fold and the
    /// rows were dealt again.
    pub restratified: bool,
}

/// Highest mean AUROC; ties go to the smaller K.
pub(crate) fn choose_best_k(table: &[KScore]) -> usize {
    let mut best = &table[0];
    for row in &table[1..] {
        let better = row.mean_auroc > best.mean_auroc
            || (row.mean_auroc == best.mean_auroc && row.k < best.k);
        if better {
            best = row;
        }
    }
    best.k
}

fn fold_is_usable(
    dataset: &Dataset,
    assignment: &[usize],
    n_folds: usize,
    kind: ModelKind,
) -> bool {
    let y = dataset.y().expect("checked by caller");
    for f in 0..n_folds {
        let held: Vec<usize> = (0..assignment.len()).filter(|&i| assignment[i] == f).collect();
        if held.is_empty() {
            return false;
        }
        let pos = held.iter().filter(|&&i| y[i] == 1).count();
        if pos == 0 || pos == held.len() {
            return false;
        }
        if kind == ModelKind::Hierarchical {
            let train_targets = (0..assignment.len())
                .filter(|&i| assignment[i] != f)
                .filter(|&i| dataset.populations()[i] == Population::Target)
                .count();
            if train_targets == 0 {
                return false;
            }
        }
    }
    true
}

/// Score every row of `dataset` with its own population's marginal model.
fn predict_by_population(
    samples: &PosteriorSamples,
    dataset: &Dataset,
    opts: &PredictOptions,
) -> Result<Vec<f64>> {
    let mut scores = vec![f64::NAN; dataset.n_rows()];
    for pop in [Population::Source, Population::Target] {
        let rows = dataset.population_rows(pop);
        if rows.is_empty() {
            continue;
        }
        let sub = dataset.subset(&rows);
        let pred = predict(samples, &sub, pop, opts)?;
        for (slot, p) in rows.iter().zip(pred.prob) {
            scores[*slot] = p;
        }
    }
    Ok(scores)
}

/// Choose the factor count by stratified k-fold cross-validation.
///
/// Folds are stratified by population and outcome jointly. If a fold ends up
/// with a single outcome class (or, for the hierarchical model, a training
/// part without target rows) the rows are dealt once more with a fresh
/// stream; a second failure is an error. Ties between factor counts resolve
/// toward the smaller model.
pub fn cross_validate_k(
    dataset: &Dataset,
    kind: ModelKind,
    k_grid: &[usize],
    hyper_template: &Hyperparameters,
    n_folds: usize,
    seed: u64,
) -> Result<KSelection> {
    let y = dataset
        .y()
        .ok_or_else(|| Error::invalid("cross-validation requires an outcome column"))?;
    if k_grid.is_empty() {
        return Err(Error::invalid("empty factor-count grid"));
    }
    let p_latent = dataset.n_covariates() + 1;
    if let Some(&bad) = k_grid.iter().find(|&&k| k == 0 || k > p_latent) {
        return Err(Error::invalid(format!(
            "factor count {bad} outside 1..={p_latent}"
        )));
    }
    if n_folds < 2 || n_folds > dataset.n_rows() {
        return Err(Error::invalid(format!(
            "fold count {n_folds} invalid for {} rows",
            dataset.n_rows()
        )));
    }
    let keys: Vec<u64> = dataset
        .populations()
        .iter()
        .zip(y)
        .map(|(&p, &yi)| (p == Population::Target) as u64 * 2 + yi as u64)
        .collect();
    let mut assignment =
        stratified_fold_assignment(&keys, n_folds, &mut stream(seed, &[CV_TAG, 0]));
    let mut restratified = false;
    if !fold_is_usable(dataset, &assignment, n_folds, kind) {
        assignment = stratified_fold_assignment(&keys, n_folds, &mut stream(seed, &[CV_TAG, 1]));
        restratified = true;
        if !fold_is_usable(dataset, &assignment, n_folds, kind) {
            return Err(Error::invalid(
                "folds keep a single outcome class even after re-stratifying once; \
                 use fewer folds",
            ));
        }
    }

    let mut grid: Vec<usize> = k_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let mut table = Vec::with_capacity(grid.len());
    for &k in &grid {
        let mut fold_aurocs = Vec::with_capacity(n_folds);
        for f in 0..n_folds {
            let train_rows: Vec<usize> =
                (0..assignment.len()).filter(|&i| assignment[i] != f).collect();
            let held_rows: Vec<usize> =
                (0..assignment.len()).filter(|&i| assignment[i] == f).collect();
            let train = dataset.subset(&train_rows);
            let held = dataset.subset(&held_rows);
            let mut hyper = hyper_template.clone();
            hyper.n_factors = k;
            hyper.seed = derive_u64(seed, &[CV_TAG, 2, k as u64, f as u64]);
            let config = ChainConfig::from_hyper(&hyper);
            let samples = crate::gibbs::run_chain(&train, &hyper, &config, kind, &RunHooks::default())?;
            let scores = predict_by_population(&samples, &held, &PredictOptions::default())?;
            fold_aurocs.push(auroc(&scores, held.y().expect("held-out rows keep y"))?);
        }
        let mean_auroc = fold_aurocs.iter().sum::<f64>() / fold_aurocs.len() as f64;
        table.push(KScore { k, mean_auroc, fold_aurocs });
    }
    Ok(KSelection { chosen_k: choose_best_k(&table), table, restratified })
}

/// Methods compared in the benchmark. The two lasso variants differ only in
/// their training rows; reports carry both and the headline picks the better
/// one per test set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    TlLfm,
    Lfm,
    LassoPooled,
    LassoTarget,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::TlLfm,
        Method::Lfm,
        Method::LassoPooled,
        Method::LassoTarget,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::TlLfm => "TL-LFM",
            Method::Lfm => "LFM",
            Method::LassoPooled => "Lasso (pooled)",
            Method::LassoTarget => "Lasso (target-only)",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestSet {
    Target,
    Source,
}

impl TestSet {
    pub const ALL: [TestSet; 2] = [TestSet::Target, TestSet::Source];

    pub fn population(self) -> Population {
        match self {
            TestSet::Target => Population::Target,
            TestSet::Source => Population::Source,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            TestSet::Target => "target",
            TestSet::Source => "source",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Shape of the simulated cohorts; `ratio` and `seed` are overridden per
    /// unit of work.
    pub base: SimulationSpec,
    pub ratios: Vec<SplitRatio>,
    pub repeats: usize,
    pub k_fit: usize,
    pub iters: usize,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
}

impl ExperimentConfig {
    /// The benchmark at CI scale: 1500 sweeps with 500 burn-in keeps the
    /// three-ratio run tractable; `full_scale` restores the full 3000/1000
    /// schedule.
    pub fn benchmark(seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            base: SimulationSpec::benchmark(crate::simulate::STANDARD_RATIOS[0], 0),
            ratios: crate::simulate::STANDARD_RATIOS.to_vec(),
            repeats: 10,
            k_fit: 20,
            iters: 1500,
            burnin: 500,
            thin: 2,
            seed,
        }
    }

    pub fn full_scale(mut self) -> ExperimentConfig {
        self.iters = 3000;
        self.burnin = 1000;
        self
    }

    /// Minimum successful repeats per ratio (80%, rounded up).
    pub fn min_successes(&self) -> usize {
        (self.repeats * 8).div_ceil(10)
    }

    fn validate(&self) -> Result<()> {
        if self.ratios.is_empty() {
            return Err(Error::invalid("experiment needs at least one ratio"));
        }
        if self.repeats == 0 {
            return Err(Error::invalid("experiment needs at least one repeat"));
        }
        for &r in &self.ratios {
            let mut spec = self.base.clone();
            spec.ratio = r;
            spec.validate()?;
        }
        Ok(())
    }
}

/// Cancellation flag and status callback for the experiment runner. The
/// cancel flag is also forwarded to every chain fit, so interruption takes
/// effect at the next sweep boundary.
#[derive(Default)]
pub struct ExperimentHooks<'a> {
    pub cancel: Option<&'a AtomicBool>,
    pub status: Option<&'a (dyn Fn(&str) + Sync)>,
}

impl ExperimentHooks<'_> {
    fn cancelled(&self) -> bool {
        self.cancel.map(|c| c.load(Ordering::Relaxed)).unwrap_or(false)
    }

    fn status(&self, msg: &str) {
        if let Some(cb) = self.status {
            cb(msg);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub test_set: TestSet,
    pub mean: f64,
    /// Standard error of the mean over successful repeats.
    pub se: f64,
    /// AUROC per successful repeat, in repeat order.
    pub per_repeat: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatFailure {
    pub repeat: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub ratio: SplitRatio,
    pub methods: Vec<MethodSummary>,
    pub failures: Vec<RepeatFailure>,
    pub source_test_regenerated: bool,
}

impl RatioReport {
    pub fn summary(&self, method: Method, set: TestSet) -> Option<&MethodSummary> {
        self.methods
            .iter()
            .find(|m| m.method == method && m.test_set == set)
    }

    /// The better lasso variant for a test set (by mean AUROC).
    pub fn lasso_headline(&self, set: TestSet) -> Option<&MethodSummary> {
        let pooled = self.summary(Method::LassoPooled, set)?;
        let target = self.summary(Method::LassoTarget, set)?;
        Some(if target.mean > pooled.mean { target } else { pooled })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub k_fit: usize,
    pub iters: usize,
    pub burnin: usize,
    pub thin: usize,
    pub repeats: usize,
    pub ratios: Vec<RatioReport>,
    pub interrupted: bool,
    /// Measured, not persisted: keeps serialized reports byte-identical
    /// across reruns of the same seed.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub report: ExperimentReport,
    /// Factor scatter from the first repeat's TL-LFM fit of each ratio.
    pub scatters: Vec<(SplitRatio, ScatterData)>,
}

struct UnitOutcome {
    aurocs: Vec<(Method, TestSet, f64)>,
    source_test_regenerated: bool,
    scatter: Option<ScatterData>,
}

fn run_unit(
    config: &ExperimentConfig,
    ratio_idx: usize,
    repeat: usize,
    hooks: &ExperimentHooks,
) -> Result<UnitOutcome> {
    let ratio = config.ratios[ratio_idx];
    let unit_seed = derive_u64(config.seed, &[EXPERIMENT_TAG, ratio_idx as u64, repeat as u64]);
    let mut spec = config.base.clone();
    spec.ratio = ratio;
    spec.seed = unit_seed;
    let (_truth, data) = simulate(&spec)?;

    let hyper = Hyperparameters {
        n_factors: config.k_fit,
        iters: config.iters,
        burnin: config.burnin,
        thin: config.thin,
        seed: derive_u64(unit_seed, &[0]),
        ..Hyperparameters::default()
    };
    let chain_config = ChainConfig::from_hyper(&hyper);
    let run_hooks = RunHooks { cancel: hooks.cancel, progress: None };

    hooks.status(&format!("ratio {ratio} repeat {repeat}: fitting TL-LFM"));
    let tl = fit_tl_lfm(&data.train, &hyper, &chain_config, &run_hooks)?;
    if tl.interrupted {
        return Err(Error::invalid("cancelled"));
    }
    hooks.status(&format!("ratio {ratio} repeat {repeat}: fitting pooled LFM"));
    let mut lfm_hyper = hyper.clone();
    lfm_hyper.seed = derive_u64(unit_seed, &[1]);
    let lfm = fit_plain_lfm(&data.train, &lfm_hyper, &ChainConfig::from_hyper(&lfm_hyper), &run_hooks)?;
    if lfm.interrupted {
        return Err(Error::invalid("cancelled"));
    }

    hooks.status(&format!("ratio {ratio} repeat {repeat}: fitting lasso baselines"));
    let lasso_pooled = fit_lasso(
        &data.train,
        &LassoConfig { seed: derive_u64(unit_seed, &[2]), ..LassoConfig::default() },
    )?;
    let target_rows = data.train.population_rows(Population::Target);
    let lasso_target = fit_lasso(
        &data.train.subset(&target_rows),
        &LassoConfig { seed: derive_u64(unit_seed, &[3]), ..LassoConfig::default() },
    )?;

    let opts = PredictOptions::default();
    let mut aurocs = Vec::with_capacity(8);
    for set in TestSet::ALL {
        let ds = match set {
            TestSet::Target => &data.test_target,
            TestSet::Source => &data.test_source,
        };
        let y = ds.y().expect("simulated test sets carry outcomes");
        let tl_scores = predict(&tl, ds, set.population(), &opts)?;
        aurocs.push((Method::TlLfm, set, auroc(&tl_scores.prob, y)?));
        let lfm_scores = predict(&lfm, ds, set.population(), &opts)?;
        aurocs.push((Method::Lfm, set, auroc(&lfm_scores.prob, y)?));
        aurocs.push((
            Method::LassoPooled,
            set,
            auroc(&predict_lasso(&lasso_pooled, ds)?, y)?,
        ));
        aurocs.push((
            Method::LassoTarget,
            set,
            auroc(&predict_lasso(&lasso_target, ds)?, y)?,
        ));
    }

    let scatter = if repeat == 0 {
        Some(export_factor_scatter(&tl, FactorSource::FinalIteration)?)
    } else {
        None
    };
    Ok(UnitOutcome {
        aurocs,
        source_test_regenerated: data.source_test_regenerated,
        scatter,
    })
}

/// Run the full benchmark: for every ratio and repeat, simulate a fresh
/// cohort from its own ground truth, fit all methods, and score the held-out
/// sets. Units run in parallel; aggregation is order-deterministic. A repeat
/// may fail (the failure is recorded), but fewer than 80% successes for any
/// ratio is an error unless the run was cancelled.
pub fn run_experiment(
    config: &ExperimentConfig,
    hooks: &ExperimentHooks,
) -> Result<ExperimentOutput> {
    config.validate()?;
    let start = std::time::Instant::now();
    let units: Vec<(usize, usize)> = (0..config.ratios.len())
        .flat_map(|r| (0..config.repeats).map(move |i| (r, i)))
        .collect();
    let outcomes: Vec<(usize, usize, Result<UnitOutcome>)> = units
        .par_iter()
        .map(|&(ratio_idx, repeat)| {
            let outcome = if hooks.cancelled() {
                Err(Error::invalid("cancelled"))
            } else {
                run_unit(config, ratio_idx, repeat, hooks)
            };
            (ratio_idx, repeat, outcome)
        })
        .collect();

    let interrupted = hooks.cancelled();
    let mut ratios = Vec::with_capacity(config.ratios.len());
    let mut scatters = Vec::new();
    for (ratio_idx, &ratio) in config.ratios.iter().enumerate() {
        let mut failures = Vec::new();
        let mut regenerated = false;
        let mut per_cell: Vec<Vec<f64>> = vec![Vec::new(); Method::ALL.len() * TestSet::ALL.len()];
        for (_, repeat, outcome) in outcomes.iter().filter(|(r, _, _)| *r == ratio_idx) {
            match outcome {
                Ok(unit) => {
                    regenerated |= unit.source_test_regenerated;
                    for &(method, set, value) in &unit.aurocs {
                        let m = Method::ALL.iter().position(|&x| x == method).expect("known");
                        let s = TestSet::ALL.iter().position(|&x| x == set).expect("known");
                        per_cell[m * TestSet::ALL.len() + s].push(value);
                    }
                    if let Some(sc) = &unit.scatter {
                        scatters.push((ratio, sc.clone()));
                    }
                }
                Err(e) => failures.push(RepeatFailure { repeat: *repeat, message: e.to_string() }),
            }
        }
        let successes = config.repeats - failures.len();
        if successes < config.min_successes() && !interrupted {
            return Err(Error::numerical(format!(
                "ratio {ratio}: only {successes} of {} repeats succeeded (need {}); first failure: {}",
                config.repeats,
                config.min_successes(),
                failures.first().map(|f| f.message.as_str()).unwrap_or("none"),
            )));
        }
        let mut methods = Vec::with_capacity(per_cell.len());
        for (m, &method) in Method::ALL.iter().enumerate() {
            for (s, &set) in TestSet::ALL.iter().enumerate() {
                let values = &per_cell[m * TestSet::ALL.len() + s];
                if values.is_empty() {
                    continue;
                }
                let n = values.len() as f64;
                let mean = values.iter().sum::<f64>() / n;
                let se = if values.len() > 1 {
                    let var =
                        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
                    (var / n).sqrt()
                } else {
                    0.0
                };
                methods.push(MethodSummary {
                    method,
                    test_set: set,
                    mean,
                    se,
                    per_repeat: values.clone(),
                });
            }
        }
        ratios.push(RatioReport {
            ratio,
            methods,
            failures,
            source_test_regenerated: regenerated,
        });
    }
    let report = ExperimentReport {
        seed: config.seed,
        k_fit: config.k_fit,
        iters: config.iters,
        burnin: config.burnin,
        thin: config.thin,
        repeats: config.repeats,
        ratios,
        interrupted,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    Ok(ExperimentOutput { report, scatters })
}

/// Which factor-score snapshot feeds the scatter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FactorSource {
    FinalIteration,
    ChainMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterData {
    /// Top-2 principal-component coordinates per training row.
    pub points: Vec<[f64; 2]>,
    pub populations: Vec<Population>,
    pub source: FactorSource,
    /// Fraction of factor-score variance captured by each component.
    pub explained: [f64; 2],
}

/// Project the factor scores of the first chain onto their top two principal
/// components. Component signs are canonicalized (largest-magnitude entry
/// positive) so reruns and platforms agree.
pub fn export_factor_scatter(
    samples: &PosteriorSamples,
    source: FactorSource,
) -> Result<ScatterData> {
    let chain = samples
        .chains
        .first()
        .ok_or_else(|| Error::invalid("no chains in posterior samples"))?;
    let f = match source {
        FactorSource::FinalIteration => &chain.final_factors,
        FactorSource::ChainMean => &chain.mean_factors,
    };
    let (n, k) = f.dim();
    if k < 2 {
        return Err(Error::invalid("factor scatter needs at least two factors"));
    }
    if n < 2 {
        return Err(Error::invalid("factor scatter needs at least two rows"));
    }
    let mut centered = f.clone();
    for mut col in centered.axis_iter_mut(Axis(1)) {
        let mean = col.sum() / n as f64;
        col.mapv_inplace(|v| v - mean);
    }
    let mut cov = gram(&centered.view());
    cov.mapv_inplace(|v| v / n as f64);
    let (values, vectors) = symmetric_eigen(&cov.view());
    let mut basis = Array2::<f64>::zeros((k, 2));
    for c in 0..2 {
        let mut axis = vectors.column(c).to_owned();
        let lead = axis
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .expect("k >= 2");
        if axis[lead] < 0.0 {
            axis.mapv_inplace(|v| -v);
        }
        basis.column_mut(c).assign(&axis);
    }
    let projected = centered.dot(&basis);
    let trace = values.sum();
    let explained = if trace > 0.0 {
        [values[0] / trace, values[1] / trace]
    } else {
        [0.0, 0.0]
    };
    Ok(ScatterData {
        points: (0..n).map(|i| [projected[(i, 0)], projected[(i, 1)]]).collect(),
        populations: samples.train_populations.clone(),
        source,
        explained,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ColumnKind, ColumnMeta, Standardizer};
    use crate::gibbs::ChainSamples;
    use crate::simulate::STANDARD_RATIOS;
    use proptest::prelude::*;

    #[test]
    fn auroc_spec_example() {
        let got = auroc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap();
        assert_eq!(got, 0.75);
    }

    #[test]
    fn auroc_edge_values() {
        assert_eq!(auroc(&[0.2, 0.9], &[0, 1]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.9, 0.2], &[0, 1]).unwrap(), 0.0);
        assert_eq!(auroc(&[0.5, 0.5], &[0, 1]).unwrap(), 0.5);
    }

    #[test]
    fn auroc_rejects_degenerate_input() {
        assert!(auroc(&[0.1, 0.2], &[1, 1]).is_err());
        assert!(auroc(&[0.1, 0.2], &[0, 0]).is_err());
        assert!(auroc(&[], &[]).is_err());
        assert!(auroc(&[0.1], &[0, 1]).is_err());
        assert!(auroc(&[f64::NAN, 0.2], &[0, 1]).is_err());
        assert!(auroc(&[0.1, 0.2], &[0, 2]).is_err());
    }

    fn pair_oracle(scores: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0u64;
        let mut ties = 0u64;
        let mut pairs = 0u64;
        for (i, &si) in scores.iter().enumerate() {
            if labels[i] != 1 {
                continue;
            }
            for (j, &sj) in scores.iter().enumerate() {
                if labels[j] != 0 {
                    continue;
                }
                pairs += 1;
                if si > sj {
                    wins += 1;
                } else if si == sj {
                    ties += 1;
                }
            }
        }
        (2 * wins + ties) as f64 / (2 * pairs) as f64
    }

    /// 200 instances quantized to a handful of levels so ties are plentiful;
    /// the rank formulation must equal the all-pairs count exactly.
    #[test]
    fn auroc_matches_pair_oracle_exactly() {
        let mut rng = stream(11, &[0]);
        use rand::Rng;
        let scores: Vec<f64> = (0..200).map(|_| (rng.random::<f64>() * 7.0).floor() / 7.0).collect();
        let labels: Vec<u8> = (0..200).map(|i| u8::from(scores[i] + rng.random::<f64>() > 0.9)).collect();
        assert!(labels.iter().any(|&v| v == 0) && labels.iter().any(|&v| v == 1));
        let got = auroc(&scores, &labels).unwrap();
        assert_eq!(got, pair_oracle(&scores, &labels));
    }

    proptest! {
        #[test]
        fn auroc_equals_pair_oracle(
            raw in proptest::collection::vec((0u8..=1, 0i32..6), 2..80)
        ) {
            let labels: Vec<u8> = raw.iter().map(|(l, _)| *l).collect();
            prop_assume!(labels.iter().any(|&v| v == 0) && labels.iter().any(|&v| v == 1));
            let scores: Vec<f64> = raw.iter().map(|(_, s)| *s as f64 / 3.0).collect();
            let got = auroc(&scores, &labels).unwrap();
            prop_assert_eq!(got, pair_oracle(&scores, &labels));
        }

        /// Strictly increasing transforms preserve ranks, hence the exact value.
        #[test]
        fn auroc_invariant_under_monotone_transform(
            raw in proptest::collection::vec((0u8..=1, -100i32..100), 2..60)
        ) {
            let labels: Vec<u8> = raw.iter().map(|(l, _)| *l).collect();
            prop_assume!(labels.iter().any(|&v| v == 0) && labels.iter().any(|&v| v == 1));
            let scores: Vec<f64> = raw.iter().map(|(_, s)| *s as f64 / 8.0).collect();
            let base = auroc(&scores, &labels).unwrap();
            let affine: Vec<f64> = scores.iter().map(|s| 0.5 * s + 3.0).collect();
            let cubed: Vec<f64> = scores.iter().map(|s| s * s * s).collect();
            prop_assert_eq!(base, auroc(&affine, &labels).unwrap());
            prop_assert_eq!(base, auroc(&cubed, &labels).unwrap());
        }

        /// Without ties, negating scores complements the AUROC.
        #[test]
        fn auroc_complement_under_negation(
            raw in proptest::collection::vec((0u8..=1, -1000i32..1000), 2..60)
        ) {
            let mut seen = std::collections::HashSet::new();
            let raw: Vec<_> = raw.into_iter().filter(|(_, s)| seen.insert(*s)).collect();
            let labels: Vec<u8> = raw.iter().map(|(l, _)| *l).collect();
            prop_assume!(labels.iter().any(|&v| v == 0) && labels.iter().any(|&v| v == 1));
            let scores: Vec<f64> = raw.iter().map(|(_, s)| *s as f64).collect();
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            let a = auroc(&scores, &labels).unwrap();
            let b = auroc(&neg, &labels).unwrap();
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn stratified_folds_balance_within_strata() {
        // Three strata of sizes 7, 5, 3 into 3 folds.
        let keys: Vec<u64> = [vec![0u64; 7], vec![1u64; 5], vec![2u64; 3]].concat();
        let mut rng = stream(5, &[0]);
        let assignment = stratified_fold_assignment(&keys, 3, &mut rng);
        assert_eq!(assignment.len(), 15);
        for stratum in 0..3u64 {
            let mut counts = [0usize; 3];
            for (i, &k) in keys.iter().enumerate() {
                if k == stratum {
                    counts[assignment[i]] += 1;
                }
            }
            let max = counts.iter().max().unwrap();
            let min = counts.iter().min().unwrap();
            assert!(max - min <= 1, "stratum {stratum}: {counts:?}");
        }
        // Overall balance also holds thanks to the rotating offset.
        let mut totals = [0usize; 3];
        for &f in &assignment {
            totals[f] += 1;
        }
        assert_eq!(totals, [5, 5, 5]);
        // Deterministic given the stream.
        let again = stratified_fold_assignment(&keys, 3, &mut stream(5, &[0]));
        assert_eq!(assignment, again);
    }

    #[test]
    fn k_selection_prefers_smaller_on_ties() {
        let table = vec![
            KScore { k: 2, mean_auroc: 0.7, fold_aurocs: vec![] },
            KScore { k: 5, mean_auroc: 0.7, fold_aurocs: vec![] },
            KScore { k: 3, mean_auroc: 0.65, fold_aurocs: vec![] },
        ];
        assert_eq!(choose_best_k(&table), 2);
        let table = vec![
            KScore { k: 2, mean_auroc: 0.6, fold_aurocs: vec![] },
            KScore { k: 5, mean_auroc: 0.72, fold_aurocs: vec![] },
        ];
        assert_eq!(choose_best_k(&table), 5);
    }

    fn small_train() -> Dataset {
        let spec = SimulationSpec {
            n_total: 150,
            n_target: 70,
            p_latent: 5,
            k_true: 2,
            ratio: SplitRatio::new(50, 60),
            seed: 99,
            loading_spread: 1.0,
        };
        simulate(&spec).unwrap().1.train
    }

    #[test]
    fn cross_validation_selects_from_grid() {
        let train = small_train();
        let hyper = Hyperparameters {
            iters: 60,
            burnin: 20,
            thin: 2,
            ..Hyperparameters::default()
        };
        let sel = cross_validate_k(&train, ModelKind::Hierarchical, &[1, 3], &hyper, 3, 7).unwrap();
        assert!(sel.chosen_k == 1 || sel.chosen_k == 3);
        assert_eq!(sel.table.len(), 2);
        for row in &sel.table {
            assert_eq!(row.fold_aurocs.len(), 3);
            assert!(row.mean_auroc.is_finite());
            assert!((0.0..=1.0).contains(&row.mean_auroc));
        }
        let again = cross_validate_k(&train, ModelKind::Hierarchical, &[1, 3], &hyper, 3, 7).unwrap();
        assert_eq!(sel, again);
    }

    #[test]
    fn cross_validation_rejects_bad_arguments() {
        let train = small_train();
        let hyper = Hyperparameters::default();
        assert!(cross_validate_k(&train, ModelKind::Pooled, &[], &hyper, 3, 7).is_err());
        assert!(cross_validate_k(&train, ModelKind::Pooled, &[99], &hyper, 3, 7).is_err());
        assert!(cross_validate_k(&train, ModelKind::Pooled, &[2], &hyper, 1, 7).is_err());
        let scoring_only = {
            let raw = train.to_raw();
            let mut headers = raw.headers.clone();
            let y_col = headers.iter().position(|h| h == crate::data::OUTCOME_COLUMN).unwrap();
            headers.remove(y_col);
            let rows = raw
                .rows
                .iter()
                .map(|r| {
                    let mut r = r.clone();
                    r.remove(y_col);
                    r
                })
                .collect();
            crate::data::validate_dataset(
                &crate::data::RawTable { headers, rows },
                train.columns(),
                crate::data::ValidateMode::Scoring,
            )
            .unwrap()
        };
        assert!(cross_validate_k(&scoring_only, ModelKind::Pooled, &[2], &hyper, 3, 7).is_err());
    }

    fn scatter_fixture(f: Array2<f64>, mean_factors: Array2<f64>, pops: Vec<Population>) -> PosteriorSamples {
        let hyper = Hyperparameters::default();
        let config = ChainConfig::from_hyper(&hyper);
        PosteriorSamples {
            kind: ModelKind::Pooled,
            hyper,
            config,
            columns: vec![ColumnMeta { name: "x".into(), kind: ColumnKind::Continuous }],
            standardizer: Standardizer::identity(1),
            train_populations: pops,
            chains: vec![ChainSamples {
                states: Vec::new(),
                final_factors: f,
                mean_factors,
                sweeps_completed: 0,
            }],
            interrupted: false,
        }
    }

    /// Points built in a known orthonormal frame must project back onto
    /// their frame coordinates (top-2 PCA recovers the plane exactly).
    #[test]
    fn scatter_recovers_known_principal_plane() {
        let a = [2.0, -2.0, 1.0, -1.0, 3.0, -3.0, 1.5, -1.5, 0.5, -0.5];
        let b = [1.0, 1.0, -1.0, -1.0, 0.5, 0.5, -0.5, -0.5, 0.0, 0.0];
        let u = [1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0];
        let v = [2.0 / 3.0, 1.0 / 3.0, -2.0 / 3.0];
        let mut f = Array2::<f64>::zeros((10, 3));
        for i in 0..10 {
            for d in 0..3 {
                f[(i, d)] = a[i] * u[d] + b[i] * v[d];
            }
        }
        let pops = (0..10)
            .map(|i| if i < 5 { Population::Source } else { Population::Target })
            .collect();
        let samples = scatter_fixture(f.clone(), f, pops);
        let scatter = export_factor_scatter(&samples, FactorSource::FinalIteration).unwrap();
        assert_eq!(scatter.points.len(), 10);
        for i in 0..10 {
            assert!((scatter.points[i][0] - a[i]).abs() < 1e-8, "row {i}");
            assert!((scatter.points[i][1] - b[i]).abs() < 1e-8, "row {i}");
        }
        // Projection of centered data stays centered.
        let mean0: f64 = scatter.points.iter().map(|p| p[0]).sum::<f64>() / 10.0;
        let mean1: f64 = scatter.points.iter().map(|p| p[1]).sum::<f64>() / 10.0;
        assert!(mean0.abs() < 1e-10 && mean1.abs() < 1e-10);
        // Explained fractions: eigenvalues 3.3 and 0.5 out of trace 3.8.
        assert!((scatter.explained[0] - 33.0 / 38.0).abs() < 1e-10);
        assert!((scatter.explained[1] - 5.0 / 38.0).abs() < 1e-10);
    }

    #[test]
    fn scatter_uses_requested_factor_source() {
        let mut f = Array2::<f64>::zeros((4, 2));
        for i in 0..4 {
            f[(i, 0)] = i as f64 - 1.5;
            f[(i, 1)] = (i as f64 - 1.5) * 0.1;
        }
        let doubled = f.mapv(|v| 2.0 * v);
        let pops = vec![Population::Source; 4];
        let samples = scatter_fixture(f, doubled, pops);
        let final_pts = export_factor_scatter(&samples, FactorSource::FinalIteration).unwrap();
        let mean_pts = export_factor_scatter(&samples, FactorSource::ChainMean).unwrap();
        for i in 0..4 {
            assert!((mean_pts.points[i][0] - 2.0 * final_pts.points[i][0]).abs() < 1e-10);
        }
        assert_eq!(final_pts.source, FactorSource::FinalIteration);
        assert_eq!(mean_pts.source, FactorSource::ChainMean);
    }

    /// End-to-end experiment at toy scale: report shape, determinism, and
    /// the scatter export.
    #[test]
    fn experiment_runs_at_toy_scale() {
        let config = ExperimentConfig {
            base: SimulationSpec {
                n_total: 160,
                n_target: 70,
                p_latent: 5,
                k_true: 2,
                ratio: STANDARD_RATIOS[0],
                seed: 0,
                loading_spread: 1.0,
            },
            ratios: vec![SplitRatio::new(40, 70), SplitRatio::new(30, 90)],
            repeats: 2,
            k_fit: 2,
            iters: 80,
            burnin: 30,
            thin: 2,
            seed: 21,
        };
        let out = run_experiment(&config, &ExperimentHooks::default()).unwrap();
        assert_eq!(out.report.ratios.len(), 2);
        assert_eq!(out.scatters.len(), 2);
        for ratio_report in &out.report.ratios {
            assert!(ratio_report.failures.is_empty(), "{:?}", ratio_report.failures);
            assert_eq!(ratio_report.methods.len(), 8);
            for m in &ratio_report.methods {
                assert_eq!(m.per_repeat.len(), 2);
                assert!((0.0..=1.0).contains(&m.mean));
                assert!(m.se >= 0.0);
            }
            assert!(ratio_report.lasso_headline(TestSet::Target).is_some());
        }
        let again = run_experiment(&config, &ExperimentHooks::default()).unwrap();
        // Wall clock differs; everything else must be identical.
        assert_eq!(out.report.ratios, again.report.ratios);
        assert_eq!(out.scatters, again.scatters);
    }

    #[test]
    fn experiment_cancellation_marks_interrupted() {
        let config = ExperimentConfig {
            base: SimulationSpec {
                n_total: 160,
                n_target: 70,
                p_latent: 5,
                k_true: 2,
                ratio: STANDARD_RATIOS[0],
                seed: 0,
                loading_spread: 1.0,
            },
            ratios: vec![SplitRatio::new(40, 70)],
            repeats: 2,
            k_fit: 2,
            iters: 80,
            burnin: 30,
            thin: 2,
            seed: 22,
        };
        let cancel = AtomicBool::new(true);
        let hooks = ExperimentHooks { cancel: Some(&cancel), status: None };
        let out = run_experiment(&config, &hooks).unwrap();
        assert!(out.report.interrupted);
        assert_eq!(out.report.ratios[0].failures.len(), 2);
    }
}
