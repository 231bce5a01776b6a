//! Two-population synthetic data with known ground truth.
//!
//! The generator draws a global loadings matrix, population loadings around
//! it, and idiosyncratic variances, then samples latent 70-dimensional rows
//! from N(0, Omega_pop). Coordinate 0 is thresholded at zero into the binary
//! outcome; the remaining coordinates become continuous covariates. Row
//! generation uses hand-rolled accumulation so identical seeds give
//! bit-identical datasets on any platform.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, ColumnMeta, Dataset, Population};
use crate::error::{Error, Result};
use crate::rng::stream;

/// Train-split sizes per population, written `target:source` in the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRatio {
    pub target_train: usize,
    pub source_train: usize,
}

impl SplitRatio {
    pub fn new(target_train: usize, source_train: usize) -> SplitRatio {
        SplitRatio { target_train, source_train }
    }

    /// Parse the `700:2800` form (target count first).
    pub fn parse(s: &str) -> Result<SplitRatio> {
        let (t, src) = s
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("ratio must look like 700:2800, got {s:?}")))?;
        let target_train = t
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::invalid(format!("bad target count in ratio {s:?}")))?;
        let source_train = src
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::invalid(format!("bad source count in ratio {s:?}")))?;
        Ok(SplitRatio { target_train, source_train })
    }

    pub fn label(&self) -> String {
        format!("{}:{}", self.target_train, self.source_train)
    }
}

impl std::fmt::Display for SplitRatio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.label())
    }
}

/// The three splits studied in the simulation benchmark.
pub const STANDARD_RATIOS: [SplitRatio; 3] = [
    SplitRatio { target_train: 700, source_train: 2800 },
    SplitRatio { target_train: 500, source_train: 2500 },
    SplitRatio { target_train: 200, source_train: 4000 },
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub n_total: usize,
    pub n_target: usize,
    /// Latent dimension; coordinate 0 is the latent outcome.
    pub p_latent: usize,
    pub k_true: usize,
    pub ratio: SplitRatio,
    pub seed: u64,
    /// Standard deviation of the population loadings around the global ones.
    /// 1.0 reproduces the benchmark; 0.0 collapses both populations onto the
    /// global loadings (no-shift test hook).
    pub loading_spread: f64,
}

impl SimulationSpec {
    /// Benchmark-shaped spec: 5000 rows, 1000 of them target, 70 latent
    /// coordinates, 20 true factors.
    pub fn benchmark(ratio: SplitRatio, seed: u64) -> SimulationSpec {
        SimulationSpec {
            n_total: 5000,
            n_target: 1000,
            p_latent: 70,
            k_true: 20,
            ratio,
            seed,
            loading_spread: 1.0,
        }
    }

    pub fn n_source(&self) -> usize {
        self.n_total - self.n_target
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_target == 0 || self.n_target >= self.n_total {
            return Err(Error::invalid(format!(
                "n_target must lie strictly between 0 and n_total, got {} of {}",
                self.n_target, self.n_total
            )));
        }
        if self.p_latent < 2 {
            return Err(Error::invalid("need at least the outcome and one covariate"));
        }
        if self.k_true == 0 || self.k_true > self.p_latent {
            return Err(Error::invalid(format!(
                "k_true must lie in 1..={}, got {}",
                self.p_latent, self.k_true
            )));
        }
        if self.ratio.target_train > self.n_target {
            return Err(Error::invalid(format!(
                "target train size {} exceeds the target population {}",
                self.ratio.target_train, self.n_target
            )));
        }
        if self.ratio.source_train > self.n_source() {
            return Err(Error::invalid(format!(
                "source train size {} exceeds the source population {}",
                self.ratio.source_train,
                self.n_source()
            )));
        }
        if !(self.loading_spread >= 0.0) {
            return Err(Error::invalid("loading_spread must be non-negative"));
        }
        Ok(())
    }

    /// Covariate column names `x01..` (outcome excluded).
    pub fn column_meta(&self) -> Vec<ColumnMeta> {
        (1..self.p_latent)
            .map(|j| ColumnMeta {
                name: format!("x{j:02}"),
                kind: ColumnKind::Continuous,
            })
            .collect()
    }
}

/// True generative parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub shared_loadings: Vec<Vec<f64>>,
    pub source_loadings: Vec<Vec<f64>>,
    pub target_loadings: Vec<Vec<f64>>,
    pub noise_vars: Vec<f64>,
}

impl GroundTruth {
    pub fn loadings_for(&self, pop: Population) -> &Vec<Vec<f64>> {
        match pop {
            Population::Source => &self.source_loadings,
            Population::Target => &self.target_loadings,
        }
    }

    /// Omega_pop = beta beta' + diag(sigma2) as an ndarray matrix.
    pub fn marginal_covariance(&self, pop: Population) -> Array2<f64> {
        let beta = self.loadings_for(pop);
        let p = beta.len();
        let k = beta[0].len();
        let mut omega = Array2::<f64>::zeros((p, p));
        for i in 0..p {
            for j in 0..=i {
                let mut s = 0.0;
                for c in 0..k {
                    s += beta[i][c] * beta[j][c];
                }
                omega[(i, j)] = s;
                omega[(j, i)] = s;
            }
            omega[(i, i)] += self.noise_vars[i];
        }
        omega
    }
}

/// Draw the generative parameters: global rows from N(0, I), population rows
/// from N(m_j, spread^2 I), precisions from Gamma(1, rate 1/2) inverted so
/// their prior mean is 2.
pub fn generate_ground_truth(spec: &SimulationSpec, rng: &mut ChaCha20Rng) -> GroundTruth {
    let p = spec.p_latent;
    let k = spec.k_true;
    let mut shared = vec![vec![0.0f64; k]; p];
    for row in &mut shared {
        for v in row.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
    }
    let draw_pop = |rng: &mut ChaCha20Rng| {
        let mut b = shared.clone();
        for row in &mut b {
            for v in row.iter_mut() {
                *v += spec.loading_spread * rng.sample::<f64, _>(StandardNormal);
            }
        }
        b
    };
    let source = draw_pop(rng);
    let target = draw_pop(rng);
    let gamma = Gamma::new(1.0, 2.0).expect("fixed positive parameters"); // shape 1, scale 2 = rate 1/2
    let noise_vars = (0..p).map(|_| 1.0 / gamma.sample(rng)).collect();
    GroundTruth {
        shared_loadings: shared,
        source_loadings: source,
        target_loadings: target,
        noise_vars,
    }
}

/// Latent rows z = beta f + sigma * eps for one population, pre-thresholding.
pub fn draw_latent_rows(
    truth: &GroundTruth,
    pop: Population,
    n: usize,
    rng: &mut ChaCha20Rng,
) -> Array2<f64> {
    let beta = truth.loadings_for(pop);
    let p = beta.len();
    let k = beta[0].len();
    let sds: Vec<f64> = truth.noise_vars.iter().map(|v| v.sqrt()).collect();
    let mut z = Array2::<f64>::zeros((n, p));
    let mut f = vec![0.0f64; k];
    for i in 0..n {
        for fc in f.iter_mut() {
            *fc = rng.sample(StandardNormal);
        }
        for j in 0..p {
            let mut acc = 0.0;
            for c in 0..k {
                acc += beta[j][c] * f[c];
            }
            z[(i, j)] = acc + sds[j] * rng.sample::<f64, _>(StandardNormal);
        }
    }
    z
}

/// The generated split: train plus the held-out remainder of each
/// population. When the source remainder is empty the source test set is
/// drawn fresh from the same ground truth and flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub train: Dataset,
    pub test_target: Dataset,
    pub test_source: Dataset,
    pub source_test_regenerated: bool,
}

/// Size of a regenerated source test set (used when the split leaves no
/// held-out source rows).
pub const REGENERATED_SOURCE_TEST_ROWS: usize = 1000;

fn rows_to_dataset(
    spec: &SimulationSpec,
    rows: Vec<(Population, Vec<f64>)>,
) -> Result<Dataset> {
    let n = rows.len();
    let p_cov = spec.p_latent - 1;
    let mut x = Array2::<f64>::zeros((n, p_cov));
    let mut y = Vec::with_capacity(n);
    let mut pops = Vec::with_capacity(n);
    for (i, (pop, z)) in rows.iter().enumerate() {
        y.push(u8::from(z[0] > 0.0));
        for j in 0..p_cov {
            x[(i, j)] = z[j + 1];
        }
        pops.push(*pop);
    }
    Dataset::new(spec.column_meta(), x, Some(y), pops)
}

/// Generate the train/test split for the spec's ratio.
pub fn generate_dataset(
    spec: &SimulationSpec,
    truth: &GroundTruth,
    rng: &mut ChaCha20Rng,
) -> Result<SimulatedData> {
    spec.validate()?;
    let source_rows = draw_latent_rows(truth, Population::Source, spec.n_source(), rng);
    let target_rows = draw_latent_rows(truth, Population::Target, spec.n_target, rng);

    let take = |m: &Array2<f64>, lo: usize, hi: usize, pop: Population| {
        (lo..hi)
            .map(|i| (pop, m.row(i).to_vec()))
            .collect::<Vec<_>>()
    };
    let mut train = take(&source_rows, 0, spec.ratio.source_train, Population::Source);
    train.extend(take(
        &target_rows,
        0,
        spec.ratio.target_train,
        Population::Target,
    ));
    let test_target = take(
        &target_rows,
        spec.ratio.target_train,
        spec.n_target,
        Population::Target,
    );
    let held_out_source = spec.n_source() - spec.ratio.source_train;
    let (test_source, regenerated) = if held_out_source > 0 {
        (
            take(
                &source_rows,
                spec.ratio.source_train,
                spec.n_source(),
                Population::Source,
            ),
            false,
        )
    } else {
        let fresh = draw_latent_rows(truth, Population::Source, REGENERATED_SOURCE_TEST_ROWS, rng);
        (
            take(&fresh, 0, REGENERATED_SOURCE_TEST_ROWS, Population::Source),
            true,
        )
    };
    if test_target.is_empty() {
        return Err(Error::invalid(
            "split leaves no held-out target rows to test on",
        ));
    }
    Ok(SimulatedData {
        train: rows_to_dataset(spec, train)?,
        test_target: rows_to_dataset(spec, test_target)?,
        test_source: rows_to_dataset(spec, test_source)?,
        source_test_regenerated: regenerated,
    })
}

const TRUTH_TAG: u64 = 0x7472_7574; // "trut"
const DATA_TAG: u64 = 0x6461_7461; // "data"

/// Ground truth and data from the spec's own seed, with independent derived
/// streams for the two stages.
pub fn simulate(spec: &SimulationSpec) -> Result<(GroundTruth, SimulatedData)> {
    spec.validate()?;
    let mut truth_rng = stream(spec.seed, &[TRUTH_TAG]);
    let truth = generate_ground_truth(spec, &mut truth_rng);
    let mut data_rng = stream(spec.seed, &[DATA_TAG]);
    let data = generate_dataset(spec, &truth, &mut data_rng)?;
    Ok((truth, data))
}
