//! File formats: CSV datasets with JSON metadata sidecars, the binary model
//! container, score files, experiment reports, ground-truth dumps, and the
//! SVG factor scatter.
//!
//! Every writer is deterministic: identical inputs produce identical bytes,
//! which the CLI determinism checks rely on.

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::baselines::LassoModel;
use crate::data::{
    validate_dataset, ColumnMeta, Dataset, Population, RawTable, Standardizer, ValidateMode,
    OUTCOME_COLUMN,
};
use crate::error::{Error, Result};
use crate::eval::{ExperimentReport, FactorSource, ScatterData, TestSet};
use crate::gibbs::{ChainConfig, ChainSamples, ModelKind, PosteriorSamples, RetainedState};
use crate::simulate::GroundTruth;

pub const DATASET_SCHEMA_VERSION: u32 = 1;
pub const MODEL_FILE_VERSION: u32 = 1;
const MODEL_MAGIC: &[u8; 6] = b"TLLFM\0";

fn format_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format { path: path.display().to_string(), detail: detail.into() }
}

/// `data.csv` -> `data.meta.json`, next to the data file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetMeta {
    schema_version: u32,
    columns: Vec<ColumnMeta>,
}

/// Read a CSV dataset and its metadata sidecar, then validate for `mode`.
pub fn read_dataset(path: &Path, mode: ValidateMode) -> Result<Dataset> {
    let meta_path = sidecar_path(path);
    let meta_text = std::fs::read_to_string(&meta_path)
        .map_err(|e| format_err(&meta_path, format!("cannot read metadata sidecar: {e}")))?;
    let meta: DatasetMeta = serde_json::from_str(&meta_text)
        .map_err(|e| format_err(&meta_path, format!("bad metadata JSON: {e}")))?;
    if meta.schema_version != DATASET_SCHEMA_VERSION {
        return Err(Error::schema(format!(
            "dataset schema version {} is not supported (expected {DATASET_SCHEMA_VERSION})",
            meta.schema_version
        )));
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| format_err(path, e.to_string()))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| format_err(path, e.to_string()))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| format_err(path, e.to_string()))?;
        rows.push(record.iter().map(|s| s.to_string()).collect());
    }
    validate_dataset(&RawTable { headers, rows }, &meta.columns, mode)
}

/// Write a dataset as CSV plus its metadata sidecar.
pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let raw = dataset.to_raw();
    let mut writer = csv::Writer::from_path(path).map_err(|e| format_err(path, e.to_string()))?;
    writer
        .write_record(&raw.headers)
        .and_then(|_| raw.rows.iter().try_for_each(|r| writer.write_record(r)))
        .map_err(|e| format_err(path, e.to_string()))?;
    writer.flush()?;
    let meta = DatasetMeta {
        schema_version: DATASET_SCHEMA_VERSION,
        columns: dataset.columns().to_vec(),
    };
    let mut text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    text.push('\n');
    std::fs::write(sidecar_path(path), text)?;
    Ok(())
}

/// A saved model: posterior samples or a lasso fit.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelArtifact {
    Posterior(PosteriorSamples),
    Lasso(LassoModel),
}

#[derive(Debug, Serialize, Deserialize)]
struct ChainHeader {
    n_states: usize,
    sweeps_completed: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct PosteriorHeader {
    model: ModelKind,
    hyper: crate::data::Hyperparameters,
    config: ChainConfig,
    columns: Vec<ColumnMeta>,
    /// Hash of `columns`, stored redundantly and re-verified on load.
    schema_hash: String,
    standardizer: Standardizer,
    /// One `S`/`T` per training row.
    train_populations: String,
    interrupted: bool,
    chains: Vec<ChainHeader>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LassoHeader {
    lambda: f64,
    intercept: f64,
    columns: Vec<ColumnMeta>,
    schema_hash: String,
    standardizer: Standardizer,
    cv_mean_auroc: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ModelHeader {
    Posterior(PosteriorHeader),
    Lasso(LassoHeader),
}

fn push_matrix(payload: &mut Vec<f64>, m: &Array2<f64>) {
    payload.extend(m.iter());
}

struct PayloadCursor<'a> {
    data: &'a [f64],
    pos: usize,
}

impl<'a> PayloadCursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [f64]> {
        if self.pos + n > self.data.len() {
            return Err(Error::schema(format!(
                "model payload too short: wanted {n} more values at offset {}, have {}",
                self.pos,
                self.data.len()
            )));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn take_matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let flat = self.take(rows * cols)?.to_vec();
        Array2::from_shape_vec((rows, cols), flat)
            .map_err(|e| Error::schema(format!("bad matrix shape in model payload: {e}")))
    }
}

/// Serialize a model to its container bytes: magic, version, header length,
/// deterministic JSON header, then the f64 payload in little-endian order.
pub fn model_bytes(artifact: &ModelArtifact) -> Vec<u8> {
    let (header, payload) = match artifact {
        ModelArtifact::Posterior(samples) => {
            let header = ModelHeader::Posterior(PosteriorHeader {
                model: samples.kind,
                hyper: samples.hyper.clone(),
                config: samples.config.clone(),
                columns: samples.columns.clone(),
                schema_hash: samples.schema_hash(),
                standardizer: samples.standardizer.clone(),
                train_populations: samples
                    .train_populations
                    .iter()
                    .map(|p| p.label())
                    .collect::<String>(),
                interrupted: samples.interrupted,
                chains: samples
                    .chains
                    .iter()
                    .map(|c| ChainHeader {
                        n_states: c.states.len(),
                        sweeps_completed: c.sweeps_completed,
                    })
                    .collect(),
            });
            let mut payload = Vec::new();
            for chain in &samples.chains {
                for state in &chain.states {
                    push_matrix(&mut payload, &state.shared_loadings);
                    push_matrix(&mut payload, &state.source_loadings);
                    push_matrix(&mut payload, &state.target_loadings);
                    payload.extend(state.noise_vars.iter());
                    payload.push(state.source_prec);
                    payload.push(state.target_prec);
                    if let Some(f) = &state.factor_scores {
                        push_matrix(&mut payload, f);
                    }
                }
                push_matrix(&mut payload, &chain.final_factors);
                push_matrix(&mut payload, &chain.mean_factors);
            }
            (header, payload)
        }
        ModelArtifact::Lasso(model) => {
            let header = ModelHeader::Lasso(LassoHeader {
                lambda: model.lambda,
                intercept: model.intercept,
                columns: model.columns.clone(),
                schema_hash: model.schema_hash(),
                standardizer: model.standardizer.clone(),
                cv_mean_auroc: model.cv_mean_auroc,
            });
            (header, model.weights.clone())
        }
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");
    let mut bytes = Vec::with_capacity(14 + header_json.len() + payload.len() * 8);
    bytes.extend_from_slice(MODEL_MAGIC);
    bytes.extend_from_slice(&MODEL_FILE_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for v in payload {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

/// Parse container bytes back into a model. `label` names the source in
/// error messages (usually the file path).
pub fn parse_model(bytes: &[u8], label: &str) -> Result<ModelArtifact> {
    let path = Path::new(label);
    if bytes.len() < 14 {
        return Err(format_err(path, "too short to be a model file"));
    }
    if &bytes[..6] != MODEL_MAGIC {
        return Err(format_err(path, "bad magic: not a model file"));
    }
    let version = u32::from_le_bytes(bytes[6..10].try_into().expect("four bytes"));
    if version != MODEL_FILE_VERSION {
        return Err(Error::schema(format!(
            "model file version {version} is not supported (expected {MODEL_FILE_VERSION})"
        )));
    }
    let header_len = u32::from_le_bytes(bytes[10..14].try_into().expect("four bytes")) as usize;
    if bytes.len() < 14 + header_len {
        return Err(format_err(path, "truncated header"));
    }
    let header: ModelHeader = serde_json::from_slice(&bytes[14..14 + header_len])
        .map_err(|e| format_err(path, format!("bad header JSON: {e}")))?;
    let payload_bytes = &bytes[14 + header_len..];
    if payload_bytes.len() % 8 != 0 {
        return Err(format_err(path, "payload is not a whole number of f64 values"));
    }
    let payload: Vec<f64> = payload_bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
        .collect();
    let mut cursor = PayloadCursor { data: &payload, pos: 0 };

    let check_hash = |columns: &[ColumnMeta], stored: &str| -> Result<()> {
        let expect = crate::data::schema_hash(columns);
        if stored != expect {
            return Err(format_err(
                path,
                "stored schema hash does not match the stored columns (file corrupted?)",
            ));
        }
        Ok(())
    };

    let artifact = match header {
        ModelHeader::Posterior(h) => {
            check_hash(&h.columns, &h.schema_hash)?;
            let p_latent = h.columns.len() + 1;
            let k = h.hyper.n_factors;
            let train_populations: Vec<Population> = h
                .train_populations
                .chars()
                .map(|c| {
                    Population::parse(&c.to_string())
                        .ok_or_else(|| format_err(path, format!("bad population label {c:?}")))
                })
                .collect::<Result<_>>()?;
            let n_rows = train_populations.len();
            let mut chains = Vec::with_capacity(h.chains.len());
            for ch in &h.chains {
                let mut states = Vec::with_capacity(ch.n_states);
                for _ in 0..ch.n_states {
                    let shared_loadings = cursor.take_matrix(p_latent, k)?;
                    let source_loadings = cursor.take_matrix(p_latent, k)?;
                    let target_loadings = cursor.take_matrix(p_latent, k)?;
                    let noise_vars = Array1::from(cursor.take(p_latent)?.to_vec());
                    let source_prec = cursor.take(1)?[0];
                    let target_prec = cursor.take(1)?[0];
                    let factor_scores = if h.config.record_factors {
                        Some(cursor.take_matrix(n_rows, k)?)
                    } else {
                        None
                    };
                    states.push(RetainedState {
                        shared_loadings,
                        source_loadings,
                        target_loadings,
                        noise_vars,
                        factor_scores,
                        source_prec,
                        target_prec,
                    });
                }
                let final_factors = cursor.take_matrix(n_rows, k)?;
                let mean_factors = cursor.take_matrix(n_rows, k)?;
                chains.push(ChainSamples {
                    states,
                    final_factors,
                    mean_factors,
                    sweeps_completed: ch.sweeps_completed,
                });
            }
            ModelArtifact::Posterior(PosteriorSamples {
                kind: h.model,
                hyper: h.hyper,
                config: h.config,
                columns: h.columns,
                standardizer: h.standardizer,
                train_populations,
                chains,
                interrupted: h.interrupted,
            })
        }
        ModelHeader::Lasso(h) => {
            check_hash(&h.columns, &h.schema_hash)?;
            let weights = cursor.take(h.columns.len())?.to_vec();
            ModelArtifact::Lasso(LassoModel {
                weights,
                intercept: h.intercept,
                lambda: h.lambda,
                columns: h.columns,
                standardizer: h.standardizer,
                cv_mean_auroc: h.cv_mean_auroc,
            })
        }
    };
    if cursor.pos != payload.len() {
        return Err(format_err(
            path,
            format!(
                "payload has {} values but the header accounts for {}",
                payload.len(),
                cursor.pos
            ),
        ));
    }
    Ok(artifact)
}

pub fn save_model(artifact: &ModelArtifact, path: &Path) -> Result<()> {
    std::fs::write(path, model_bytes(artifact))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelArtifact> {
    let bytes = std::fs::read(path)
        .map_err(|e| format_err(path, format!("cannot read model file: {e}")))?;
    parse_model(&bytes, &path.display().to_string())
}

/// Write predicted probabilities as `row,prob` CSV.
pub fn write_scores(scores: &[f64], path: &Path) -> Result<()> {
    let mut text = String::from("row,prob\n");
    for (i, s) in scores.iter().enumerate() {
        text.push_str(&format!("{i},{s}\n"));
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Read the `prob` column of a scores CSV.
pub fn read_scores(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| format_err(path, e.to_string()))?;
    let headers = reader.headers().map_err(|e| format_err(path, e.to_string()))?;
    let col = headers
        .iter()
        .position(|h| h == "prob")
        .ok_or_else(|| format_err(path, "no `prob` column"))?;
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| format_err(path, e.to_string()))?;
        let cell = record
            .get(col)
            .ok_or_else(|| format_err(path, format!("line {}: missing prob field", i + 2)))?;
        let value: f64 = cell
            .parse()
            .map_err(|_| format_err(path, format!("line {}: bad probability {cell:?}", i + 2)))?;
        out.push(value);
    }
    Ok(out)
}

/// Read the `__y` column of any CSV (e.g. a test-set file) as 0/1 labels.
pub fn read_outcome_column(path: &Path) -> Result<Vec<u8>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| format_err(path, e.to_string()))?;
    let headers = reader.headers().map_err(|e| format_err(path, e.to_string()))?;
    let col = headers
        .iter()
        .position(|h| h == OUTCOME_COLUMN)
        .ok_or_else(|| format_err(path, format!("no `{OUTCOME_COLUMN}` column")))?;
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| format_err(path, e.to_string()))?;
        let cell = record
            .get(col)
            .ok_or_else(|| format_err(path, format!("line {}: missing outcome field", i + 2)))?;
        match cell {
            "0" => out.push(0),
            "1" => out.push(1),
            other => {
                return Err(format_err(
                    path,
                    format!("line {}: outcome must be 0 or 1, got {other:?}", i + 2),
                ))
            }
        }
    }
    Ok(out)
}

/// Ground-truth parameters as pretty JSON.
pub fn write_ground_truth(truth: &GroundTruth, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(truth).expect("ground truth serializes");
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Pretty JSON for an experiment report (wall clock excluded by design).
pub fn report_json(report: &ExperimentReport) -> String {
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    text
}

/// Human-readable experiment summary.
pub fn report_text(report: &ExperimentReport) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let _ = writeln!(out, "TL-LFM simulation benchmark");
    let _ = writeln!(
        out,
        "seed {} | repeats {} | sweeps {} (burn-in {}, thin {}) | K = {}",
        report.seed, report.repeats, report.iters, report.burnin, report.thin, report.k_fit
    );
    if report.interrupted {
        let _ = writeln!(out, "NOTE: run was interrupted; results cover completed repeats only");
    }
    for ratio in &report.ratios {
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "ratio {} ({} target + {} source training rows){}",
            ratio.ratio,
            ratio.ratio.target_train,
            ratio.ratio.source_train,
            if ratio.source_test_regenerated {
                "  [source test set regenerated]"
            } else {
                ""
            }
        );
        let _ = writeln!(
            out,
            "  {:<8} {:<22} {:>10} {:>8} {:>8}",
            "test set", "method", "mean AUROC", "SE", "repeats"
        );
        for m in &ratio.methods {
            let _ = writeln!(
                out,
                "  {:<8} {:<22} {:>10.4} {:>8.4} {:>8}",
                m.test_set.label(),
                m.method.label(),
                m.mean,
                m.se,
                m.per_repeat.len()
            );
        }
        for set in TestSet::ALL {
            if let Some(head) = ratio.lasso_headline(set) {
                let _ = writeln!(
                    out,
                    "  headline lasso ({}): {}",
                    set.label(),
                    head.method.label()
                );
            }
        }
        if ratio.failures.is_empty() {
            let _ = writeln!(out, "  failures: none");
        } else {
            for f in &ratio.failures {
                let _ = writeln!(out, "  failure (repeat {}): {}", f.repeat, f.message);
            }
        }
    }
    out
}

/// Write `report.json` and `report.txt` into `dir`; returns their paths.
pub fn write_report_files(report: &ExperimentReport, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let json_path = dir.join("report.json");
    let text_path = dir.join("report.txt");
    std::fs::write(&json_path, report_json(report))?;
    std::fs::write(&text_path, report_text(report))?;
    Ok((json_path, text_path))
}

const SVG_SIZE: f64 = 800.0;
const SVG_MARGIN: f64 = 70.0;

/// Render the factor scatter: blue crosses for source rows, red circles for
/// target rows, 800x800 canvas.
pub fn scatter_svg(scatter: &ScatterData) -> String {
    use std::fmt::Write;
    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in &scatter.points {
        min_x = min_x.min(p[0]);
        max_x = max_x.max(p[0]);
        min_y = min_y.min(p[1]);
        max_y = max_y.max(p[1]);
    }
    if scatter.points.is_empty() {
        min_x = -1.0;
        max_x = 1.0;
        min_y = -1.0;
        max_y = 1.0;
    }
    if max_x - min_x < 1e-12 {
        min_x -= 1.0;
        max_x += 1.0;
    }
    if max_y - min_y < 1e-12 {
        min_y -= 1.0;
        max_y += 1.0;
    }
    let span = SVG_SIZE - 2.0 * SVG_MARGIN;
    let sx = |x: f64| SVG_MARGIN + (x - min_x) / (max_x - min_x) * span;
    let sy = |y: f64| SVG_SIZE - SVG_MARGIN - (y - min_y) / (max_y - min_y) * span;

    let title = match scatter.source {
        FactorSource::FinalIteration => "final iteration",
        FactorSource::ChainMean => "chain mean",
    };
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"800\" viewBox=\"0 0 800 800\">"
    );
    let _ = writeln!(svg, "<rect width=\"800\" height=\"800\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<rect x=\"{m}\" y=\"{m}\" width=\"{s}\" height=\"{s}\" fill=\"none\" stroke=\"black\"/>",
        m = SVG_MARGIN,
        s = span
    );
    let _ = writeln!(
        svg,
        "<text x=\"400\" y=\"40\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"20\">Factor scores ({title}), top two principal components</text>"
    );
    let _ = writeln!(
        svg,
        "<text x=\"400\" y=\"{:.0}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">PC1 ({:.1}% of variance)</text>",
        SVG_SIZE - 25.0,
        100.0 * scatter.explained[0]
    );
    let _ = writeln!(
        svg,
        "<text x=\"25\" y=\"400\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\" transform=\"rotate(-90 25 400)\">PC2 ({:.1}% of variance)</text>",
        100.0 * scatter.explained[1]
    );

    let cross = |svg: &mut String, x: f64, y: f64| {
        let _ = writeln!(
            svg,
            "<path d=\"M{:.2} {:.2}L{:.2} {:.2}M{:.2} {:.2}L{:.2} {:.2}\" stroke=\"blue\" stroke-width=\"1.5\" class=\"source\"/>",
            x - 4.0, y - 4.0, x + 4.0, y + 4.0, x - 4.0, y + 4.0, x + 4.0, y - 4.0
        );
    };
    let circle = |svg: &mut String, x: f64, y: f64| {
        let _ = writeln!(
            svg,
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"4\" fill=\"none\" stroke=\"red\" stroke-width=\"1.5\" class=\"target\"/>"
        );
    };
    for (p, pop) in scatter.points.iter().zip(&scatter.populations) {
        match pop {
            Population::Source => cross(&mut svg, sx(p[0]), sy(p[1])),
            Population::Target => circle(&mut svg, sx(p[0]), sy(p[1])),
        }
    }

    // Legend.
    cross(&mut svg, 640.0, 86.0);
    let _ = writeln!(
        svg,
        "<text x=\"652\" y=\"91\" font-family=\"sans-serif\" font-size=\"16\">source</text>"
    );
    circle(&mut svg, 640.0, 110.0);
    let _ = writeln!(
        svg,
        "<text x=\"652\" y=\"115\" font-family=\"sans-serif\" font-size=\"16\">target</text>"
    );
    svg.push_str("</svg>\n");
    svg
}

pub fn write_scatter_svg(scatter: &ScatterData, path: &Path) -> Result<()> {
    std::fs::write(path, scatter_svg(scatter))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{fit_lasso, fit_tl_lfm, LassoConfig};
    use crate::data::Hyperparameters;
    use crate::eval::{Method, MethodSummary, RatioReport};
    use crate::gibbs::RunHooks;
    use crate::simulate::{simulate, SimulationSpec, SplitRatio};

    fn tiny_sim() -> (crate::simulate::GroundTruth, crate::simulate::SimulatedData) {
        let spec = SimulationSpec {
            n_total: 90,
            n_target: 40,
            p_latent: 4,
            k_true: 2,
            ratio: SplitRatio::new(25, 40),
            seed: 31,
            loading_spread: 1.0,
        };
        simulate(&spec).unwrap()
    }

    #[test]
    fn dataset_round_trip_is_byte_identical() {
        let (_, data) = tiny_sim();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("train.csv");
        write_dataset(&data.train, &p1).unwrap();
        let loaded = read_dataset(&p1, ValidateMode::FitHierarchical).unwrap();
        assert_eq!(loaded, data.train);
        let p2 = dir.path().join("again.csv");
        write_dataset(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(
            std::fs::read(sidecar_path(&p1)).unwrap(),
            std::fs::read(sidecar_path(&p2)).unwrap()
        );
    }

    #[test]
    fn dataset_reader_rejects_problems() {
        let (_, data) = tiny_sim();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");

        // Missing sidecar.
        write_dataset(&data.train, &path).unwrap();
        std::fs::remove_file(sidecar_path(&path)).unwrap();
        assert!(matches!(
            read_dataset(&path, ValidateMode::Scoring),
            Err(Error::Format { .. })
        ));

        // Unsupported schema version.
        write_dataset(&data.train, &path).unwrap();
        let meta = std::fs::read_to_string(sidecar_path(&path)).unwrap();
        std::fs::write(
            sidecar_path(&path),
            meta.replace("\"schema_version\": 1", "\"schema_version\": 99"),
        )
        .unwrap();
        assert!(matches!(
            read_dataset(&path, ValidateMode::Scoring),
            Err(Error::Schema(_))
        ));

        // A corrupt cell surfaces as a validation violation with its line.
        write_dataset(&data.train, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        let replaced = lines[3].replacen(',', ",oops", 1);
        lines[3] = &replaced;
        std::fs::write(&path, lines.join("\n")).unwrap();
        match read_dataset(&path, ValidateMode::FitHierarchical) {
            Err(Error::Validation(violations)) => {
                assert!(violations.iter().any(|v| v.line == Some(4)), "{violations:?}");
            }
            other => panic!("expected a validation error, got {other:?}"),
        }
    }

    fn small_posterior(record_factors: bool) -> PosteriorSamples {
        let (_, data) = tiny_sim();
        let hyper = Hyperparameters {
            n_factors: 2,
            iters: 24,
            burnin: 8,
            thin: 2,
            seed: 5,
            ..Hyperparameters::default()
        };
        let mut config = ChainConfig::from_hyper(&hyper);
        config.n_chains = 2;
        config.record_factors = record_factors;
        fit_tl_lfm(&data.train, &hyper, &config, &RunHooks::default()).unwrap()
    }

    #[test]
    fn posterior_model_file_round_trips_byte_identically() {
        for record_factors in [false, true] {
            let samples = small_posterior(record_factors);
            let artifact = ModelArtifact::Posterior(samples);
            let bytes = model_bytes(&artifact);
            let loaded = parse_model(&bytes, "test.bin").unwrap();
            assert_eq!(loaded, artifact);
            assert_eq!(model_bytes(&loaded), bytes);
        }
    }

    #[test]
    fn lasso_model_file_round_trips_byte_identically() {
        let (_, data) = tiny_sim();
        let model = fit_lasso(
            &data.train,
            &LassoConfig { n_lambda: 8, folds: 3, ..LassoConfig::default() },
        )
        .unwrap();
        let artifact = ModelArtifact::Lasso(model);
        let bytes = model_bytes(&artifact);
        let loaded = parse_model(&bytes, "lasso.bin").unwrap();
        assert_eq!(loaded, artifact);
        assert_eq!(model_bytes(&loaded), bytes);
    }

    #[test]
    fn model_parser_rejects_corruption() {
        let samples = small_posterior(false);
        let bytes = model_bytes(&ModelArtifact::Posterior(samples));

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            parse_model(&bad_magic, "m.bin"),
            Err(Error::Format { .. })
        ));

        let mut bad_version = bytes.clone();
        bad_version[6..10].copy_from_slice(&7u32.to_le_bytes());
        match parse_model(&bad_version, "m.bin") {
            Err(Error::Schema(msg)) => assert!(msg.contains("version 7"), "{msg}"),
            other => panic!("expected schema error, got {other:?}"),
        }

        let truncated = &bytes[..bytes.len() - 16];
        assert!(parse_model(truncated, "m.bin").is_err());

        let mut extra = bytes.clone();
        extra.extend_from_slice(&0.5f64.to_le_bytes());
        assert!(parse_model(&extra, "m.bin").is_err());

        // Tampering with a column name breaks the stored schema hash.
        let needle = b"x01";
        let at = bytes.windows(3).position(|w| w == needle).unwrap();
        let mut renamed = bytes.clone();
        renamed[at] = b'z';
        match parse_model(&renamed, "m.bin") {
            Err(Error::Format { detail, .. }) => assert!(detail.contains("schema hash"), "{detail}"),
            other => panic!("expected a format error, got {other:?}"),
        }
    }

    #[test]
    fn save_and_load_via_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let samples = small_posterior(true);
        let artifact = ModelArtifact::Posterior(samples);
        save_model(&artifact, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), artifact);
    }

    #[test]
    fn scores_round_trip_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        let scores = vec![0.125, 0.5, 1.0 / 3.0, 0.0];
        write_scores(&scores, &path).unwrap();
        assert_eq!(read_scores(&path).unwrap(), scores);

        let (_, data) = tiny_sim();
        let dpath = dir.path().join("test.csv");
        write_dataset(&data.test_target, &dpath).unwrap();
        let labels = read_outcome_column(&dpath).unwrap();
        assert_eq!(labels.as_slice(), data.test_target.y().unwrap());

        let no_prob = dir.path().join("other.csv");
        std::fs::write(&no_prob, "a,b\n1,2\n").unwrap();
        assert!(read_scores(&no_prob).is_err());
        assert!(read_outcome_column(&no_prob).is_err());
    }

    #[test]
    fn report_writers_cover_every_method() {
        let report = ExperimentReport {
            seed: 7,
            k_fit: 20,
            iters: 1500,
            burnin: 500,
            thin: 2,
            repeats: 2,
            interrupted: false,
            wall_clock_secs: 12.5,
            ratios: vec![RatioReport {
                ratio: SplitRatio::new(700, 2800),
                methods: Method::ALL
                    .iter()
                    .flat_map(|&m| {
                        TestSet::ALL.iter().map(move |&s| MethodSummary {
                            method: m,
                            test_set: s,
                            mean: 0.75,
                            se: 0.01,
                            per_repeat: vec![0.74, 0.76],
                        })
                    })
                    .collect(),
                failures: vec![],
                source_test_regenerated: false,
            }],
        };
        let text = report_text(&report);
        for m in Method::ALL {
            assert!(text.contains(m.label()), "missing {m}");
        }
        assert!(text.contains("700:2800"));
        assert!(text.contains("failures: none"));

        let json = report_json(&report);
        assert!(!json.contains("wall_clock"), "wall clock must stay out of reports");
        let parsed: ExperimentReport = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed.ratios, report.ratios);

        let dir = tempfile::tempdir().unwrap();
        let (jp, tp) = write_report_files(&report, dir.path()).unwrap();
        assert_eq!(std::fs::read_to_string(&jp).unwrap(), json);
        assert_eq!(std::fs::read_to_string(&tp).unwrap(), text);
    }

    #[test]
    fn scatter_svg_draws_every_point() {
        let scatter = ScatterData {
            points: vec![[0.0, 0.0], [1.0, 1.0], [-1.0, 0.5], [0.3, -0.7], [2.0, 0.1]],
            populations: vec![
                Population::Source,
                Population::Source,
                Population::Target,
                Population::Target,
                Population::Target,
            ],
            source: FactorSource::FinalIteration,
            explained: [0.6, 0.25],
        };
        let svg = scatter_svg(&scatter);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("width=\"800\" height=\"800\""));
        // 2 source crosses + 1 legend cross; 3 target circles + 1 legend circle.
        assert_eq!(svg.matches("class=\"source\"").count(), 3);
        assert_eq!(svg.matches("class=\"target\"").count(), 4);
        assert!(svg.contains("60.0%"));
        // Deterministic.
        assert_eq!(svg, scatter_svg(&scatter));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scatter.svg");
        write_scatter_svg(&scatter, &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), svg);
    }
}
