//! `tllfm`: simulate benchmark cohorts, fit the factor models or the lasso
//! baseline, score datasets, and run the multi-ratio experiment.
//!
//! Exit codes: 0 success, 1 usage error, 2 bad data or files, 3 numerical
//! failure, 130 interrupted (a valid partial checkpoint is still written).

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};

use clap::{Args, Parser, Subcommand, ValueEnum};
use tllfm_core::data::DEFAULT_PRECISION_PRIOR;
use tllfm_core::eval::ExperimentHooks;
use tllfm_core::gibbs::ProgressEvent;
use tllfm_core::io::{
    read_outcome_column, read_scores, report_text, write_ground_truth, write_report_files,
    write_scatter_svg, write_scores,
};
use tllfm_core::{
    auroc, fit_lasso, fit_plain_lfm, fit_tl_lfm, load_model, predict, predict_lasso, read_dataset,
    run_experiment, save_model, simulate, write_dataset, ChainConfig, Error, ExperimentConfig,
    Hyperparameters, LassoConfig, ModelArtifact, Population, PredictOptions, Result, RunHooks,
    SimulationSpec, SplitRatio, ValidateMode,
};

static INTERRUPTED: AtomicBool = AtomicBool::new(false);

extern "C" fn handle_sigint(_sig: libc::c_int) {
    INTERRUPTED.store(true, Ordering::SeqCst);
}

fn install_sigint_handler() {
    unsafe {
        libc::signal(libc::SIGINT, handle_sigint as *const () as libc::sighandler_t);
    }
}

#[derive(Parser)]
#[command(name = "tllfm", version, about = "Transfer-learning latent factor model toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a simulated cohort and write train/test files.
    Simulate(SimulateArgs),
    /// Fit a model to a training dataset and save it.
    Fit(FitArgs),
    /// Score a dataset with a saved model.
    Predict(PredictArgs),
    /// Report AUROC of saved scores against labels.
    Evaluate(EvaluateArgs),
    /// Run the multi-ratio simulation benchmark end to end.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Training split as target:source, e.g. 700:2800.
    #[arg(long)]
    ratio: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Receives train.csv, test-target.csv, test-source.csv (plus metadata
    /// sidecars) and truth.json.
    #[arg(long)]
    out_dir: PathBuf,
    /// Cohort size before splitting.
    #[arg(long, default_value_t = 5000)]
    n_total: usize,
    /// Rows of the cohort that belong to the target population.
    #[arg(long, default_value_t = 1000)]
    n_target: usize,
    /// Latent dimension P: the outcome plus P-1 observed covariates.
    #[arg(long, default_value_t = 70)]
    p: usize,
    /// Factor count of the generating model.
    #[arg(long, default_value_t = 20)]
    k_true: usize,
    /// Scale of the population-specific loading offsets around the shared
    /// level; 0 makes both populations identical.
    #[arg(long, default_value_t = 1.0)]
    spread: f64,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ModelChoice {
    TlLfm,
    Lfm,
    Lasso,
}

#[derive(Args)]
struct FitArgs {
    /// Training dataset CSV (expects a metadata sidecar next to it).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    model: ModelChoice,
    /// Factor count K (factor models only).
    #[arg(long, default_value_t = 20)]
    k: usize,
    /// Gibbs sweeps per chain.
    #[arg(long, default_value_t = 3000)]
    iters: usize,
    #[arg(long, default_value_t = 1000)]
    burnin: usize,
    #[arg(long, default_value_t = 2)]
    thin: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    /// Also retain per-sweep factor scores in the model file.
    #[arg(long)]
    record_factors: bool,
    /// Prior precision of the shared loading rows.
    #[arg(long, default_value_t = 1.0)]
    phi: f64,
    /// Prior precision of source loadings around the shared rows.
    #[arg(long, default_value_t = 1.0)]
    phi_s: f64,
    /// Prior precision of target loadings around the shared rows.
    #[arg(long, default_value_t = 1.0)]
    phi_t: f64,
    /// Inverse-gamma degrees of freedom for the noise variances.
    #[arg(long, default_value_t = 2.0)]
    v: f64,
    /// Sample the population precisions under a Gamma prior instead of
    /// fixing them at --phi-s / --phi-t.
    #[arg(long)]
    learn_phi: bool,
}

#[derive(Copy, Clone, ValueEnum)]
enum PopChoice {
    Target,
    Source,
}

#[derive(Args)]
struct PredictArgs {
    /// Saved model file from `fit`.
    #[arg(long)]
    model: PathBuf,
    /// Dataset CSV to score (outcome column optional).
    #[arg(long)]
    data: PathBuf,
    /// Population whose loadings score the rows; ignored by lasso models.
    #[arg(long, value_enum, default_value_t = PopChoice::Target)]
    pop: PopChoice,
    /// Scores CSV to write (row,prob).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Scores CSV produced by `predict`.
    #[arg(long)]
    scores: PathBuf,
    /// Dataset CSV whose __y column supplies the labels, row-aligned with
    /// the scored data.
    #[arg(long)]
    labels: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Comma-separated training splits, e.g. 700:2800,500:2500.
    #[arg(long, value_delimiter = ',', required = true)]
    ratios: Vec<String>,
    /// Fresh simulated cohorts per ratio.
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Receives report.json, report.txt, and one factor scatter SVG per
    /// ratio.
    #[arg(long)]
    out: PathBuf,
    /// Factor count fitted by both factor models.
    #[arg(long, default_value_t = 20)]
    k: usize,
    /// Gibbs sweeps per fit; defaults to 1500 (3000 with --full).
    #[arg(long)]
    iters: Option<usize>,
    /// Burn-in sweeps; defaults to 500 (1000 with --full).
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long, default_value_t = 2)]
    thin: usize,
    /// Run the full 3000-sweep schedule instead of the lighter default.
    #[arg(long)]
    full: bool,
}

enum Outcome {
    Done,
    Interrupted,
}

fn error_code(err: &Error) -> u8 {
    match err {
        Error::InvalidArgument(_) => 1,
        Error::Validation(_)
        | Error::Schema(_)
        | Error::Dimension(_)
        | Error::Format { .. }
        | Error::Io(_) => 2,
        Error::Numerical(_) | Error::NonConvergence { .. } => 3,
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<Outcome> {
    let spec = SimulationSpec {
        n_total: args.n_total,
        n_target: args.n_target,
        p_latent: args.p,
        k_true: args.k_true,
        ratio: SplitRatio::parse(&args.ratio)?,
        seed: args.seed,
        loading_spread: args.spread,
    };
    let (truth, data) = simulate(&spec)?;
    std::fs::create_dir_all(&args.out_dir)?;
    write_dataset(&data.train, &args.out_dir.join("train.csv"))?;
    write_dataset(&data.test_target, &args.out_dir.join("test-target.csv"))?;
    write_dataset(&data.test_source, &args.out_dir.join("test-source.csv"))?;
    write_ground_truth(&truth, &args.out_dir.join("truth.json"))?;
    eprintln!(
        "wrote train ({} rows), test-target ({}), test-source ({}{}) to {}",
        data.train.n_rows(),
        data.test_target.n_rows(),
        data.test_source.n_rows(),
        if data.source_test_regenerated { ", regenerated" } else { "" },
        args.out_dir.display()
    );
    Ok(Outcome::Done)
}

fn cmd_fit(args: FitArgs) -> Result<Outcome> {
    let mode = if args.model == ModelChoice::TlLfm {
        ValidateMode::FitHierarchical
    } else {
        ValidateMode::FitPooled
    };
    let dataset = read_dataset(&args.data, mode)?;
    if args.model == ModelChoice::Lasso {
        let config = LassoConfig { seed: args.seed, ..LassoConfig::default() };
        let model = fit_lasso(&dataset, &config)?;
        save_model(&ModelArtifact::Lasso(model), &args.out)?;
        eprintln!("saved lasso model to {}", args.out.display());
        return Ok(Outcome::Done);
    }
    let hyper = Hyperparameters {
        n_factors: args.k,
        global_precision: args.phi,
        source_precision: args.phi_s,
        target_precision: args.phi_t,
        noise_df: args.v,
        precision_prior: args.learn_phi.then_some(DEFAULT_PRECISION_PRIOR),
        iters: args.iters,
        burnin: args.burnin,
        thin: args.thin,
        seed: args.seed,
    };
    let mut config = ChainConfig::from_hyper(&hyper);
    config.record_factors = args.record_factors;
    let progress = |ev: ProgressEvent| {
        if ev.sweep % 200 == 0 || ev.sweep == ev.total_sweeps {
            eprintln!("chain {}: sweep {} of {}", ev.chain, ev.sweep, ev.total_sweeps);
        }
    };
    let hooks = RunHooks {
        cancel: Some(&INTERRUPTED),
        progress: Some(&progress as &(dyn Fn(ProgressEvent) + Sync)),
    };
    let samples = if args.model == ModelChoice::TlLfm {
        fit_tl_lfm(&dataset, &hyper, &config, &hooks)?
    } else {
        fit_plain_lfm(&dataset, &hyper, &config, &hooks)?
    };
    let interrupted = samples.interrupted;
    save_model(&ModelArtifact::Posterior(samples), &args.out)?;
    if interrupted {
        eprintln!("interrupted: wrote partial checkpoint to {}", args.out.display());
        Ok(Outcome::Interrupted)
    } else {
        eprintln!("saved model to {}", args.out.display());
        Ok(Outcome::Done)
    }
}

fn cmd_predict(args: PredictArgs) -> Result<Outcome> {
    let artifact = load_model(&args.model)?;
    let dataset = read_dataset(&args.data, ValidateMode::Scoring)?;
    let scores = match &artifact {
        ModelArtifact::Posterior(samples) => {
            let pop = match args.pop {
                PopChoice::Target => Population::Target,
                PopChoice::Source => Population::Source,
            };
            predict(samples, &dataset, pop, &PredictOptions::default())?.prob
        }
        ModelArtifact::Lasso(model) => predict_lasso(model, &dataset)?,
    };
    write_scores(&scores, &args.out)?;
    eprintln!("scored {} rows to {}", scores.len(), args.out.display());
    Ok(Outcome::Done)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<Outcome> {
    let scores = read_scores(&args.scores)?;
    let labels = read_outcome_column(&args.labels)?;
    let value = auroc(&scores, &labels)?;
    let positives = labels.iter().filter(|&&l| l == 1).count();
    println!("n          {}", labels.len());
    println!("positives  {positives}");
    println!("negatives  {}", labels.len() - positives);
    println!("auroc      {value:.6}");
    Ok(Outcome::Done)
}

fn cmd_experiment(args: ExperimentArgs) -> Result<Outcome> {
    let mut config = ExperimentConfig::benchmark(args.seed);
    if args.full {
        config = config.full_scale();
    }
    config.ratios = args
        .ratios
        .iter()
        .map(|r| SplitRatio::parse(r))
        .collect::<Result<Vec<_>>>()?;
    config.repeats = args.repeats;
    config.k_fit = args.k;
    if let Some(iters) = args.iters {
        config.iters = iters;
    }
    if let Some(burnin) = args.burnin {
        config.burnin = burnin;
    }
    config.thin = args.thin;
    let status = |msg: &str| eprintln!("{msg}");
    let hooks = ExperimentHooks {
        cancel: Some(&INTERRUPTED),
        status: Some(&status as &(dyn Fn(&str) + Sync)),
    };
    let output = run_experiment(&config, &hooks)?;
    write_report_files(&output.report, &args.out)?;
    for (ratio, scatter) in &output.scatters {
        let name = format!("scatter-{}.svg", ratio.label().replace(':', "-"));
        write_scatter_svg(scatter, &args.out.join(name))?;
    }
    print!("{}", report_text(&output.report));
    if output.report.interrupted {
        eprintln!("interrupted: partial report written to {}", args.out.display());
        Ok(Outcome::Interrupted)
    } else {
        Ok(Outcome::Done)
    }
}

fn main() -> ExitCode {
    install_sigint_handler();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests arrive as "errors" but exit 0; real
            // usage problems map to exit 1 per the documented categories.
            let code = u8::from(e.use_stderr());
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Experiment(a) => cmd_experiment(a),
    };
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Interrupted) => ExitCode::from(130),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(error_code(&e))
        }
    }
}
