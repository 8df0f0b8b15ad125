//! Command-line front end: argument parsing, the JSON run configuration, and
//! the `synth`, `fit`, `eval` and `bench` commands.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::covariance::{EpochStats, EstimatorConfig};
use crate::datagen::{gen_model, gen_signals, GeneratorParams, MixingKind, MixingModel};
use crate::error::{Error, Result};
use crate::eval::{
    mdm_accuracy, mdm_train, nspace_error, nspace_error_raw, run_toy_experiment, ExperimentParams, ExperimentReport,
    Method,
};
use crate::gassa::{fit, GassaConfig, GassaResult, GradientMode};
use crate::grassmann::Subspace;
use crate::io::{read_json, read_labeled_set, read_signals_csv, write_json, write_labeled_set, write_signals_csv};
use crate::optim::OptimizerOptions;
use crate::spd::{MetricKind, SymPosDef};
use crate::ssa::{fit_ssa, stats_from_signals, SsaConfig, SsaResult};

#[derive(Debug, Parser)]
#[command(name = "gassa", version, about = "Geometry-aware stationary subspace analysis")]
pub struct Cli {
    #[command(flatten)]
    pub shared: SharedArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct SharedArgs {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic signals, ground truth and epoch covariances.
    Synth,
    /// Fit gaSSA or SSA to a covariance set, epoch statistics or signals.
    Fit(FitArgs),
    /// Score a fit against ground truth and/or labeled covariances.
    Eval(EvalArgs),
    /// Run the synthetic benchmark.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    #[default]
    Gassa,
    Ssa,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Covariance set JSON, epoch statistics JSON, or signal CSV.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<FitMethod>,
    #[arg(long)]
    pub metric: Option<MetricKind>,
    #[arg(long, overrides_with = "no_whiten")]
    pub whiten: bool,
    #[arg(long, overrides_with = "whiten")]
    pub no_whiten: bool,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Epoch length when the input is a signal CSV.
    #[arg(long)]
    pub epoch_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Result JSON written by `fit`.
    #[arg(long)]
    pub result: PathBuf,
    /// Ground-truth JSON written by `synth`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Labeled covariance set for MDM training.
    #[arg(long)]
    pub labeled: Option<PathBuf>,
    /// Labeled covariance set for MDM testing (defaults to the training set).
    #[arg(long)]
    pub test: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Fail unless both unwhitened gaSSA variants beat SSA on mean error.
    #[arg(long)]
    pub assert_ordering: bool,
    #[arg(long)]
    pub repeats: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    #[serde(rename = "D")]
    pub d: usize,
    pub m: usize,
    pub epochs: usize,
    pub epoch_len: usize,
    pub mixing: MixingKind,
    pub eig_range: (f64, f64),
    pub coupling_std: Option<f64>,
    pub mean_std: f64,
    pub estimator: EstimatorConfig,
}

impl Default for SynthSection {
    fn default() -> Self {
        let g = GeneratorParams::default();
        SynthSection {
            d: g.d,
            m: g.m,
            epochs: g.epochs,
            epoch_len: g.epoch_len,
            mixing: g.mixing,
            eig_range: g.eig_range,
            coupling_std: g.coupling_std,
            mean_std: g.mean_std,
            estimator: EstimatorConfig::default(),
        }
    }
}

impl SynthSection {
    pub fn generator(&self, seed: u64) -> GeneratorParams {
        GeneratorParams {
            d: self.d,
            m: self.m,
            epochs: self.epochs,
            epoch_len: self.epoch_len,
            seed,
            mixing: self.mixing,
            eig_range: self.eig_range,
            coupling_std: self.coupling_std,
            mean_std: self.mean_std,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub input: Option<PathBuf>,
    pub method: FitMethod,
    pub metric: MetricKind,
    pub whiten: bool,
    pub m: Option<usize>,
    pub restarts: usize,
    pub optimizer: OptimizerOptions,
    pub gradient_mode: GradientMode,
    /// Used when the input is a signal CSV.
    pub epoch_len: Option<usize>,
    pub overlap: f64,
    pub estimator: EstimatorConfig,
}

impl Default for FitSection {
    fn default() -> Self {
        FitSection {
            input: None,
            method: FitMethod::Gassa,
            metric: MetricKind::Airm,
            whiten: false,
            m: None,
            restarts: 5,
            optimizer: OptimizerOptions::default(),
            gradient_mode: GradientMode::Analytic,
            epoch_len: None,
            overlap: 0.0,
            estimator: EstimatorConfig::default(),
        }
    }
}

/// The JSON run configuration. Every field is optional; command-line flags
/// override it. All randomness derives from `seed`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub synth: SynthSection,
    pub fit: FitSection,
    pub bench: ExperimentParams,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(RunConfig::default()) };
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Apply the shared flags.
    pub fn with_shared(mut self, shared: &SharedArgs) -> Self {
        if let Some(seed) = shared.seed {
            self.seed = seed;
        }
        if let Some(out) = &shared.out {
            self.out = Some(out.clone());
        }
        if let Some(threads) = shared.threads {
            self.threads = Some(threads);
        }
        self
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("gassa-out"))
    }
}

/// Ground truth written by `synth`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthFile {
    pub model: MixingModel,
    pub epoch_bounds: Vec<(usize, usize)>,
    pub estimator: EstimatorConfig,
}

/// Result written by `fit`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum FitOutput {
    Gassa(GassaResult),
    Ssa(SsaResult),
}

impl FitOutput {
    pub fn n_basis(&self) -> &Subspace {
        match self {
            FitOutput::Gassa(r) => &r.n_basis,
            FitOutput::Ssa(r) => &r.n_basis,
        }
    }

    pub fn s_basis(&self) -> &Subspace {
        match self {
            FitOutput::Gassa(r) => &r.s_basis,
            FitOutput::Ssa(r) => &r.s_basis,
        }
    }

    pub fn cost(&self) -> f64 {
        match self {
            FitOutput::Gassa(r) => r.cost,
            FitOutput::Ssa(r) => r.cost,
        }
    }

    fn best(&self) -> &crate::gassa::RestartRecord {
        match self {
            FitOutput::Gassa(r) => &r.per_restart[r.best_restart],
            FitOutput::Ssa(r) => &r.per_restart[r.best_restart],
        }
    }

    /// One-line summary: cost, iterations and gradient norm of the best restart.
    pub fn summary_line(&self) -> String {
        let best = self.best();
        let method = match self {
            FitOutput::Gassa(r) => format!("gassa metric={} whiten={}", r.config.metric, r.config.whiten),
            FitOutput::Ssa(_) => "ssa".to_string(),
        };
        format!(
            "{method} cost={:e} iterations={} grad_norm={:e} converged={}",
            self.cost(),
            best.iterations,
            best.grad_norm,
            best.converged
        )
    }
}

/// Files written by `synth`.
pub const SIGNALS_FILE: &str = "signals.csv";
pub const TRUTH_FILE: &str = "truth.json";
pub const COVS_FILE: &str = "covs.json";
pub const EPOCHS_FILE: &str = "epochs.json";
pub const RESULT_FILE: &str = "result.json";
pub const EVAL_FILE: &str = "eval.json";

pub fn cmd_synth(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let params = config.synth.generator(config.seed);
    let model = gen_model(&params)?;
    let signals = gen_signals(&model)?;
    let stats = stats_from_signals(&signals.samples, params.epoch_len, 0.0, &config.synth.estimator)?;
    let covs: Vec<SymPosDef> = stats.iter().map(|s| s.cov.clone()).collect();

    let out = config.out_dir();
    std::fs::create_dir_all(&out)?;
    let paths: Vec<PathBuf> = [SIGNALS_FILE, TRUTH_FILE, COVS_FILE, EPOCHS_FILE].iter().map(|f| out.join(f)).collect();
    write_signals_csv(&paths[0], &signals.samples)?;
    let truth = TruthFile { model, epoch_bounds: signals.epoch_bounds, estimator: config.synth.estimator };
    write_json(&paths[1], &truth)?;
    write_labeled_set(&paths[2], &covs, None)?;
    write_json(&paths[3], &stats)?;
    Ok(paths)
}

/// Fit input: epoch statistics when available, else bare covariances.
enum FitInput {
    Stats(Vec<EpochStats>),
    Covs(Vec<SymPosDef>),
}

fn load_fit_input(path: &Path, section: &FitSection) -> Result<FitInput> {
    if !path.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("input {} does not exist", path.display()),
        )));
    }
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let samples = read_signals_csv(path)?;
        let len = section
            .epoch_len
            .ok_or_else(|| Error::Config("signal input needs an epoch length (--epoch-len)".into()))?;
        return Ok(FitInput::Stats(stats_from_signals(&samples, len, section.overlap, &section.estimator)?));
    }
    let value: serde_json::Value = read_json(path)?;
    let is_stats = value.as_array().and_then(|a| a.first()).is_some_and(|v| v.get("cov").is_some());
    if is_stats {
        let stats: Vec<EpochStats> = serde_json::from_value(value).map_err(|e| Error::Schema(e.to_string()))?;
        Ok(FitInput::Stats(stats))
    } else {
        Ok(FitInput::Covs(read_labeled_set(path)?.0))
    }
}

pub fn cmd_fit(config: &RunConfig) -> Result<(PathBuf, FitOutput)> {
    let section = &config.fit;
    let input = section.input.as_deref().ok_or_else(|| Error::Config("fit needs an input (--input)".into()))?;
    let data = load_fit_input(input, section)?;
    let d = match &data {
        FitInput::Stats(s) => s.first().map(|e| e.cov.dim()),
        FitInput::Covs(c) => c.first().map(SymPosDef::dim),
    }
    .ok_or_else(|| Error::InsufficientData("input holds no epochs".into()))?;
    let m = section.m.ok_or_else(|| Error::Config(format!("fit needs the stationary dimension (--m), D={d}")))?;

    let output = match section.method {
        FitMethod::Gassa => {
            let covs = match data {
                FitInput::Stats(s) => s.into_iter().map(|e| e.cov).collect(),
                FitInput::Covs(c) => c,
            };
            let cfg = GassaConfig {
                metric: section.metric,
                whiten: section.whiten,
                m,
                restarts: section.restarts,
                seed: config.seed,
                optimizer: section.optimizer.clone(),
                gradient_mode: section.gradient_mode,
            };
            FitOutput::Gassa(fit(&covs, &cfg)?)
        }
        FitMethod::Ssa => {
            let FitInput::Stats(stats) = data else {
                return Err(Error::Schema("ssa needs epoch statistics or signals, not bare covariances".into()));
            };
            let cfg = SsaConfig { m, restarts: section.restarts, seed: config.seed, optimizer: section.optimizer.clone() };
            FitOutput::Ssa(fit_ssa(&stats, &cfg)?)
        }
    };
    let out = config.out_dir();
    std::fs::create_dir_all(&out)?;
    let path = out.join(RESULT_FILE);
    write_json(&path, &output)?;
    Ok((path, output))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nspace_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nspace_error_raw: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mdm_accuracy: Option<f64>,
}

impl EvalReport {
    pub fn lines(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let (Some(e), Some(raw)) = (self.nspace_error, self.nspace_error_raw) {
            out.push(format!("nspace_error={e:e} raw={raw:e}"));
        }
        if let Some(a) = self.mdm_accuracy {
            out.push(format!("mdm_accuracy={a}"));
        }
        out
    }
}

pub fn cmd_eval(config: &RunConfig, args: &EvalArgs) -> Result<(Option<PathBuf>, EvalReport)> {
    if args.truth.is_none() && args.labeled.is_none() {
        return Err(Error::Config("eval needs --truth and/or --labeled".into()));
    }
    let result: FitOutput = read_json(&args.result)?;
    let mut report = EvalReport { nspace_error: None, nspace_error_raw: None, mdm_accuracy: None };
    if let Some(truth) = &args.truth {
        let truth: TruthFile = read_json(truth)?;
        let n = result.n_basis();
        if n.ambient_dim() != truth.model.d() || n.sub_dim() != truth.model.d() - truth.model.m() {
            return Err(Error::Schema(format!(
                "result n-space is {}x{} but the truth has D={} and m={}",
                n.ambient_dim(),
                n.sub_dim(),
                truth.model.d(),
                truth.model.m()
            )));
        }
        report.nspace_error = Some(nspace_error(n, &truth.model)?);
        report.nspace_error_raw = Some(nspace_error_raw(n, &truth.model)?);
    }
    if let Some(train) = &args.labeled {
        let metric = match &result {
            FitOutput::Gassa(r) => r.config.metric,
            FitOutput::Ssa(_) => config.fit.metric,
        };
        let labeled = |p: &Path| -> Result<(Vec<SymPosDef>, Vec<i64>)> {
            let (covs, labels) = read_labeled_set(p)?;
            let labels = labels.ok_or_else(|| Error::Schema(format!("{}: matrices carry no labels", p.display())))?;
            if covs[0].dim() != result.s_basis().ambient_dim() {
                return Err(Error::Schema(format!(
                    "{}: matrices are {}x{} but the result has D={}",
                    p.display(),
                    covs[0].dim(),
                    covs[0].dim(),
                    result.s_basis().ambient_dim()
                )));
            }
            Ok((covs, labels))
        };
        let (covs, labels) = labeled(train)?;
        let model = mdm_train(&covs, &labels, result.s_basis(), metric)?;
        let (test_covs, test_labels) = match &args.test {
            Some(p) => labeled(p)?,
            None => (covs, labels),
        };
        report.mdm_accuracy = Some(mdm_accuracy(&model, &test_covs, &test_labels)?);
    }
    let path = match &config.out {
        Some(out) => {
            std::fs::create_dir_all(out)?;
            let path = out.join(EVAL_FILE);
            write_json(&path, &report)?;
            Some(path)
        }
        None => None,
    };
    Ok((path, report))
}

/// Mean errors must order as gaSSA(nw) < SSA for both metrics.
pub fn check_ordering(report: &ExperimentReport) -> Result<()> {
    let mean = |m: Method| {
        report
            .summary_for(m)
            .and_then(|s| s.mean)
            .ok_or_else(|| Error::Assertion(format!("no successful runs for {m}")))
    };
    let ssa = mean(Method::Ssa)?;
    for m in [Method::GassaAirmUnwhitened, Method::GassaSteinUnwhitened] {
        let e = mean(m)?;
        if e >= ssa {
            return Err(Error::Assertion(format!("{m} mean error {e:e} is not below ssa {ssa:e}")));
        }
    }
    Ok(())
}

pub fn cmd_bench(config: &RunConfig, args: &BenchArgs) -> Result<(PathBuf, ExperimentReport)> {
    let mut params = config.bench.clone();
    params.seed = config.seed;
    if let Some(r) = args.repeats {
        params.repeats = r;
    }
    let report = run_toy_experiment(&params)?;
    let out = config.out_dir();
    report.write(&out)?;
    if let Some(s) = report.summary.iter().find(|s| !s.valid) {
        return Err(Error::InsufficientData(format!(
            "{}: {} of {} repeats failed",
            s.method, s.failed, params.repeats
        )));
    }
    if args.assert_ordering {
        check_ordering(&report)?;
    }
    Ok((out, report))
}

/// Process exit code for an error: 2 for unusable input or configuration,
/// 3 for a failed assertion, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound => 2,
        Error::Config(_) | Error::Schema(_) | Error::Json(_) => 2,
        Error::Assertion(_) => 3,
        _ => 1,
    }
}

/// Single-line, machine-parsable error report.
pub fn error_line(err: &Error) -> String {
    let msg = err.to_string().replace(['\n', '\r'], " ");
    format!("error: {}: {msg}", err.category())
}

fn apply_fit_flags(config: &mut RunConfig, args: &FitArgs) {
    let f = &mut config.fit;
    if let Some(p) = &args.input {
        f.input = Some(p.clone());
    }
    if let Some(m) = args.method {
        f.method = m;
    }
    if let Some(m) = args.metric {
        f.metric = m;
    }
    if args.whiten {
        f.whiten = true;
    }
    if args.no_whiten {
        f.whiten = false;
    }
    if let Some(m) = args.m {
        f.m = Some(m);
    }
    if let Some(r) = args.restarts {
        f.restarts = r;
    }
    if let Some(t) = args.epoch_len {
        f.epoch_len = Some(t);
    }
}

/// Execute a parsed command line, returning the lines to print on success.
pub fn run(cli: &Cli) -> Result<Vec<String>> {
    let mut config = RunConfig::load(cli.shared.config.as_deref())?.with_shared(&cli.shared);
    if let Some(n) = config.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        // Fails only if a pool already exists, in which case it is reused.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Synth => {
            let paths = cmd_synth(&config)?;
            Ok(paths.iter().map(|p| format!("wrote {}", p.display())).collect())
        }
        Command::Fit(args) => {
            apply_fit_flags(&mut config, args);
            let (path, output) = cmd_fit(&config)?;
            Ok(vec![output.summary_line(), format!("wrote {}", path.display())])
        }
        Command::Eval(args) => {
            let (path, report) = cmd_eval(&config, args)?;
            let mut lines = report.lines();
            lines.extend(path.map(|p| format!("wrote {}", p.display())));
            Ok(lines)
        }
        Command::Bench(args) => {
            let (out, report) = cmd_bench(&config, args)?;
            let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
            let mut lines: Vec<String> = report
                .summary
                .iter()
                .map(|s| format!("{} mean={} std={} repeats={}", s.method, fmt(s.mean), fmt(s.std), s.succeeded))
                .collect();
            lines.push(format!("wrote {}", out.display()));
            Ok(lines)
        }
    }
}
