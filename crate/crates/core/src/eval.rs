//! Evaluation: n-space recovery error, the minimum-distance-to-mean
//! classifier, and the synthetic benchmark comparing gaSSA with SSA.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::EstimatorConfig;
use crate::datagen::{gen_model, gen_signals, GeneratorParams, MixingKind, MixingModel};
use crate::error::{Error, Result};
use crate::gassa::{fit, project_to_s_space, GassaConfig, RestartRecord};
use crate::grassmann::{grassmann_dist, Subspace};
use crate::io::write_json;
use crate::optim::OptimizerOptions;
use crate::spd::{MetricKind, SymPosDef};
use crate::ssa::{fit_ssa, stats_from_signals, SsaConfig};

/// Largest possible Grassmann distance between `k`-dimensional subspaces.
pub fn max_grassmann_dist(k: usize) -> f64 {
    (k as f64).sqrt() * std::f64::consts::FRAC_PI_2
}

/// Raw Grassmann distance between an estimated n-space and the true span of
/// `A^n`.
pub fn nspace_error_raw(estimated: &Subspace, model: &MixingModel) -> Result<f64> {
    let k = model.d() - model.m();
    if estimated.ambient_dim() != model.d() || estimated.sub_dim() != k {
        return Err(Error::BadDims(format!(
            "estimated n-space is {}x{}, expected {}x{k}",
            estimated.ambient_dim(),
            estimated.sub_dim(),
            model.d()
        )));
    }
    grassmann_dist(estimated, &model.true_nspace()?)
}

/// [`nspace_error_raw`] divided by its maximum, so it lies in `[0, 1]`.
pub fn nspace_error(estimated: &Subspace, model: &MixingModel) -> Result<f64> {
    Ok(nspace_error_raw(estimated, model)? / max_grassmann_dist(model.d() - model.m()))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MdmModel {
    pub metric: MetricKind,
    pub s_basis: Subspace,
    pub class_means: BTreeMap<i64, SymPosDef>,
}

/// Train on every class appearing in `labels`.
pub fn mdm_train(covs: &[SymPosDef], labels: &[i64], s_basis: &Subspace, metric: MetricKind) -> Result<MdmModel> {
    let mut classes: Vec<i64> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    mdm_train_classes(covs, labels, &classes, s_basis, metric)
}

/// Train with an explicit class list; every listed class needs an example.
pub fn mdm_train_classes(
    covs: &[SymPosDef],
    labels: &[i64],
    classes: &[i64],
    s_basis: &Subspace,
    metric: MetricKind,
) -> Result<MdmModel> {
    if covs.len() != labels.len() {
        return Err(Error::BadDims(format!("{} matrices but {} labels", covs.len(), labels.len())));
    }
    if classes.len() < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 classes, got {}", classes.len())));
    }
    let compressed: Vec<SymPosDef> = covs.iter().map(|c| project_to_s_space(s_basis, c)).collect::<Result<_>>()?;
    let mut class_means = BTreeMap::new();
    for &class in classes {
        let members: Vec<SymPosDef> =
            compressed.iter().zip(labels).filter(|(_, &l)| l == class).map(|(c, _)| c.clone()).collect();
        if members.is_empty() {
            return Err(Error::EmptyClass(class));
        }
        class_means.insert(class, metric.mean(&members)?);
    }
    Ok(MdmModel { metric, s_basis: s_basis.clone(), class_means })
}

/// Class whose mean is closest to `QᵀΣQ`; ties go to the lower label.
pub fn mdm_classify(model: &MdmModel, sigma: &SymPosDef) -> Result<i64> {
    let x = project_to_s_space(&model.s_basis, sigma)?;
    let mut best: Option<(i64, f64)> = None;
    for (&label, mean) in &model.class_means {
        let d = model.metric.dist2(&x, mean)?;
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((label, d));
        }
    }
    best.map(|(l, _)| l).ok_or_else(|| Error::InsufficientData("model has no classes".into()))
}

/// Fraction of correctly classified matrices.
pub fn mdm_accuracy(model: &MdmModel, covs: &[SymPosDef], labels: &[i64]) -> Result<f64> {
    if covs.len() != labels.len() || covs.is_empty() {
        return Err(Error::BadDims(format!("{} matrices but {} labels", covs.len(), labels.len())));
    }
    let mut correct = 0;
    for (c, &l) in covs.iter().zip(labels) {
        if mdm_classify(model, c)? == l {
            correct += 1;
        }
    }
    Ok(correct as f64 / covs.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    GassaAirmWhitened,
    GassaAirmUnwhitened,
    GassaSteinWhitened,
    GassaSteinUnwhitened,
    Ssa,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::GassaAirmWhitened,
        Method::GassaAirmUnwhitened,
        Method::GassaSteinWhitened,
        Method::GassaSteinUnwhitened,
        Method::Ssa,
    ];

    pub fn gassa(metric: MetricKind, whiten: bool) -> Method {
        match (metric, whiten) {
            (MetricKind::Airm, true) => Method::GassaAirmWhitened,
            (MetricKind::Airm, false) => Method::GassaAirmUnwhitened,
            (MetricKind::Stein, true) => Method::GassaSteinWhitened,
            (MetricKind::Stein, false) => Method::GassaSteinUnwhitened,
        }
    }

    /// `(metric, whiten)` for gaSSA variants.
    pub fn gassa_variant(self) -> Option<(MetricKind, bool)> {
        match self {
            Method::GassaAirmWhitened => Some((MetricKind::Airm, true)),
            Method::GassaAirmUnwhitened => Some((MetricKind::Airm, false)),
            Method::GassaSteinWhitened => Some((MetricKind::Stein, true)),
            Method::GassaSteinUnwhitened => Some((MetricKind::Stein, false)),
            Method::Ssa => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::GassaAirmWhitened => "gassa_airm_whitened",
            Method::GassaAirmUnwhitened => "gassa_airm_unwhitened",
            Method::GassaSteinWhitened => "gassa_stein_whitened",
            Method::GassaSteinUnwhitened => "gassa_stein_unwhitened",
            Method::Ssa => "ssa",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentParams {
    #[serde(rename = "D")]
    pub d: usize,
    pub m: usize,
    /// Number of epochs `N`.
    pub epochs: usize,
    /// Epoch length `T`.
    pub epoch_len: usize,
    pub repeats: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub restarts: usize,
    pub optimizer: OptimizerOptions,
    pub estimator: EstimatorConfig,
    pub mixing: MixingKind,
    pub eig_range: (f64, f64),
    pub coupling_std: Option<f64>,
    pub mean_std: f64,
}

impl Default for ExperimentParams {
    fn default() -> Self {
        let g = GeneratorParams::default();
        ExperimentParams {
            d: g.d,
            m: g.m,
            epochs: g.epochs,
            epoch_len: g.epoch_len,
            repeats: 25,
            methods: Method::ALL.to_vec(),
            seed: 0,
            restarts: 5,
            optimizer: OptimizerOptions::default(),
            estimator: EstimatorConfig::default(),
            mixing: g.mixing,
            eig_range: g.eig_range,
            coupling_std: g.coupling_std,
            mean_std: g.mean_std,
        }
    }
}

impl ExperimentParams {
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

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if self.restarts == 0 {
            return Err(Error::Config("restarts must be at least 1".into()));
        }
        self.optimizer.validate()?;
        self.generator(0).validate()
    }

    /// `(generator seed, fit seed)` of a repeat, drawn from its own stream.
    pub fn repeat_seeds(&self, repeat: usize) -> (u64, u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(repeat as u64);
        (rng.next_u64(), rng.next_u64())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MethodRun {
    pub method: Method,
    pub error: Option<f64>,
    pub raw_error: Option<f64>,
    pub cost: Option<f64>,
    pub per_restart: Vec<RestartRecord>,
    pub seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RepeatRecord {
    pub repeat: usize,
    pub generator_seed: u64,
    pub fit_seed: u64,
    pub runs: Vec<MethodRun>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub mean: Option<f64>,
    /// Sample standard deviation; absent with fewer than two successful repeats.
    pub std: Option<f64>,
    pub std_error: Option<f64>,
    pub raw_mean: Option<f64>,
    pub succeeded: usize,
    pub failed: usize,
    /// False when more than 20% of the repeats failed.
    pub valid: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub params: ExperimentParams,
    pub summary: Vec<MethodSummary>,
    pub repeats: Vec<RepeatRecord>,
    pub seconds: f64,
}

impl ExperimentReport {
    pub fn summary_for(&self, method: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }

    /// Writes `report.json` and `summary.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("report.json"), self)?;
        let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
        w.write_record(["method", "mean", "std", "repeats"])?;
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for s in &self.summary {
            w.write_record([s.method.name().to_string(), fmt(s.mean), fmt(s.std), s.succeeded.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn run_method(method: Method, params: &ExperimentParams, fit_seed: u64, model: &MixingModel, stats: &[crate::ssa::EpochStats]) -> MethodRun {
    let start = Instant::now();
    let outcome = match method.gassa_variant() {
        Some((metric, whiten)) => {
            let covs: Vec<SymPosDef> = stats.iter().map(|s| s.cov.clone()).collect();
            let cfg = GassaConfig {
                metric,
                whiten,
                m: params.m,
                restarts: params.restarts,
                seed: fit_seed,
                optimizer: params.optimizer.clone(),
                ..Default::default()
            };
            fit(&covs, &cfg).map(|r| (r.n_basis, r.cost, r.per_restart))
        }
        None => {
            let cfg = SsaConfig { m: params.m, restarts: params.restarts, seed: fit_seed, optimizer: params.optimizer.clone() };
            fit_ssa(stats, &cfg).map(|r| (r.n_basis, r.cost, r.per_restart))
        }
    };
    let outcome = outcome.and_then(|(n, cost, restarts)| {
        Ok((nspace_error(&n, model)?, nspace_error_raw(&n, model)?, cost, restarts))
    });
    let seconds = start.elapsed().as_secs_f64();
    match outcome {
        Ok((error, raw, cost, per_restart)) => MethodRun {
            method,
            error: Some(error),
            raw_error: Some(raw),
            cost: Some(cost),
            per_restart,
            seconds,
            failure: None,
        },
        Err(e) => MethodRun {
            method,
            error: None,
            raw_error: None,
            cost: None,
            per_restart: Vec::new(),
            seconds,
            failure: Some(format!("{}: {e}", e.category())),
        },
    }
}

fn run_repeat(params: &ExperimentParams, repeat: usize) -> RepeatRecord {
    let (generator_seed, fit_seed) = params.repeat_seeds(repeat);
    let data = gen_model(&params.generator(generator_seed)).and_then(|model| {
        let signals = gen_signals(&model)?;
        let stats = stats_from_signals(&signals.samples, params.epoch_len, 0.0, &params.estimator)?;
        Ok((model, stats))
    });
    match data {
        Ok((model, stats)) => {
            let runs = params.methods.iter().map(|&m| run_method(m, params, fit_seed, &model, &stats)).collect();
            RepeatRecord { repeat, generator_seed, fit_seed, runs, failure: None }
        }
        Err(e) => RepeatRecord {
            repeat,
            generator_seed,
            fit_seed,
            runs: Vec::new(),
            failure: Some(format!("{}: {e}", e.category())),
        },
    }
}

fn summarize(method: Method, repeats: &[RepeatRecord]) -> MethodSummary {
    let errors: Vec<(f64, f64)> = repeats
        .iter()
        .filter_map(|r| r.runs.iter().find(|run| run.method == method))
        .filter_map(|run| Some((run.error?, run.raw_error?)))
        .collect();
    let n = errors.len();
    let failed = repeats.len() - n;
    let mean = (n > 0).then(|| errors.iter().map(|e| e.0).sum::<f64>() / n as f64);
    let raw_mean = (n > 0).then(|| errors.iter().map(|e| e.1).sum::<f64>() / n as f64);
    let std = mean.filter(|_| n >= 2).map(|mu| {
        (errors.iter().map(|e| (e.0 - mu).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    });
    MethodSummary {
        method,
        mean,
        std,
        std_error: std.map(|s| s / (n as f64).sqrt()),
        raw_mean,
        succeeded: n,
        failed,
        valid: failed * 5 <= repeats.len() && n > 0,
    }
}

/// Generate fresh data for every repeat, fit every method, and aggregate the
/// n-space errors. Repeats run concurrently; results are ordered by repeat.
pub fn run_toy_experiment(params: &ExperimentParams) -> Result<ExperimentReport> {
    params.validate()?;
    let start = Instant::now();
    let repeats: Vec<RepeatRecord> = (0..params.repeats).into_par_iter().map(|r| run_repeat(params, r)).collect();
    let summary = params.methods.iter().map(|&m| summarize(m, &repeats)).collect();
    Ok(ExperimentReport { params: params.clone(), summary, repeats, seconds: start.elapsed().as_secs_f64() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::GeneratorParams;
    use crate::testutil::random_spd;
    use nalgebra::DMatrix;

    fn small_model() -> MixingModel {
        gen_model(&GeneratorParams { d: 6, m: 3, epochs: 4, epoch_len: 50, seed: 2, ..Default::default() }).unwrap()
    }

    #[test]
    fn nspace_error_of_truth_is_zero_and_basis_invariant() {
        let model = small_model();
        let truth = model.true_nspace().unwrap();
        assert!(nspace_error(&truth, &model).unwrap() < 1e-7);
        let an = model.mixing.columns(3, 3).into_owned();
        let mixed = &an * DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0]);
        assert!(nspace_error(&Subspace::from_span(&mixed).unwrap(), &model).unwrap() < 1e-7);
    }

    #[test]
    fn orthogonal_estimate_has_unit_error() {
        let model = small_model();
        let perp = model.true_nspace().unwrap().complement();
        assert!((nspace_error(&perp, &model).unwrap() - 1.0).abs() < 1e-12);
        let wrong = Subspace::coordinate(6, 2).unwrap();
        assert!(matches!(nspace_error(&wrong, &model), Err(Error::BadDims(_))));
    }

    #[test]
    fn mdm_single_examples_are_the_means() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let covs: Vec<_> = (0..2).map(|_| random_spd(&mut rng, 4)).collect();
        let q = Subspace::coordinate(4, 2).unwrap();
        let model = mdm_train(&covs, &[3, 7], &q, MetricKind::Airm).unwrap();
        for (c, l) in covs.iter().zip([3, 7]) {
            let proj = project_to_s_space(&q, c).unwrap();
            assert!((model.class_means[&l].matrix() - proj.matrix()).amax() < 1e-12);
            assert_eq!(mdm_classify(&model, c).unwrap(), l);
        }
        let dup = mdm_train(&[covs.clone(), covs.clone()].concat(), &[3, 7, 3, 7], &q, MetricKind::Airm).unwrap();
        for l in [3, 7] {
            assert!((dup.class_means[&l].matrix() - model.class_means[&l].matrix()).amax() < 1e-10);
        }
    }

    #[test]
    fn mdm_tie_goes_to_lower_label_and_empty_class_is_rejected() {
        let q = Subspace::coordinate(2, 1).unwrap();
        let a = SymPosDef::from_diagonal(&[2.0, 1.0]).unwrap();
        let b = SymPosDef::from_diagonal(&[0.5, 1.0]).unwrap();
        let model = mdm_train(&[a.clone(), b.clone()], &[5, -1], &q, MetricKind::Airm).unwrap();
        let mid = SymPosDef::identity(2);
        assert_eq!(mdm_classify(&model, &mid).unwrap(), -1);
        assert!(matches!(
            mdm_train_classes(&[a, b], &[5, -1], &[-1, 5, 9], &q, MetricKind::Stein),
            Err(Error::EmptyClass(9))
        ));
    }

    #[test]
    fn empty_method_list_and_single_repeat() {
        let params = ExperimentParams {
            d: 4,
            m: 2,
            epochs: 6,
            epoch_len: 60,
            repeats: 1,
            methods: vec![],
            restarts: 1,
            ..Default::default()
        };
        let report = run_toy_experiment(&params).unwrap();
        assert!(report.summary.is_empty());
        let params = ExperimentParams { methods: vec![Method::GassaSteinUnwhitened, Method::Ssa], ..params };
        let report = run_toy_experiment(&params).unwrap();
        for s in &report.summary {
            assert!(s.mean.is_some());
            assert_eq!(s.std, None);
            assert!(s.valid);
        }
    }

    #[test]
    fn experiment_is_reproducible_and_writes_files() {
        let params = ExperimentParams {
            d: 5,
            m: 2,
            epochs: 8,
            epoch_len: 80,
            repeats: 3,
            restarts: 2,
            seed: 11,
            ..Default::default()
        };
        let a = run_toy_experiment(&params).unwrap();
        let b = run_toy_experiment(&params).unwrap();
        for (x, y) in a.repeats.iter().zip(&b.repeats) {
            for (rx, ry) in x.runs.iter().zip(&y.runs) {
                assert_eq!(rx.error.map(f64::to_bits), ry.error.map(f64::to_bits));
                let tx: Vec<_> = rx.per_restart.iter().map(|r| &r.cost_trace).collect();
                let ty: Vec<_> = ry.per_restart.iter().map(|r| &r.cost_trace).collect();
                assert_eq!(tx, ty);
            }
        }
        assert_eq!(a.summary, b.summary);
        assert_eq!(a.summary.len(), 5);
        let dir = tempfile::tempdir().unwrap();
        a.write(dir.path()).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert!(csv.starts_with("method,mean,std,repeats\n"));
        assert_eq!(csv.lines().count(), 6);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
    }
}
