//! Geometry-aware SSA: find the `m`-dimensional projection under which the
//! compressed epoch covariances `QᵀΣ_iQ` stay closest to the compressed mean.
//!
//! Both dissimilarities are functions of the generalized eigenvalues of the
//! pencil `(A, B)`, so the cost is invariant under `Q -> QR` for any
//! invertible `R` and the Euclidean gradient is already horizontal.

use nalgebra::{Cholesky, DMatrix};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grassmann::{random_subspace, Subspace};
use crate::optim::{minimize, Diagnostic, OptStats, OptimizerOptions};
use crate::spd::{log_det, sym_eig, symmetrize, whiten_set, MetricKind, SymPosDef, WhiteningContext};

/// How `fit` computes the Euclidean gradient.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    #[default]
    Analytic,
    FiniteDifference,
}

/// Step used by the finite-difference gradient.
pub const FD_STEP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GassaConfig {
    pub metric: MetricKind,
    pub whiten: bool,
    /// Dimension of the stationary subspace.
    pub m: usize,
    pub restarts: usize,
    pub seed: u64,
    pub optimizer: OptimizerOptions,
    pub gradient_mode: GradientMode,
}

impl Default for GassaConfig {
    fn default() -> Self {
        GassaConfig {
            metric: MetricKind::Airm,
            whiten: false,
            m: 1,
            restarts: 5,
            seed: 0,
            optimizer: OptimizerOptions::default(),
            gradient_mode: GradientMode::Analytic,
        }
    }
}

impl GassaConfig {
    pub fn validate(&self, d: usize) -> Result<()> {
        if self.m == 0 || self.m >= d {
            return Err(Error::Config(format!("need 1 <= m < D, got m={} with D={d}", self.m)));
        }
        if self.restarts == 0 {
            return Err(Error::Config("restarts must be at least 1".into()));
        }
        self.optimizer.validate()
    }

    /// Seed of restart `index`.
    pub fn restart_seed(&self, index: usize) -> u64 {
        self.seed.wrapping_add(index as u64)
    }
}

/// Outcome of one restart.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RestartRecord {
    pub index: usize,
    pub seed: u64,
    pub cost: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub diagnostic: Option<Diagnostic>,
    pub cost_trace: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RestartRecord {
    fn from_stats(index: usize, seed: u64, cost: f64, stats: OptStats) -> Self {
        RestartRecord {
            index,
            seed,
            cost,
            grad_norm: stats.final_grad_norm,
            iterations: stats.iterations,
            converged: stats.converged,
            diagnostic: stats.diagnostic,
            cost_trace: stats.cost_trace,
            error: None,
        }
    }

    fn failed(index: usize, seed: u64, err: &Error) -> Self {
        RestartRecord {
            index,
            seed,
            cost: f64::INFINITY,
            grad_norm: f64::NAN,
            iterations: 0,
            converged: false,
            diagnostic: None,
            cost_trace: Vec::new(),
            error: Some(err.to_string()),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GassaResult {
    pub config: GassaConfig,
    /// Stationary projection subspace in sensor coordinates: the s-sources
    /// are (up to an invertible map) `s_basisᵀ x`.
    pub s_basis: Subspace,
    /// Estimated non-stationary subspace, the orthogonal complement of `s_basis`.
    pub n_basis: Subspace,
    /// The optimizer's solution in whitened coordinates (whitened fits only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub whitened_basis: Option<Subspace>,
    pub cost: f64,
    pub best_restart: usize,
    pub per_restart: Vec<RestartRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub whitening: Option<WhiteningContext>,
    /// Set when every covariance coincides with the mean ("fully stationary").
    pub degenerate: bool,
}

/// The gaSSA objective over arbitrary full-rank `D×m` matrices:
/// `Σ_i δ²(QᵀΣ_iQ, QᵀMQ)`.
#[derive(Clone, Debug)]
pub struct GassaObjective {
    covs: Vec<DMatrix<f64>>,
    mean: DMatrix<f64>,
    metric: MetricKind,
}

fn compress(q: &DMatrix<f64>, s: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let sq = s * q;
    let mut c = q.transpose() * &sq;
    symmetrize(&mut c);
    (c, sq)
}

fn not_spd() -> Error {
    Error::NotSpd { eigenvalue: f64::NAN, floor: 0.0 }
}

/// Pair term and its gradients `(f, ∂f/∂A, ∂f/∂B)`.
type PairTerm = (f64, Option<(DMatrix<f64>, DMatrix<f64>)>);

/// AIRM between compressed matrices through the Cholesky factor of `B`:
/// with `L⁻¹AL⁻ᵀ = U diag(λ) Uᵀ` and `X = L⁻ᵀU`,
/// `f = Σ ln²λ`, `∂f/∂A = X diag(2 lnλ/λ) Xᵀ`, `∂f/∂B = −X diag(2 lnλ) Xᵀ`.
fn airm_term(a: &DMatrix<f64>, b_chol: &Cholesky<f64, nalgebra::Dyn>, want_grad: bool) -> Result<PairTerm> {
    let l = b_chol.l();
    let linv_a = l.solve_lower_triangular(a).ok_or_else(not_spd)?;
    let inner_t = l.solve_lower_triangular(&linv_a.transpose()).ok_or_else(not_spd)?;
    let eig = sym_eig(&inner_t);
    if !(eig.min() > 0.0) {
        return Err(Error::NotSpd { eigenvalue: eig.min(), floor: 0.0 });
    }
    let logs: Vec<f64> = eig.eigenvalues.iter().map(|l| l.ln()).collect();
    let value = logs.iter().map(|x| x * x).sum();
    if !want_grad {
        return Ok((value, None));
    }
    let x = l.transpose().solve_upper_triangular(&eig.eigenvectors).ok_or_else(not_spd)?;
    let weighted = |w: &dyn Fn(usize) -> f64| {
        let mut xs = x.clone();
        for j in 0..xs.ncols() {
            xs.column_mut(j).scale_mut(w(j));
        }
        let mut out = xs * x.transpose();
        symmetrize(&mut out);
        out
    };
    let ga = weighted(&|j| 2.0 * logs[j] / eig.eigenvalues[j]);
    let gb = weighted(&|j| -2.0 * logs[j]);
    Ok((value, Some((ga, gb))))
}

fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut inv = Cholesky::new(m.clone()).ok_or_else(not_spd)?.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

/// Stein divergence with `∂f/∂A = ½H⁻¹ − ½A⁻¹`, `H = (A+B)/2`.
fn stein_term(a: &DMatrix<f64>, b: &DMatrix<f64>, b_inv: &DMatrix<f64>, logdet_b: f64, want_grad: bool) -> Result<PairTerm> {
    let h = (a + b) * 0.5;
    let value = log_det(&h)? - 0.5 * log_det(a)? - 0.5 * logdet_b;
    if !want_grad {
        return Ok((value, None));
    }
    let h_inv = spd_inverse(&h)?;
    let a_inv = spd_inverse(a)?;
    let ga = (&h_inv - a_inv) * 0.5;
    let gb = (h_inv - b_inv) * 0.5;
    Ok((value, Some((ga, gb))))
}

impl GassaObjective {
    pub fn new(covs: &[SymPosDef], mean: &SymPosDef, metric: MetricKind) -> Result<Self> {
        let d = mean.dim();
        if covs.is_empty() {
            return Err(Error::InsufficientData("no covariance matrices".into()));
        }
        for c in covs {
            if c.dim() != d {
                return Err(Error::DimMismatch { expected: d, found: c.dim() });
            }
        }
        Ok(GassaObjective { covs: covs.iter().map(|c| c.matrix().clone()).collect(), mean: mean.matrix().clone(), metric })
    }

    pub fn dim(&self) -> usize {
        self.mean.nrows()
    }

    fn check_q(&self, q: &DMatrix<f64>) -> Result<()> {
        if q.nrows() != self.dim() || q.ncols() == 0 || q.ncols() >= self.dim() {
            return Err(Error::BadDims(format!("Q is {}x{} for D={}", q.nrows(), q.ncols(), self.dim())));
        }
        Ok(())
    }

    fn evaluate(&self, q: &DMatrix<f64>, want_grad: bool) -> Result<(f64, Option<DMatrix<f64>>)> {
        self.check_q(q)?;
        let (b, mq) = compress(q, &self.mean);
        let b_chol = Cholesky::new(b.clone()).ok_or_else(not_spd)?;
        let (b_inv, logdet_b) = match self.metric {
            MetricKind::Stein => (spd_inverse(&b)?, log_det(&b)?),
            MetricKind::Airm => (DMatrix::zeros(0, 0), 0.0),
        };
        let mut total = 0.0;
        let mut grad = want_grad.then(|| DMatrix::zeros(q.nrows(), q.ncols()));
        let mut gb_sum = DMatrix::zeros(q.ncols(), q.ncols());
        for s in &self.covs {
            let (a, sq) = compress(q, s);
            let (value, g) = match self.metric {
                MetricKind::Airm => airm_term(&a, &b_chol, want_grad)?,
                MetricKind::Stein => stein_term(&a, &b, &b_inv, logdet_b, want_grad)?,
            };
            total += value;
            if let (Some(grad), Some((ga, gb))) = (grad.as_mut(), g) {
                // d tr(G·QᵀSQ) = 2 S Q G for symmetric G.
                *grad += sq * ga * 2.0;
                gb_sum += gb;
            }
        }
        if let Some(grad) = grad.as_mut() {
            *grad += mq * gb_sum * 2.0;
        }
        if !total.is_finite() {
            return Err(not_spd());
        }
        Ok((total, grad))
    }

    /// Cost at an arbitrary full-rank `D×m` matrix.
    pub fn cost_at(&self, q: &DMatrix<f64>) -> Result<f64> {
        Ok(self.evaluate(q, false)?.0)
    }

    /// Analytic Euclidean gradient at an arbitrary full-rank `D×m` matrix.
    pub fn egrad_at(&self, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.evaluate(q, true)?.1.expect("gradient requested"))
    }

    /// Entrywise central finite differences of the cost with step `h`.
    pub fn egrad_fd_at(&self, q: &DMatrix<f64>, h: f64) -> Result<DMatrix<f64>> {
        self.check_q(q)?;
        let mut grad = DMatrix::zeros(q.nrows(), q.ncols());
        let mut work = q.clone();
        for j in 0..q.ncols() {
            for i in 0..q.nrows() {
                let orig = work[(i, j)];
                work[(i, j)] = orig + h;
                let fp = self.cost_at(&work)?;
                work[(i, j)] = orig - h;
                let fm = self.cost_at(&work)?;
                work[(i, j)] = orig;
                grad[(i, j)] = (fp - fm) / (2.0 * h);
            }
        }
        Ok(grad)
    }

    pub fn egrad_with_mode(&self, q: &DMatrix<f64>, mode: GradientMode) -> Result<DMatrix<f64>> {
        match mode {
            GradientMode::Analytic => self.egrad_at(q),
            GradientMode::FiniteDifference => self.egrad_fd_at(q, FD_STEP),
        }
    }
}

/// `Σ_i δ²(QᵀΣ_iQ, QᵀΣ̄Q)`; pass the identity as `mean` for whitened input.
pub fn gassa_cost(q: &Subspace, covs: &[SymPosDef], mean: &SymPosDef, metric: MetricKind) -> Result<f64> {
    GassaObjective::new(covs, mean, metric)?.cost_at(q.basis())
}

/// Euclidean gradient of [`gassa_cost`] with respect to the basis matrix.
pub fn gassa_egrad(
    q: &Subspace,
    covs: &[SymPosDef],
    mean: &SymPosDef,
    metric: MetricKind,
    mode: GradientMode,
) -> Result<DMatrix<f64>> {
    GassaObjective::new(covs, mean, metric)?.egrad_with_mode(q.basis(), mode)
}

/// `QᵀΣQ`, validated as SPD.
pub fn project_to_s_space(q: &Subspace, sigma: &SymPosDef) -> Result<SymPosDef> {
    if q.ambient_dim() != sigma.dim() {
        return Err(Error::DimMismatch { expected: sigma.dim(), found: q.ambient_dim() });
    }
    SymPosDef::new(compress(q.basis(), sigma.matrix()).0)
}

/// Best-of-`restarts` minimization of an objective from seeded random starts.
/// Restarts run concurrently; the winner is the lowest cost, ties going to
/// the lower index.
pub(crate) fn multi_restart<C, G>(
    d: usize,
    m: usize,
    restarts: usize,
    seed_of: impl Fn(usize) -> u64 + Sync,
    opts: &OptimizerOptions,
    cost: C,
    egrad: G,
) -> Result<(Subspace, f64, usize, Vec<RestartRecord>)>
where
    C: Fn(&Subspace) -> Result<f64> + Sync,
    G: Fn(&Subspace) -> Result<DMatrix<f64>> + Sync,
{
    let runs: Vec<(RestartRecord, Option<Subspace>)> = (0..restarts)
        .into_par_iter()
        .map(|index| {
            let seed = seed_of(index);
            let outcome = random_subspace(d, m, seed).and_then(|q0| minimize(&cost, &egrad, &q0, opts));
            match outcome {
                Ok((q, f, stats)) => (RestartRecord::from_stats(index, seed, f, stats), Some(q)),
                Err(e) => (RestartRecord::failed(index, seed, &e), None),
            }
        })
        .collect();

    let mut best: Option<(usize, f64)> = None;
    for (i, (rec, q)) in runs.iter().enumerate() {
        if q.is_some() && best.is_none_or(|(_, c)| rec.cost < c) {
            best = Some((i, rec.cost));
        }
    }
    let Some((index, cost)) = best else {
        let last = runs.last().and_then(|(r, _)| r.error.clone()).unwrap_or_default();
        return Err(Error::AllRestartsFailed { restarts, last });
    };
    let (records, subspaces): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    let q = subspaces.into_iter().nth(index).flatten().expect("winning restart has a subspace");
    Ok((q, cost, index, records))
}

fn check_covs(covs: &[SymPosDef]) -> Result<usize> {
    if covs.len() < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 covariance matrices, got {}", covs.len())));
    }
    let d = covs[0].dim();
    if let Some(bad) = covs.iter().find(|c| c.dim() != d) {
        return Err(Error::DimMismatch { expected: d, found: bad.dim() });
    }
    Ok(d)
}

/// Fit gaSSA to a set of epoch covariance matrices.
pub fn fit(covs: &[SymPosDef], config: &GassaConfig) -> Result<GassaResult> {
    let d = check_covs(covs)?;
    config.validate(d)?;
    let m = config.m;

    let (work_covs, work_mean, whitening) = if config.whiten {
        let (white, ctx) = whiten_set(covs, config.metric)?;
        (white, SymPosDef::identity(d), Some(ctx))
    } else {
        let mean = config.metric.mean(covs)?;
        (covs.to_vec(), mean, None)
    };
    let spread: f64 = work_covs.iter().map(|c| config.metric.dist2(c, &work_mean)).sum::<Result<f64>>()?;
    let degenerate = spread <= 1e-20 * covs.len() as f64;

    let objective = GassaObjective::new(&work_covs, &work_mean, config.metric)?;
    let mode = config.gradient_mode;
    let (q_hat, cost, best_restart, per_restart) = multi_restart(
        d,
        m,
        config.restarts,
        |i| config.restart_seed(i),
        &config.optimizer,
        |q: &Subspace| objective.cost_at(q.basis()),
        |q: &Subspace| objective.egrad_with_mode(q.basis(), mode),
    )?;

    // The s-sources are Q̂ᵀZx, so the projection subspace in sensor
    // coordinates is span(ZQ̂) and the n-space is its complement.
    let (s_basis, whitened_basis) = match &whitening {
        Some(ctx) => (Subspace::from_span(&(&ctx.whitener * q_hat.basis()))?, Some(q_hat)),
        None => (q_hat, None),
    };
    let n_basis = s_basis.complement();
    Ok(GassaResult {
        config: config.clone(),
        s_basis,
        n_basis,
        whitened_basis,
        cost,
        best_restart,
        per_restart,
        whitening,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grassmann::{grassmann_dist, project_tangent};
    use crate::testutil::{gaussian, random_orthogonal, random_spd};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    #[test]
    fn identical_covariances_give_zero_cost_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_spd(&mut rng, 5);
        let covs = vec![s.clone(); 4];
        for metric in MetricKind::ALL {
            for seed in 0..3 {
                let q = random_subspace(5, 2, seed).unwrap();
                assert!(gassa_cost(&q, &covs, &s, metric).unwrap().abs() < 1e-20);
                let g = gassa_egrad(&q, &covs, &s, metric, GradientMode::Analytic).unwrap();
                assert!(g.amax() < 1e-12);
            }
        }
    }

    #[test]
    fn block_constant_compression_has_zero_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let top = random_spd(&mut rng, 2);
        let covs: Vec<SymPosDef> = (0..6)
            .map(|_| {
                let bottom = random_spd(&mut rng, 3);
                let mut m = DMatrix::zeros(5, 5);
                m.view_mut((0, 0), (2, 2)).copy_from(top.matrix());
                m.view_mut((2, 2), (3, 3)).copy_from(bottom.matrix());
                SymPosDef::new(m).unwrap()
            })
            .collect();
        let q = Subspace::coordinate(5, 2).unwrap();
        for metric in MetricKind::ALL {
            let mean = metric.mean(&covs).unwrap();
            let c = gassa_cost(&q, &covs, &mean, metric).unwrap();
            // Log-determinant differences cancel only to roundoff.
            assert!(c < 1e-13, "{metric}: {c:e}");
            let g = gassa_egrad(&q, &covs, &mean, metric, GradientMode::Analytic).unwrap();
            assert!(project_tangent(&q, &g).unwrap().norm() <= 1e-8);
        }
    }

    #[test]
    fn cost_depends_only_on_span() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let covs: Vec<_> = (0..5).map(|_| random_spd(&mut rng, 6)).collect();
        for metric in MetricKind::ALL {
            let mean = metric.mean(&covs).unwrap();
            let q = random_subspace(6, 3, 4).unwrap();
            let r = random_orthogonal(&mut rng, 3);
            let a = gassa_cost(&q, &covs, &mean, metric).unwrap();
            let b = gassa_cost(&q.rotated(&r).unwrap(), &covs, &mean, metric).unwrap();
            assert!((a - b).abs() <= 1e-10 * a.abs());
            // Also invariant under non-orthogonal right factors.
            let obj = GassaObjective::new(&covs, &mean, metric).unwrap();
            let skew = q.basis() * (gaussian(&mut rng, 3, 3) + DMatrix::identity(3, 3) * 3.0);
            assert!((obj.cost_at(&skew).unwrap() - a).abs() <= 1e-9 * a.abs());
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (d, m) in [(4, 1), (5, 2), (7, 5)] {
            let covs: Vec<_> = (0..6).map(|_| random_spd(&mut rng, d)).collect();
            for metric in MetricKind::ALL {
                let mean = metric.mean(&covs).unwrap();
                let obj = GassaObjective::new(&covs, &mean, metric).unwrap();
                let q = gaussian(&mut rng, d, m);
                let g = obj.egrad_at(&q).unwrap();
                let fd = obj.egrad_fd_at(&q, FD_STEP).unwrap();
                assert!(rel_err(&g, &fd) <= 1e-5, "{metric} D={d} m={m}: {:e}", rel_err(&g, &fd));
            }
        }
    }

    #[test]
    fn project_to_s_space_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let q = random_subspace(6, 2, 7).unwrap();
        let ident = project_to_s_space(&q, &SymPosDef::identity(6)).unwrap();
        assert!((ident.matrix() - DMatrix::<f64>::identity(2, 2)).amax() < 1e-12);

        let s = random_spd(&mut rng, 6);
        let top = project_to_s_space(&Subspace::coordinate(6, 2).unwrap(), &s).unwrap();
        assert_eq!(top.matrix(), &s.matrix().view((0, 0), (2, 2)).into_owned());

        for seed in 0..20 {
            let q = random_subspace(6, 3, seed).unwrap();
            let c = project_to_s_space(&q, &s).unwrap().eig();
            let full = s.eig();
            assert!(full.min() <= c.min() + 1e-12);
            assert!(c.max() <= full.max() + 1e-12);
        }
        assert!(project_to_s_space(&q, &SymPosDef::identity(5)).is_err());
    }

    #[test]
    fn fit_validates_input() {
        let s = SymPosDef::identity(4);
        let cfg = GassaConfig { m: 2, ..Default::default() };
        assert!(matches!(fit(&[s.clone()], &cfg), Err(Error::InsufficientData(_))));
        let bad = GassaConfig { m: 4, ..Default::default() };
        assert!(matches!(fit(&[s.clone(), s.clone()], &bad), Err(Error::Config(_))));
        let none = GassaConfig { m: 2, restarts: 0, ..Default::default() };
        assert!(matches!(fit(&[s.clone(), s.clone()], &none), Err(Error::Config(_))));
        assert!(matches!(fit(&[s.clone(), SymPosDef::identity(3)], &cfg), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn fit_flags_fully_stationary_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = random_spd(&mut rng, 5);
        let cfg = GassaConfig { m: 2, restarts: 2, ..Default::default() };
        let res = fit(&vec![s; 5], &cfg).unwrap();
        assert!(res.degenerate);
        assert!(res.cost.abs() < 1e-18);
        assert!((res.s_basis.basis().transpose() * res.n_basis.basis()).amax() <= 1e-10);
    }

    #[test]
    fn fit_recovers_planted_block_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (d, m) = (5, 2);
        let top = random_spd(&mut rng, m);
        let rot = random_orthogonal(&mut rng, d);
        let covs: Vec<SymPosDef> = (0..12)
            .map(|_| {
                let bottom = random_spd(&mut rng, d - m);
                let mut b = DMatrix::zeros(d, d);
                b.view_mut((0, 0), (m, m)).copy_from(top.matrix());
                b.view_mut((m, m), (d - m, d - m)).copy_from(&(bottom.matrix() * 3.0));
                SymPosDef::new(&rot * b * rot.transpose()).unwrap()
            })
            .collect();
        let truth_n = Subspace::from_span(&rot.columns(m, d - m).into_owned()).unwrap();
        for metric in MetricKind::ALL {
            for whiten in [false, true] {
                let optimizer = OptimizerOptions { grad_tol: 1e-12, max_iter: 500, ..Default::default() };
                let cfg = GassaConfig { metric, whiten, m, restarts: 3, seed: 1, optimizer, ..Default::default() };
                let res = fit(&covs, &cfg).unwrap();
                let err = grassmann_dist(&res.n_basis, &truth_n).unwrap();
                // Without s/n coupling the cost is quartic in the angle.
                assert!(err <= 1e-3, "{metric} whiten={whiten}: {err:e}");
                assert!(res.cost <= 1e-12, "{metric} whiten={whiten}: cost {}", res.cost);
                assert_eq!(res.whitened_basis.is_some(), whiten);
                assert_eq!(res.per_restart.len(), 3);
                let min = res.per_restart.iter().map(|r| r.cost).fold(f64::INFINITY, f64::min);
                assert_eq!(res.cost, min);
            }
        }
    }

    #[test]
    fn fit_recovers_generated_orthogonal_mixture() {
        use crate::datagen::{gen_model, GeneratorParams, MixingKind};
        let params = GeneratorParams { d: 6, m: 3, epochs: 50, seed: 5, mixing: MixingKind::Orthogonal, ..Default::default() };
        let model = gen_model(&params).unwrap();
        let covs = model.closed_form_covs();
        let truth_n = model.true_nspace().unwrap();
        for metric in MetricKind::ALL {
            for whiten in [false, true] {
                // Random starts land in local minima often enough to need more restarts.
                let cfg = GassaConfig { metric, whiten, m: 3, restarts: 20, seed: 50, ..Default::default() };
                let res = fit(&covs, &cfg).unwrap();
                let err = grassmann_dist(&res.n_basis, &truth_n).unwrap();
                assert!(err <= 0.05, "{metric} whiten={whiten}: {err:e}");
            }
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let covs: Vec<_> = (0..8).map(|_| random_spd(&mut rng, 5)).collect();
        let cfg = GassaConfig { m: 2, restarts: 3, seed: 99, metric: MetricKind::Stein, ..Default::default() };
        let a = fit(&covs, &cfg).unwrap();
        let b = fit(&covs, &cfg).unwrap();
        assert_eq!(a.s_basis, b.s_basis);
        assert_eq!(a.cost.to_bits(), b.cost.to_bits());
        for (x, y) in a.per_restart.iter().zip(&b.per_restart) {
            assert_eq!(x.cost_trace, y.cost_trace);
        }
    }

    #[test]
    fn finite_difference_mode_matches_analytic_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let covs: Vec<_> = (0..6).map(|_| random_spd(&mut rng, 4)).collect();
        let base = GassaConfig { m: 2, restarts: 2, seed: 3, ..Default::default() };
        let fd = GassaConfig { gradient_mode: GradientMode::FiniteDifference, ..base.clone() };
        let a = fit(&covs, &base).unwrap();
        let b = fit(&covs, &fd).unwrap();
        assert!((a.cost - b.cost).abs() <= 1e-6 * a.cost.max(1.0));
    }
}
