//! Symmetric positive definite matrices and their geometry.
//!
//! Two dissimilarities are provided: the squared affine-invariant Riemannian
//! distance (AIRM) and the Jensen-Bregman log-determinant (Stein) divergence.
//! Both are invariant under congruence `X -> PᵀXP`, which is what makes the
//! whitening and mixing arguments in [`crate::gassa`] work.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative eigenvalue floor: a matrix is accepted as SPD only when
/// `λ_min > SPD_FLOOR_REL · λ_max`.
pub const SPD_FLOOR_REL: f64 = 1e-12;

/// Relative asymmetry tolerance at construction.
pub const SYMMETRY_TOL_REL: f64 = 1e-10;

/// Largest condition number accepted by [`congruence`].
pub const COND_CAP: f64 = 1e12;

/// Default tolerance for the iterative means.
pub const MEAN_TOL: f64 = 1e-10;

/// Default iteration cap for the iterative means.
pub const MEAN_MAX_ITER: usize = 100;

/// Which dissimilarity on the SPD cone to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    /// Affine-invariant Riemannian metric, squared geodesic distance.
    Airm,
    /// Jensen-Bregman log-determinant divergence.
    Stein,
}

impl MetricKind {
    pub const ALL: [MetricKind; 2] = [MetricKind::Airm, MetricKind::Stein];

    /// The squared distance (AIRM) or divergence value (Stein) between `x` and `y`.
    pub fn dist2(self, x: &SymPosDef, y: &SymPosDef) -> Result<f64> {
        match self {
            MetricKind::Airm => airm_dist2(x, y),
            MetricKind::Stein => stein_div(x, y),
        }
    }

    /// The metric-matched mean with default tolerances.
    pub fn mean(self, set: &[SymPosDef]) -> Result<SymPosDef> {
        Ok(self.mean_with_stats(set, MEAN_TOL, MEAN_MAX_ITER)?.mean)
    }

    pub fn mean_with_stats(self, set: &[SymPosDef], tol: f64, max_iter: usize) -> Result<MeanEstimate> {
        match self {
            MetricKind::Airm => karcher_mean_with_stats(set, tol, max_iter),
            MetricKind::Stein => stein_mean_with_stats(set, tol, max_iter),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Airm => "airm",
            MetricKind::Stein => "stein",
        }
    }
}

impl std::str::FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "airm" => Ok(MetricKind::Airm),
            "stein" | "jbld" => Ok(MetricKind::Stein),
            other => Err(Error::Config(format!("unknown metric '{other}'"))),
        }
    }
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A validated symmetric positive definite matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixJson", into = "MatrixJson")]
pub struct SymPosDef {
    mat: DMatrix<f64>,
}

/// Eigendecomposition of an SPD matrix, eigenvalues in descending order.
#[derive(Clone, Debug)]
pub struct SpdEig {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl SpdEig {
    /// `V diag(f(λ)) Vᵀ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let v = &self.eigenvectors;
        let mut scaled = v.clone();
        for (j, &lambda) in self.eigenvalues.iter().enumerate() {
            let fl = f(lambda);
            scaled.column_mut(j).scale_mut(fl);
        }
        let mut out = scaled * v.transpose();
        symmetrize(&mut out);
        out
    }

    pub fn min(&self) -> f64 {
        self.eigenvalues[self.eigenvalues.len() - 1]
    }

    pub fn max(&self) -> f64 {
        self.eigenvalues[0]
    }
}

/// Eigendecomposition of a symmetric matrix, sorted descending.
pub fn sym_eig(mat: &DMatrix<f64>) -> SpdEig {
    let mut m = mat.clone();
    symmetrize(&mut m);
    let eig = SymmetricEigen::new(m);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    SpdEig { eigenvalues, eigenvectors }
}

/// `S ← (S + Sᵀ)/2` in place.
pub fn symmetrize(mat: &mut DMatrix<f64>) {
    let n = mat.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (mat[(i, j)] + mat[(j, i)]);
            mat[(i, j)] = avg;
            mat[(j, i)] = avg;
        }
    }
}

/// Apply a scalar function to a symmetric matrix through its eigendecomposition.
pub fn sym_fn(mat: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    sym_eig(mat).map(f)
}

fn check_spd_eig(eig: &SpdEig) -> Result<()> {
    let max = eig.max();
    let min = eig.min();
    let floor = SPD_FLOOR_REL * max.max(0.0);
    if !(max > 0.0) || !(min > floor) || !min.is_finite() || !max.is_finite() {
        return Err(Error::NotSpd { eigenvalue: min, floor });
    }
    Ok(())
}

impl SymPosDef {
    /// Validate symmetry and positive definiteness, then store the
    /// symmetrized matrix.
    pub fn new(mut mat: DMatrix<f64>) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::BadDims(format!("matrix is {}x{}, not square", mat.nrows(), mat.ncols())));
        }
        if mat.nrows() == 0 {
            return Err(Error::BadDims("empty matrix".into()));
        }
        if mat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotSpd { eigenvalue: f64::NAN, floor: 0.0 });
        }
        let asym = max_asymmetry(&mat);
        let tolerance = SYMMETRY_TOL_REL * mat.norm();
        if asym > tolerance {
            return Err(Error::NotSymmetric { asymmetry: asym, tolerance });
        }
        symmetrize(&mut mat);
        check_spd_eig(&sym_eig(&mat))?;
        Ok(SymPosDef { mat })
    }

    /// Skip validation; only for matrices SPD by construction.
    pub(crate) fn new_unchecked(mut mat: DMatrix<f64>) -> Self {
        symmetrize(&mut mat);
        SymPosDef { mat }
    }

    pub fn identity(dim: usize) -> Self {
        SymPosDef { mat: DMatrix::identity(dim, dim) }
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn from_row_major(dim: usize, data: &[f64]) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::DimMismatch { expected: dim * dim, found: data.len() });
        }
        Self::new(DMatrix::from_row_slice(dim, dim, data))
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        let n = self.dim();
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                out.push(self.mat[(i, j)]);
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.mat
    }

    pub fn eig(&self) -> SpdEig {
        sym_eig(&self.mat)
    }

    /// `log det S` from the Cholesky factor diagonal.
    pub fn log_det(&self) -> Result<f64> {
        log_det(&self.mat)
    }

    /// `S + eps·I`, for callers that explicitly want regularization.
    pub fn with_ridge(&self, eps: f64) -> Result<Self> {
        let n = self.dim();
        Self::new(&self.mat + DMatrix::identity(n, n) * eps)
    }

    pub fn inverse(&self) -> SymPosDef {
        let inv = Cholesky::new(self.mat.clone())
            .map(|c| c.inverse())
            .unwrap_or_else(|| self.eig().map(|l| 1.0 / l));
        SymPosDef::new_unchecked(inv)
    }
}

fn max_asymmetry(mat: &DMatrix<f64>) -> f64 {
    let n = mat.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((mat[(i, j)] - mat[(j, i)]).abs());
        }
    }
    worst
}

/// `log det` of an SPD matrix via Cholesky; never forms the determinant.
pub fn log_det(mat: &DMatrix<f64>) -> Result<f64> {
    let chol = Cholesky::new(mat.clone()).ok_or(Error::NotSpd { eigenvalue: f64::NAN, floor: 0.0 })?;
    let l = chol.l_dirty();
    Ok(2.0 * (0..mat.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>())
}

fn check_dims(x: &SymPosDef, y: &SymPosDef) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::DimMismatch { expected: x.dim(), found: y.dim() });
    }
    Ok(())
}

/// Principal matrix logarithm `V diag(ln λ) Vᵀ`.
pub fn spd_log(s: &SymPosDef) -> Result<DMatrix<f64>> {
    let eig = s.eig();
    check_spd_eig(&eig)?;
    Ok(eig.map(f64::ln))
}

/// Matrix exponential of a symmetric matrix; always SPD.
pub fn spd_exp(sym: &DMatrix<f64>) -> SymPosDef {
    SymPosDef::new_unchecked(sym_fn(sym, f64::exp))
}

/// `(S^{1/2}, S^{-1/2})`.
pub fn spd_sqrt_inv_sqrt(s: &SymPosDef) -> Result<(SymPosDef, SymPosDef)> {
    let eig = s.eig();
    check_spd_eig(&eig)?;
    Ok((
        SymPosDef::new_unchecked(eig.map(f64::sqrt)),
        SymPosDef::new_unchecked(eig.map(|l| 1.0 / l.sqrt())),
    ))
}

/// Squared affine-invariant distance `‖log(X^{-1/2} Y X^{-1/2})‖²_F`.
pub fn airm_dist2(x: &SymPosDef, y: &SymPosDef) -> Result<f64> {
    check_dims(x, y)?;
    let (_, x_isqrt) = spd_sqrt_inv_sqrt(x)?;
    let inner = x_isqrt.matrix() * y.matrix() * x_isqrt.matrix();
    let eig = sym_eig(&inner);
    check_spd_eig(&eig)?;
    Ok(eig.eigenvalues.iter().map(|l| l.ln().powi(2)).sum())
}

/// Jensen-Bregman log-determinant divergence
/// `log det((X+Y)/2) − ½ log det X − ½ log det Y`.
pub fn stein_div(x: &SymPosDef, y: &SymPosDef) -> Result<f64> {
    check_dims(x, y)?;
    let mid = (x.matrix() + y.matrix()) * 0.5;
    let value = log_det(&mid)? - 0.5 * x.log_det()? - 0.5 * y.log_det()?;
    // Rounding can push an exact zero slightly negative.
    Ok(value.max(0.0))
}

/// A converged mean and its diagnostics.
#[derive(Clone, Debug)]
pub struct MeanEstimate {
    pub mean: SymPosDef,
    pub iterations: usize,
    pub residual: f64,
}

fn check_set(set: &[SymPosDef]) -> Result<usize> {
    let first = set.first().ok_or_else(|| Error::InsufficientData("empty matrix set".into()))?;
    let d = first.dim();
    for s in set {
        if s.dim() != d {
            return Err(Error::DimMismatch { expected: d, found: s.dim() });
        }
    }
    Ok(d)
}

/// Arithmetic mean of a set.
pub fn arithmetic_mean(set: &[SymPosDef]) -> Result<SymPosDef> {
    let d = check_set(set)?;
    let mut acc = DMatrix::zeros(d, d);
    for s in set {
        acc += s.matrix();
    }
    Ok(SymPosDef::new_unchecked(acc / set.len() as f64))
}

/// Riemannian (Karcher) mean under the AIRM.
pub fn karcher_mean(set: &[SymPosDef], tol: f64, max_iter: usize) -> Result<SymPosDef> {
    Ok(karcher_mean_with_stats(set, tol, max_iter)?.mean)
}

/// Karcher mean by the unit-step fixed-point iteration
/// `M ← M^{1/2} exp(mean_i log(M^{-1/2} S_i M^{-1/2})) M^{1/2}`, started at
/// the arithmetic mean. The reported residual is
/// `‖(1/N) Σ_i log(M^{-1/2} S_i M^{-1/2})‖_F`.
pub fn karcher_mean_with_stats(set: &[SymPosDef], tol: f64, max_iter: usize) -> Result<MeanEstimate> {
    let d = check_set(set)?;
    let n = set.len() as f64;
    let mut mean = arithmetic_mean(set)?;
    let mut residual = f64::INFINITY;
    for iter in 0..=max_iter {
        let (sqrt, isqrt) = spd_sqrt_inv_sqrt(&mean)?;
        let mut tangent = DMatrix::zeros(d, d);
        for s in set {
            let inner = SymPosDef::new_unchecked(isqrt.matrix() * s.matrix() * isqrt.matrix());
            tangent += spd_log(&inner)?;
        }
        tangent /= n;
        residual = tangent.norm();
        if residual <= tol {
            return Ok(MeanEstimate { mean, iterations: iter, residual });
        }
        if iter == max_iter {
            break;
        }
        let step = spd_exp(&tangent);
        mean = SymPosDef::new_unchecked(sqrt.matrix() * step.matrix() * sqrt.matrix());
    }
    Err(Error::NoConvergence { iterations: max_iter, residual })
}

/// Mean under the Stein divergence.
pub fn stein_mean(set: &[SymPosDef], tol: f64, max_iter: usize) -> Result<SymPosDef> {
    Ok(stein_mean_with_stats(set, tol, max_iter)?.mean)
}

/// Largest dimension for which Newton refinement of the Stein mean is tried;
/// the Hessian is a D²×D² system.
const STEIN_NEWTON_MAX_DIM: usize = 24;

/// Stein mean by Picard iteration on `M = [mean_i ((M + S_i)/2)^{-1}]^{-1}`,
/// accelerated by Newton steps in whitened coordinates whenever the Hessian
/// is positive definite. A Newton step that does not lower the residual is
/// replaced by the Picard step and Newton is switched off.
///
/// The residual is the affine-invariant norm of the cost gradient,
/// `‖M^{1/2} ∇ M^{1/2}‖_F` with `∇ = (1/2N) Σ_i ((M+S_i)/2)^{-1} − ½ M^{-1}`,
/// which is independent of the overall scale of the set.
pub fn stein_mean_with_stats(set: &[SymPosDef], tol: f64, max_iter: usize) -> Result<MeanEstimate> {
    let d = check_set(set)?;
    let n = set.len() as f64;
    let mut mean = arithmetic_mean(set)?;
    let mut residual = f64::INFINITY;
    let mut newton = d <= STEIN_NEWTON_MAX_DIM;
    // Picard candidate and residual at the point a Newton step was taken from.
    let mut pending: Option<(SymPosDef, f64)> = None;
    for iter in 0..=max_iter {
        let (sqrt, _) = spd_sqrt_inv_sqrt(&mean)?;
        let mut avg_inv = DMatrix::zeros(d, d);
        let mut whitened = Vec::with_capacity(if newton { set.len() } else { 0 });
        for s in set {
            let mid_inv = SymPosDef::new_unchecked((mean.matrix() + s.matrix()) * 0.5).inverse().into_inner();
            if newton {
                whitened.push(sqrt.matrix() * &mid_inv * sqrt.matrix());
            }
            avg_inv += mid_inv;
        }
        avg_inv /= n;
        let grad = (sqrt.matrix() * &avg_inv * sqrt.matrix() - DMatrix::identity(d, d)) * 0.5;
        let current = grad.norm();
        if let Some((picard, before)) = pending.take() {
            if !(current < before) {
                newton = false;
                mean = picard;
                continue;
            }
        }
        residual = current;
        if residual <= tol {
            return Ok(MeanEstimate { mean, iterations: iter, residual });
        }
        if iter == max_iter {
            break;
        }
        let picard = SymPosDef::new(avg_inv)?.inverse();
        match newton.then(|| stein_newton_direction(&whitened, &grad)).flatten() {
            Some(x) => {
                let step = spd_exp(&x);
                mean = SymPosDef::new_unchecked(sqrt.matrix() * step.matrix() * sqrt.matrix());
                pending = Some((picard, residual));
            }
            None => mean = picard,
        }
    }
    Err(Error::NoConvergence { iterations: max_iter, residual })
}

/// Solves `½X − ¼ mean_i B_i X B_i = −G` for symmetric `X`, where `B_i` are
/// the whitened midpoint inverses. `None` when the Hessian is not positive
/// definite or the step is long.
fn stein_newton_direction(whitened: &[DMatrix<f64>], grad: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let d = grad.nrows();
    let n = whitened.len() as f64;
    let mut hess = DMatrix::identity(d * d, d * d) * 0.5;
    for b in whitened {
        hess -= b.kronecker(b) * (0.25 / n);
    }
    let chol = hess.cholesky()?;
    let rhs = DVector::from_column_slice((-grad).as_slice());
    let x = chol.solve(&rhs);
    let x = DMatrix::from_column_slice(d, d, x.as_slice());
    let x = (&x + x.transpose()) * 0.5;
    // Steps longer than one unit in whitened coordinates are not trusted.
    let norm = x.norm();
    (norm.is_finite() && norm <= 1.0).then_some(x)
}

/// Condition number from singular values; infinite when singular.
pub fn condition_number(p: &DMatrix<f64>) -> f64 {
    let sv = p.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// `PᵀXP`, re-symmetrized.
pub fn congruence(p: &DMatrix<f64>, x: &SymPosDef) -> Result<SymPosDef> {
    if p.nrows() != x.dim() || p.ncols() != x.dim() {
        return Err(Error::DimMismatch { expected: x.dim(), found: p.nrows() });
    }
    let condition = condition_number(p);
    if !(condition <= COND_CAP) {
        return Err(Error::SingularTransform { condition });
    }
    Ok(SymPosDef::new_unchecked(p.transpose() * x.matrix() * p))
}

/// The mean of a set and its inverse square root `Z = M^{-1/2}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WhiteningContext {
    pub mean: SymPosDef,
    #[serde(with = "crate::io::dense")]
    pub whitener: DMatrix<f64>,
    pub metric: MetricKind,
}

impl WhiteningContext {
    pub fn from_mean(mean: SymPosDef, metric: MetricKind) -> Result<Self> {
        let (_, isqrt) = spd_sqrt_inv_sqrt(&mean)?;
        Ok(WhiteningContext { mean, whitener: isqrt.into_inner(), metric })
    }

    /// `Z S Zᵀ`.
    pub fn apply(&self, s: &SymPosDef) -> Result<SymPosDef> {
        if s.dim() != self.mean.dim() {
            return Err(Error::DimMismatch { expected: self.mean.dim(), found: s.dim() });
        }
        Ok(SymPosDef::new_unchecked(&self.whitener * s.matrix() * self.whitener.transpose()))
    }
}

/// Whiten a set by the inverse square root of its metric-matched mean.
pub fn whiten_set(set: &[SymPosDef], metric: MetricKind) -> Result<(Vec<SymPosDef>, WhiteningContext)> {
    let mean = metric.mean(set)?;
    let ctx = WhiteningContext::from_mean(mean, metric)?;
    let whitened = set.iter().map(|s| ctx.apply(s)).collect::<Result<Vec<_>>>()?;
    Ok((whitened, ctx))
}

/// On-disk matrix layout: `{"dim": D, "data": [row-major D·D numbers]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixJson {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl TryFrom<MatrixJson> for SymPosDef {
    type Error = Error;

    fn try_from(value: MatrixJson) -> Result<Self> {
        SymPosDef::from_row_major(value.dim, &value.data)
    }
}

impl From<SymPosDef> for MatrixJson {
    fn from(value: SymPosDef) -> Self {
        MatrixJson { dim: value.dim(), data: value.to_row_major() }
    }
}
