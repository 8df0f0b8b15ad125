//! Points and tangent vectors on the Grassmann manifold `G(D, m)`.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spd::sym_eig;

/// An `m`-dimensional subspace of `R^D`, stored as a `D×m` orthonormal basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SubspaceJson", into = "SubspaceJson")]
pub struct Subspace {
    basis: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SubspaceJson {
    #[serde(rename = "D")]
    ambient_dim: usize,
    m: usize,
    basis: Vec<f64>,
}

impl TryFrom<SubspaceJson> for Subspace {
    type Error = Error;

    fn try_from(v: SubspaceJson) -> Result<Self> {
        if v.basis.len() != v.ambient_dim * v.m {
            return Err(Error::DimMismatch { expected: v.ambient_dim * v.m, found: v.basis.len() });
        }
        Subspace::from_orthonormal(DMatrix::from_row_slice(v.ambient_dim, v.m, &v.basis))
    }
}

impl From<Subspace> for SubspaceJson {
    fn from(q: Subspace) -> Self {
        SubspaceJson { ambient_dim: q.ambient_dim(), m: q.sub_dim(), basis: crate::io::row_major(&q.basis) }
    }
}

const ORTHO_TOL: f64 = 1e-10;

fn check_dims(d: usize, m: usize) -> Result<()> {
    if m == 0 || m >= d {
        return Err(Error::BadDims(format!("need 1 <= m < D, got D={d}, m={m}")));
    }
    Ok(())
}

/// Thin QR with the diagonal of R forced positive.
fn orthonormalize(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let qr = a.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    let scale = r.diagonal().amax().max(f64::MIN_POSITIVE);
    for j in 0..r.ncols().min(r.nrows()) {
        let rjj = r[(j, j)];
        if !(rjj.abs() > 1e-12 * scale) {
            return Err(Error::RankDeficient);
        }
        if rjj < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(q)
}

impl Subspace {
    /// Wrap a basis that is already orthonormal (checked to 1e-10).
    pub fn from_orthonormal(basis: DMatrix<f64>) -> Result<Self> {
        check_dims(basis.nrows(), basis.ncols())?;
        let m = basis.ncols();
        let err = (basis.transpose() * &basis - DMatrix::identity(m, m)).amax();
        if !(err <= ORTHO_TOL) {
            return Err(Error::BadDims(format!("basis columns are not orthonormal (error {err:e})")));
        }
        Ok(Subspace { basis })
    }

    /// The column span of an arbitrary full-rank `D×m` matrix.
    pub fn from_span(a: &DMatrix<f64>) -> Result<Self> {
        check_dims(a.nrows(), a.ncols())?;
        Ok(Subspace { basis: orthonormalize(a)? })
    }

    /// Span of the first `m` coordinate axes.
    pub fn coordinate(d: usize, m: usize) -> Result<Self> {
        check_dims(d, m)?;
        Ok(Subspace { basis: DMatrix::identity(d, m) })
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn sub_dim(&self) -> usize {
        self.basis.ncols()
    }

    /// The orthogonal complement, a `D×(D−m)` basis.
    pub fn complement(&self) -> Subspace {
        let d = self.ambient_dim();
        let k = d - self.sub_dim();
        let proj = DMatrix::identity(d, d) - &self.basis * self.basis.transpose();
        let eig = sym_eig(&proj);
        let w = eig.eigenvectors.columns(0, k).into_owned();
        // Re-orthonormalize to clean up eigensolver round-off.
        Subspace { basis: orthonormalize(&w).expect("complement basis has full rank") }
    }

    /// Same span, rotated on the right: `Q R` for orthogonal `R`.
    pub fn rotated(&self, r: &DMatrix<f64>) -> Result<Subspace> {
        Subspace::from_orthonormal(&self.basis * r)
    }

    /// Whether two subspaces coincide (all principal angles below `tol`).
    pub fn same_span(&self, other: &Subspace, tol: f64) -> bool {
        principal_angles(self, other).map(|a| a.iter().all(|&t| t <= tol)).unwrap_or(false)
    }
}

/// A horizontal tangent vector at `at`: `atᵀ·delta = 0`.
#[derive(Clone, Debug)]
pub struct TangentVector {
    pub at: Subspace,
    pub delta: DMatrix<f64>,
}

impl TangentVector {
    pub fn norm(&self) -> f64 {
        self.delta.norm()
    }
}

/// Uniformly distributed subspace from the QR of a Gaussian `D×m` matrix.
pub fn random_subspace(d: usize, m: usize, seed: u64) -> Result<Subspace> {
    check_dims(d, m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(d, m, |_, _| StandardNormal.sample(&mut rng));
    Subspace::from_span(&g)
}

/// `G − Q(QᵀG)`.
pub fn project_tangent(q: &Subspace, g: &DMatrix<f64>) -> Result<TangentVector> {
    if g.shape() != q.basis.shape() {
        return Err(Error::BadDims(format!("gradient is {:?}, basis is {:?}", g.shape(), q.basis.shape())));
    }
    Ok(TangentVector { at: q.clone(), delta: project_raw(&q.basis, g) })
}

pub(crate) fn project_raw(q: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    g - q * (q.transpose() * g)
}

/// QR retraction: orthonormal basis of `Q + ξ`.
pub fn retract(q: &Subspace, xi: &TangentVector) -> Result<Subspace> {
    if xi.delta.shape() != q.basis.shape() || xi.at.basis.shape() != q.basis.shape() {
        return Err(Error::BadDims("tangent vector does not match subspace".into()));
    }
    if !(&xi.at.basis - &q.basis).iter().all(|v| v.abs() <= 1e-12) {
        return Err(Error::BadDims("tangent vector is attached to a different basis".into()));
    }
    retract_raw(&q.basis, &xi.delta)
}

pub(crate) fn retract_raw(q: &DMatrix<f64>, delta: &DMatrix<f64>) -> Result<Subspace> {
    Ok(Subspace { basis: orthonormalize(&(q + delta))? })
}

/// Principal angles, ascending.
///
/// Large angles come from `arccos` of the singular values of `Q1ᵀQ2` and
/// small ones from `arcsin` of the singular values of `(I − Q1Q1ᵀ)Q2`, which
/// keeps full relative accuracy near zero.
pub fn principal_angles(q1: &Subspace, q2: &Subspace) -> Result<Vec<f64>> {
    if q1.basis.shape() != q2.basis.shape() {
        return Err(Error::BadDims(format!(
            "subspaces differ: {:?} vs {:?}",
            q1.basis.shape(),
            q2.basis.shape()
        )));
    }
    let cross = q1.basis.transpose() * &q2.basis;
    let mut cos: Vec<f64> = cross.clone().svd(false, false).singular_values.iter().map(|&s| s.clamp(0.0, 1.0)).collect();
    cos.sort_by(|a, b| b.total_cmp(a));
    let resid = &q2.basis - &q1.basis * &cross;
    let mut sin: Vec<f64> = resid.svd(false, false).singular_values.iter().map(|&s| s.clamp(0.0, 1.0)).collect();
    sin.sort_by(|a, b| a.total_cmp(b));
    Ok(cos
        .iter()
        .zip(&sin)
        .map(|(&c, &s)| if c * c >= 0.5 { s.asin() } else { c.acos() })
        .collect())
}

/// Geodesic distance `√(Σ θ_k²)` on the Grassmannian.
pub fn grassmann_dist(q1: &Subspace, q2: &Subspace) -> Result<f64> {
    Ok(principal_angles(q1, q2)?.iter().map(|t| t * t).sum::<f64>().sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{gaussian, random_orthogonal};
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn random_subspace_is_deterministic_and_orthonormal() {
        let a = random_subspace(3, 2, 42).unwrap();
        let b = random_subspace(3, 2, 42).unwrap();
        assert_eq!(a, b);
        let c = random_subspace(3, 2, 43).unwrap();
        assert_ne!(a, c);
        for (d, m) in [(5, 1), (10, 4), (19, 12)] {
            let q = random_subspace(d, m, 7).unwrap();
            let err = (q.basis().transpose() * q.basis() - DMatrix::<f64>::identity(m, m)).amax();
            assert!(err <= 1e-12);
        }
        assert!(matches!(random_subspace(3, 3, 0), Err(Error::BadDims(_))));
        assert!(matches!(random_subspace(3, 0, 0), Err(Error::BadDims(_))));
    }

    #[test]
    fn projection_edge_cases() {
        let q = random_subspace(6, 2, 1).unwrap();
        let zero = project_tangent(&q, q.basis()).unwrap();
        assert!(zero.norm() < 1e-14);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let g = gaussian(&mut rng, 6, 2);
        let once = project_tangent(&q, &g).unwrap();
        let twice = project_tangent(&q, &once.delta).unwrap();
        assert!((&once.delta - &twice.delta).amax() <= 1e-12);
        assert!((q.basis().transpose() * &once.delta).amax() <= 1e-12);
        assert!(project_tangent(&q, &gaussian(&mut rng, 5, 2)).is_err());
    }

    #[test]
    fn retraction_of_zero_is_identity() {
        let q = random_subspace(7, 3, 3).unwrap();
        let zero = TangentVector { at: q.clone(), delta: DMatrix::zeros(7, 3) };
        let r = retract(&q, &zero).unwrap();
        assert!(grassmann_dist(&q, &r).unwrap() < 1e-12);
        assert!((r.basis() - q.basis()).amax() < 1e-12);
    }

    #[test]
    fn retraction_matches_tangent_length_to_second_order() {
        let q = random_subspace(8, 3, 4).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let dir = project_tangent(&q, &gaussian(&mut rng, 8, 3)).unwrap();
        let unit = &dir.delta / dir.norm();
        for t in [1e-3, 1e-4] {
            let xi = TangentVector { at: q.clone(), delta: &unit * t };
            let r = retract(&q, &xi).unwrap();
            let err = (grassmann_dist(&q, &r).unwrap() - t).abs();
            // O(t³) with a modest constant.
            assert!(err <= 10.0 * t * t * t, "t={t}: err={err:e}");
            let m = r.sub_dim();
            assert!((r.basis().transpose() * r.basis() - DMatrix::<f64>::identity(m, m)).amax() <= 1e-12);
        }
    }

    #[test]
    fn retraction_rejects_rank_loss() {
        let q = Subspace::coordinate(3, 1).unwrap();
        let xi = TangentVector { at: q.clone(), delta: -q.basis().clone() };
        assert!(matches!(retract(&q, &xi), Err(Error::RankDeficient)));
    }

    #[test]
    fn distance_examples() {
        let q = random_subspace(6, 3, 9).unwrap();
        assert!(grassmann_dist(&q, &q).unwrap() < 1e-12);
        let e1 = Subspace::from_orthonormal(DMatrix::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
        let e2 = Subspace::from_orthonormal(DMatrix::from_column_slice(2, 1, &[0.0, 1.0])).unwrap();
        assert!((grassmann_dist(&e1, &e2).unwrap() - FRAC_PI_2).abs() < 1e-15);
        let other = random_subspace(5, 3, 0).unwrap();
        assert!(matches!(grassmann_dist(&q, &other), Err(Error::BadDims(_))));
    }

    #[test]
    fn distance_depends_only_on_span() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
        for seed in 0..20 {
            let a = random_subspace(9, 4, seed).unwrap();
            let b = random_subspace(9, 4, seed + 100).unwrap();
            let r1 = random_orthogonal(&mut rng, 4);
            let r2 = random_orthogonal(&mut rng, 4);
            let d0 = grassmann_dist(&a, &b).unwrap();
            let d1 = grassmann_dist(&a.rotated(&r1).unwrap(), &b.rotated(&r2).unwrap()).unwrap();
            assert!((d0 - d1).abs() <= 1e-10);
        }
    }

    #[test]
    fn complement_is_orthogonal() {
        let q = random_subspace(10, 4, 11).unwrap();
        let w = q.complement();
        assert_eq!(w.sub_dim(), 6);
        assert!((q.basis().transpose() * w.basis()).amax() <= 1e-10);
        assert!(q.same_span(&w.complement(), 1e-8));
    }

    #[test]
    fn json_round_trip() {
        let q = random_subspace(5, 2, 12).unwrap();
        let text = serde_json::to_string(&q).unwrap();
        assert!(text.contains("\"D\":5") && text.contains("\"m\":2"));
        let back: Subspace = serde_json::from_str(&text).unwrap();
        assert_eq!(back, q);
        assert!(serde_json::from_str::<Subspace>(r#"{"D":2,"m":1,"basis":[1.0,1.0]}"#).is_err());
    }
}
