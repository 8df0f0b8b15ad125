use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::spd::SymPosDef;

pub fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// `G Gᵀ/d + 0.5 I`: well conditioned, generic eigenvectors.
pub fn random_spd(rng: &mut impl Rng, d: usize) -> SymPosDef {
    let g = gaussian(rng, d, d);
    SymPosDef::new(&g * g.transpose() / d as f64 + DMatrix::identity(d, d) * 0.5).unwrap()
}

pub fn random_invertible(rng: &mut impl Rng, d: usize) -> DMatrix<f64> {
    gaussian(rng, d, d) + DMatrix::identity(d, d) * 2.0
}

pub fn random_orthogonal(rng: &mut impl Rng, d: usize) -> DMatrix<f64> {
    gaussian(rng, d, d).qr().q()
}
