//! Synthetic data following the stationary/non-stationary mixture model.
//!
//! Sources split into `m` stationary components `s^s ~ N(0, Λ^s)` and `D−m`
//! non-stationary ones `s^n = C_i s^s + Y`, `Y ~ N(μ_i, Λ^n_i)` within epoch
//! `i`. Observations are `x = A [s^s; s^n]` with column-normalized `A`.

use nalgebra::{DMatrix, DMatrixView, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use crate::covariance::{estimate_cov, CovEstimator, EstimatorConfig};
use crate::error::{Error, Result};
use crate::grassmann::Subspace;
use crate::spd::{condition_number, SymPosDef};

/// Condition number above which a random mixing matrix is redrawn.
pub const MIXING_COND_CAP: f64 = 1e6;
const MIXING_ATTEMPTS: usize = 100;

// ChaCha stream ids, so each piece of the model has its own sequence.
const STREAM_MIXING: u64 = 0;
const STREAM_STATIONARY: u64 = 1;
const STREAM_EPOCH_PARAMS: u64 = 1 << 16;
const STREAM_EPOCH_SAMPLES: u64 = 1 << 32;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixingKind {
    /// Uniform entries in [−0.5, 0.5], columns normalized to one.
    #[default]
    Uniform,
    /// Haar-distributed orthogonal matrix.
    Orthogonal,
}

/// Generator settings. Scales not fixed by the model are configurable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorParams {
    #[serde(rename = "D")]
    pub d: usize,
    pub m: usize,
    pub epochs: usize,
    pub epoch_len: usize,
    pub seed: u64,
    pub mixing: MixingKind,
    /// Eigenvalue range of `Λ^s` and `Λ^n_i`.
    pub eig_range: (f64, f64),
    /// Standard deviation of the coupling entries `C_i`; `None` means `1/√m`.
    pub coupling_std: Option<f64>,
    /// Standard deviation of the non-stationary means `μ_i`.
    pub mean_std: f64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            d: 19,
            m: 12,
            epochs: 50,
            epoch_len: 250,
            seed: 0,
            mixing: MixingKind::Uniform,
            eig_range: (0.5, 2.0),
            coupling_std: None,
            mean_std: 1.0,
        }
    }
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<()> {
        if self.d < 2 || self.m == 0 || self.m >= self.d {
            return Err(Error::Config(format!("need D >= 2 and 1 <= m < D, got D={}, m={}", self.d, self.m)));
        }
        if self.epochs == 0 || self.epoch_len == 0 {
            return Err(Error::Config("epochs and epoch_len must be positive".into()));
        }
        let (lo, hi) = self.eig_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Config(format!("invalid eig_range [{lo}, {hi}]")));
        }
        if let Some(s) = self.coupling_std {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("invalid coupling_std {s}")));
            }
        }
        if !(self.mean_std >= 0.0 && self.mean_std.is_finite()) {
            return Err(Error::Config(format!("invalid mean_std {}", self.mean_std)));
        }
        Ok(())
    }

    pub fn coupling_std(&self) -> f64 {
        self.coupling_std.unwrap_or(1.0 / (self.m as f64).sqrt())
    }
}

/// Ground truth of one synthetic data set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MixingModel {
    pub params: GeneratorParams,
    #[serde(with = "crate::io::dense")]
    pub mixing: DMatrix<f64>,
    pub lambda_s: SymPosDef,
    #[serde(with = "crate::io::dense_vec")]
    pub coupling: Vec<DMatrix<f64>>,
    pub means: Vec<Vec<f64>>,
    pub lambda_n: Vec<SymPosDef>,
}

impl MixingModel {
    pub fn d(&self) -> usize {
        self.params.d
    }

    pub fn m(&self) -> usize {
        self.params.m
    }

    pub fn epochs(&self) -> usize {
        self.params.epochs
    }

    /// Span of the last `D−m` columns of `A`.
    pub fn true_nspace(&self) -> Result<Subspace> {
        let (d, m) = (self.d(), self.m());
        Subspace::from_span(&self.mixing.columns(m, d - m).into_owned())
    }

    /// Span of the first `m` rows of `A⁻¹`, as columns: the projection that
    /// extracts the stationary sources.
    pub fn true_s_projection(&self) -> Result<Subspace> {
        let inv = self
            .mixing
            .clone()
            .try_inverse()
            .ok_or(Error::SingularTransform { condition: f64::INFINITY })?;
        Subspace::from_span(&inv.rows(0, self.m()).transpose())
    }

    /// `A Λ_i Aᵀ` for every epoch.
    pub fn closed_form_covs(&self) -> Vec<SymPosDef> {
        (0..self.epochs())
            .map(|i| {
                let lambda = source_cov(self, i).expect("epoch index in range");
                SymPosDef::new_unchecked(&self.mixing * lambda.matrix() * self.mixing.transpose())
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        let (d, m, n) = (self.d(), self.m(), self.epochs());
        if self.mixing.shape() != (d, d) {
            return Err(Error::Schema(format!("mixing matrix is {:?}, expected ({d}, {d})", self.mixing.shape())));
        }
        if self.lambda_s.dim() != m
            || self.coupling.len() != n
            || self.means.len() != n
            || self.lambda_n.len() != n
            || self.coupling.iter().any(|c| c.shape() != (d - m, m))
            || self.means.iter().any(|mu| mu.len() != d - m)
            || self.lambda_n.iter().any(|l| l.dim() != d - m)
        {
            return Err(Error::Schema("model blocks do not match (D, m, epochs)".into()));
        }
        Ok(())
    }
}

/// Draw raw mixing entries, uniform on [−0.5, 0.5].
pub fn sample_mixing_entries(d: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let uniform = Uniform::new_inclusive(-0.5, 0.5).expect("valid range");
    DMatrix::from_fn(d, d, |_, _| uniform.sample(rng))
}

fn normalize_columns(a: &mut DMatrix<f64>) {
    for mut col in a.column_iter_mut() {
        let n = col.norm();
        if n > 0.0 {
            col /= n;
        }
    }
}

/// Random column-normalized mixing matrix with condition number at most
/// [`MIXING_COND_CAP`].
pub fn gen_mixing(d: usize, seed: u64) -> Result<DMatrix<f64>> {
    gen_mixing_with(d, &mut stream_rng(seed, STREAM_MIXING))
}

fn gen_mixing_with(d: usize, rng: &mut impl Rng) -> Result<DMatrix<f64>> {
    if d < 2 {
        return Err(Error::Config(format!("mixing dimension must be at least 2, got {d}")));
    }
    for _ in 0..MIXING_ATTEMPTS {
        let mut a = sample_mixing_entries(d, rng);
        normalize_columns(&mut a);
        if condition_number(&a) <= MIXING_COND_CAP {
            return Ok(a);
        }
    }
    Err(Error::GenerationFailure(format!(
        "no mixing matrix with condition <= {MIXING_COND_CAP:e} in {MIXING_ATTEMPTS} attempts"
    )))
}

fn random_orthogonal(d: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    // Sign fix makes the distribution Haar.
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// `B Γ Bᵀ` with Haar-orthogonal `B` and eigenvalues uniform in `eig_range`.
pub fn gen_random_spd(d: usize, seed: u64, eig_range: (f64, f64)) -> Result<SymPosDef> {
    random_spd_with(d, eig_range, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn random_spd_with(d: usize, eig_range: (f64, f64), rng: &mut impl Rng) -> Result<SymPosDef> {
    if d == 0 {
        return Err(Error::BadDims("dimension must be positive".into()));
    }
    let (lo, hi) = eig_range;
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::Config(format!("invalid eigenvalue range [{lo}, {hi}]")));
    }
    let b = random_orthogonal(d, rng);
    let gamma: Vec<f64> = (0..d).map(|_| if lo == hi { lo } else { rng.random_range(lo..=hi) }).collect();
    let mut scaled = b.clone();
    for (j, g) in gamma.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*g);
    }
    Ok(SymPosDef::new_unchecked(scaled * b.transpose()))
}

/// Draw a complete ground-truth model.
pub fn gen_model(params: &GeneratorParams) -> Result<MixingModel> {
    params.validate()?;
    let (d, m) = (params.d, params.m);
    let mixing = match params.mixing {
        MixingKind::Uniform => gen_mixing(d, params.seed)?,
        MixingKind::Orthogonal => random_orthogonal(d, &mut stream_rng(params.seed, STREAM_MIXING)),
    };
    let lambda_s = random_spd_with(m, params.eig_range, &mut stream_rng(params.seed, STREAM_STATIONARY))?;
    let coupling_dist = Normal::new(0.0, params.coupling_std()).map_err(|e| Error::Config(e.to_string()))?;
    let mean_dist = Normal::new(0.0, params.mean_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut coupling = Vec::with_capacity(params.epochs);
    let mut means = Vec::with_capacity(params.epochs);
    let mut lambda_n = Vec::with_capacity(params.epochs);
    for i in 0..params.epochs {
        let mut rng = stream_rng(params.seed, STREAM_EPOCH_PARAMS + i as u64);
        coupling.push(DMatrix::from_fn(d - m, m, |_, _| coupling_dist.sample(&mut rng)));
        means.push((0..d - m).map(|_| mean_dist.sample(&mut rng)).collect());
        lambda_n.push(random_spd_with(d - m, params.eig_range, &mut rng)?);
    }
    Ok(MixingModel { params: params.clone(), mixing, lambda_s, coupling, means, lambda_n })
}

/// Source covariance of epoch `i`:
/// `[[Λ^s, (C_iΛ^s)ᵀ], [C_iΛ^s, C_iΛ^sC_iᵀ + Λ^n_i]]`.
pub fn source_cov(model: &MixingModel, i: usize) -> Result<SymPosDef> {
    if i >= model.epochs() {
        return Err(Error::BadDims(format!("epoch {i} out of range 0..{}", model.epochs())));
    }
    let (d, m) = (model.d(), model.m());
    let ls = model.lambda_s.matrix();
    let c = &model.coupling[i];
    let cl = c * ls;
    let mut out = DMatrix::zeros(d, d);
    out.view_mut((0, 0), (m, m)).copy_from(ls);
    out.view_mut((m, 0), (d - m, m)).copy_from(&cl);
    out.view_mut((0, m), (m, d - m)).copy_from(&cl.transpose());
    out.view_mut((m, m), (d - m, d - m)).copy_from(&(&cl * c.transpose() + model.lambda_n[i].matrix()));
    Ok(SymPosDef::new_unchecked(out))
}

/// Mixed observations with their epoch layout and ground truth.
#[derive(Clone, Debug)]
pub struct SignalSet {
    /// `(N·T)×D`, one time sample per row.
    pub samples: DMatrix<f64>,
    /// Half-open row ranges of each epoch.
    pub epoch_bounds: Vec<(usize, usize)>,
    pub ground_truth: MixingModel,
}

fn lower_cholesky(s: &SymPosDef) -> DMatrix<f64> {
    s.matrix().clone().cholesky().expect("SPD by construction").l()
}

/// Draw `x(t) = A [s^s(t); s^n(t)]` for every epoch.
pub fn gen_signals(model: &MixingModel) -> Result<SignalSet> {
    model.validate()?;
    let (d, m, t) = (model.d(), model.m(), model.params.epoch_len);
    let ls = lower_cholesky(&model.lambda_s);
    let blocks: Vec<DMatrix<f64>> = (0..model.epochs())
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(model.params.seed, STREAM_EPOCH_SAMPLES + i as u64);
            let ln = lower_cholesky(&model.lambda_n[i]);
            let mu = DVector::from_column_slice(&model.means[i]);
            let zs = DMatrix::from_fn(m, t, |_, _| StandardNormal.sample(&mut rng));
            let zn = DMatrix::from_fn(d - m, t, |_, _| StandardNormal.sample(&mut rng));
            let ss = &ls * zs;
            let mut sn = &model.coupling[i] * &ss + &ln * zn;
            for mut col in sn.column_iter_mut() {
                col += &mu;
            }
            let mut sources = DMatrix::zeros(d, t);
            sources.view_mut((0, 0), (m, t)).copy_from(&ss);
            sources.view_mut((m, 0), (d - m, t)).copy_from(&sn);
            (&model.mixing * sources).transpose()
        })
        .collect();
    let mut samples = DMatrix::zeros(model.epochs() * t, d);
    let mut epoch_bounds = Vec::with_capacity(model.epochs());
    for (i, block) in blocks.iter().enumerate() {
        samples.view_mut((i * t, 0), (t, d)).copy_from(block);
        epoch_bounds.push((i * t, (i + 1) * t));
    }
    Ok(SignalSet { samples, epoch_bounds, ground_truth: model.clone() })
}

/// Windows of `len` rows with stride `len·(1 − overlap)`; a trailing partial
/// window is dropped.
pub fn split_epochs(samples: &DMatrix<f64>, len: usize, overlap: f64) -> Result<Vec<DMatrixView<'_, f64>>> {
    if len == 0 || len > samples.nrows() {
        return Err(Error::BadWindow(format!("window {len} does not fit {} samples", samples.nrows())));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::BadWindow(format!("overlap fraction {overlap} outside [0, 1)")));
    }
    let stride = ((len as f64 * (1.0 - overlap)).round() as usize).max(1);
    let count = (samples.nrows() - len) / stride + 1;
    Ok((0..count).map(|k| samples.rows(k * stride, len)).collect())
}

/// Per-epoch covariance estimates of a signal set, using its own epoch layout.
pub fn epoch_covariances(signals: &SignalSet, config: &EstimatorConfig) -> Result<Vec<SymPosDef>> {
    signals
        .epoch_bounds
        .iter()
        .map(|&(a, b)| estimate_cov(signals.samples.rows(a, b - a), config))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spd::airm_dist2;

    fn small_params(seed: u64) -> GeneratorParams {
        GeneratorParams { d: 5, m: 2, epochs: 6, epoch_len: 40, seed, ..Default::default() }
    }

    #[test]
    fn mixing_columns_are_unit_and_deterministic() {
        let a = gen_mixing(7, 3).unwrap();
        for col in a.column_iter() {
            assert!((col.norm() - 1.0).abs() <= 1e-12);
        }
        assert_eq!(a, gen_mixing(7, 3).unwrap());
        assert_ne!(a, gen_mixing(7, 4).unwrap());
        assert!(condition_number(&a) <= MIXING_COND_CAP);
        assert!(gen_mixing(1, 0).is_err());
    }

    #[test]
    fn raw_mixing_entries_are_uniform() {
        // Kolmogorov-Smirnov against U[−0.5, 0.5]; critical value at p = 0.01.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut xs: Vec<f64> = sample_mixing_entries(100, &mut rng).iter().copied().collect();
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let cdf = x + 0.5;
                (cdf - i as f64 / n).abs().max(((i + 1) as f64 / n - cdf).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 1.628 / n.sqrt(), "KS statistic {ks}");
    }

    #[test]
    fn random_spd_respects_eigenvalue_range() {
        for seed in 0..10 {
            let s = gen_random_spd(6, seed, (0.5, 2.0)).unwrap();
            let e = s.eig();
            assert!(e.min() >= 0.5 - 1e-12 && e.max() <= 2.0 + 1e-12);
            let asym = (s.matrix() - s.matrix().transpose()).amax();
            assert!(asym <= 1e-12);
        }
        let ident = gen_random_spd(4, 1, (1.0, 1.0)).unwrap();
        assert!((ident.matrix() - DMatrix::<f64>::identity(4, 4)).amax() <= 1e-12);
    }

    #[test]
    fn source_cov_structure() {
        let mut model = gen_model(&small_params(1)).unwrap();
        for i in 0..model.epochs() {
            let lam = source_cov(&model, i).unwrap();
            assert_eq!(lam.matrix().view((0, 0), (2, 2)).into_owned(), *model.lambda_s.matrix());
        }
        model.coupling[0].fill(0.0);
        let lam = source_cov(&model, 0).unwrap();
        assert!(lam.matrix().view((2, 0), (3, 2)).amax() == 0.0);
        assert_eq!(lam.matrix().view((2, 2), (3, 3)).into_owned(), *model.lambda_n[0].matrix());
        assert!(source_cov(&model, 6).is_err());
    }

    #[test]
    fn true_projection_annihilates_nonstationarity() {
        let model = gen_model(&GeneratorParams { epochs: 10, ..small_params(2) }).unwrap();
        let q = model.true_s_projection().unwrap();
        let compressed: Vec<SymPosDef> = model
            .closed_form_covs()
            .iter()
            .map(|c| SymPosDef::new(q.basis().transpose() * c.matrix() * q.basis()).unwrap())
            .collect();
        for a in &compressed {
            for b in &compressed {
                assert!(airm_dist2(a, b).unwrap() <= 1e-10);
            }
        }
        // The true s-projection is orthogonal to the true n-space.
        let n = model.true_nspace().unwrap();
        assert!((q.basis().transpose() * n.basis()).amax() <= 1e-10);
    }

    #[test]
    fn generation_is_deterministic() {
        let p = small_params(7);
        let a = gen_signals(&gen_model(&p).unwrap()).unwrap();
        let b = gen_signals(&gen_model(&p).unwrap()).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.samples.nrows(), 6 * 40);
        assert_eq!(a.epoch_bounds.first(), Some(&(0, 40)));
        assert_eq!(a.epoch_bounds.last(), Some(&(200, 240)));
        assert!(a.samples.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn split_epochs_examples() {
        let x = DMatrix::from_fn(1000, 2, |i, j| (i * 2 + j) as f64);
        let segs = split_epochs(&x, 250, 0.0).unwrap();
        assert_eq!(segs.len(), 4);
        for (k, s) in segs.iter().enumerate() {
            assert_eq!(s[(0, 0)], (k * 250 * 2) as f64);
            assert_eq!(s.nrows(), 250);
        }
        assert_eq!(split_epochs(&x, 250, 0.5).unwrap().len(), 7);
        assert_eq!(split_epochs(&x, 300, 0.0).unwrap().len(), 3);
        assert!(matches!(split_epochs(&x, 1001, 0.0), Err(Error::BadWindow(_))));
        assert!(matches!(split_epochs(&x, 10, 1.0), Err(Error::BadWindow(_))));
    }

    #[test]
    fn json_sidecar_round_trip() {
        let model = gen_model(&small_params(3)).unwrap();
        let text = serde_json::to_string(&model).unwrap();
        let back: MixingModel = serde_json::from_str(&text).unwrap();
        back.validate().unwrap();
        assert_eq!(back.mixing, model.mixing);
        assert_eq!(back.coupling, model.coupling);
        assert_eq!(back.params, model.params);
    }
}
