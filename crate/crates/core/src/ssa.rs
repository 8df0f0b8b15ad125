//! The original SSA: whiten by the pooled covariance, then find the `m`
//! orthonormal directions along which every epoch looks standard normal,
//! measured by the Kullback-Leibler divergence.

use nalgebra::{DMatrix, DMatrixView, DVector};
use serde::{Deserialize, Serialize};

pub use crate::covariance::{epoch_stats, EpochStats};
use crate::covariance::EstimatorConfig;
use crate::datagen::split_epochs;
use crate::error::{Error, Result};
use crate::gassa::{multi_restart, RestartRecord};
use crate::grassmann::Subspace;
use crate::io::dense;
use crate::optim::OptimizerOptions;
use crate::spd::{arithmetic_mean, log_det, spd_sqrt_inv_sqrt, SymPosDef};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsaConfig {
    pub m: usize,
    pub restarts: usize,
    pub seed: u64,
    pub optimizer: OptimizerOptions,
}

impl Default for SsaConfig {
    fn default() -> Self {
        SsaConfig { m: 1, restarts: 5, seed: 0, optimizer: OptimizerOptions::default() }
    }
}

impl SsaConfig {
    pub fn validate(&self, d: usize) -> Result<()> {
        if self.m == 0 || self.m >= d {
            return Err(Error::Config(format!("need 1 <= m < D, got m={} with D={d}", self.m)));
        }
        if self.restarts == 0 {
            return Err(Error::Config("restarts must be at least 1".into()));
        }
        self.optimizer.validate()
    }

    pub fn restart_seed(&self, index: usize) -> u64 {
        self.seed.wrapping_add(index as u64)
    }
}

/// Global whitening `x -> Z(x − μ̄)` with `Z = Σ̄^{-1/2}` for the pooled
/// (arithmetic mean) covariance `Σ̄` and the average epoch mean `μ̄`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsaWhitening {
    #[serde(with = "dense")]
    pub whitener: DMatrix<f64>,
    pub center: Vec<f64>,
}

impl SsaWhitening {
    pub fn pooled(epochs: &[EpochStats]) -> Result<Self> {
        let d = check_epochs(epochs, 1)?;
        let covs: Vec<SymPosDef> = epochs.iter().map(|e| e.cov.clone()).collect();
        let pooled = arithmetic_mean(&covs)?;
        let (_, inv_sqrt) = spd_sqrt_inv_sqrt(&pooled)?;
        let mut center = DVector::zeros(d);
        for e in epochs {
            center += e.mean_vector();
        }
        center /= epochs.len() as f64;
        Ok(SsaWhitening { whitener: inv_sqrt.into_inner(), center: center.iter().copied().collect() })
    }

    /// Whitened `(μ̃_i, Σ̃_i)` of every epoch.
    pub fn apply(&self, epochs: &[EpochStats]) -> Result<Vec<(DVector<f64>, DMatrix<f64>)>> {
        let d = self.whitener.nrows();
        let center = DVector::from_column_slice(&self.center);
        epochs
            .iter()
            .map(|e| {
                if e.cov.dim() != d || e.mean.len() != d {
                    return Err(Error::DimMismatch { expected: d, found: e.cov.dim() });
                }
                let mu = &self.whitener * (e.mean_vector() - &center);
                let sigma = &self.whitener * e.cov.matrix() * &self.whitener;
                Ok((mu, sigma))
            })
            .collect()
    }
}

fn check_epochs(epochs: &[EpochStats], min: usize) -> Result<usize> {
    if epochs.len() < min {
        return Err(Error::InsufficientData(format!("need at least {min} epochs, got {}", epochs.len())));
    }
    let d = epochs[0].cov.dim();
    if let Some(bad) = epochs.iter().find(|e| e.cov.dim() != d || e.mean.len() != d) {
        return Err(Error::DimMismatch { expected: d, found: bad.cov.dim() });
    }
    Ok(d)
}

/// SSA objective on whitened epoch statistics, as a function of an
/// orthonormal `D×m` basis `Q` (the transposed first `m` rows of `B̂`).
#[derive(Clone, Debug)]
pub struct SsaObjective {
    stats: Vec<(DVector<f64>, DMatrix<f64>)>,
}

impl SsaObjective {
    pub fn new(epochs: &[EpochStats], whitening: &SsaWhitening) -> Result<Self> {
        Ok(SsaObjective { stats: whitening.apply(epochs)? })
    }

    /// `Σ_i ½(tr Σ^s_i − log det Σ^s_i + |μ^s_i|² − m)`.
    pub fn cost_at(&self, q: &DMatrix<f64>) -> Result<f64> {
        let m = q.ncols() as f64;
        let mut total = 0.0;
        for (mu, sigma) in &self.stats {
            let s = q.transpose() * sigma * q;
            let ms = q.transpose() * mu;
            total += 0.5 * (s.trace() - log_det(&s)? + ms.norm_squared() - m);
        }
        Ok(total)
    }

    /// `Σ_i (Σ̃_iQ − Σ̃_iQ(QᵀΣ̃_iQ)^{-1} + μ̃_iμ̃_iᵀQ)`.
    pub fn egrad_at(&self, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut g = DMatrix::zeros(q.nrows(), q.ncols());
        for (mu, sigma) in &self.stats {
            let sq = sigma * q;
            let s = q.transpose() * &sq;
            let s_inv = SymPosDef::new(s)?.inverse().into_inner();
            g += &sq - &sq * s_inv + mu * (mu.transpose() * q);
        }
        Ok(g)
    }
}

/// Full KL form of the SSA cost for an `m×D` matrix with orthonormal rows.
pub fn ssa_cost(b_rows: &DMatrix<f64>, epochs: &[EpochStats], whitening: &SsaWhitening) -> Result<f64> {
    if b_rows.ncols() != whitening.whitener.nrows() {
        return Err(Error::DimMismatch { expected: whitening.whitener.nrows(), found: b_rows.ncols() });
    }
    SsaObjective::new(epochs, whitening)?.cost_at(&b_rows.transpose())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SsaResult {
    pub config: SsaConfig,
    /// `m×D` s-source extractor `I_D^m B̂ Z`.
    #[serde(with = "dense")]
    pub projection: DMatrix<f64>,
    /// The first `m` rows of `B̂` (orthonormal).
    #[serde(with = "dense")]
    pub rotation: DMatrix<f64>,
    /// Row space of `projection` in sensor coordinates.
    pub s_basis: Subspace,
    /// Estimated span of `A^n`.
    pub n_basis: Subspace,
    pub cost: f64,
    pub best_restart: usize,
    pub per_restart: Vec<RestartRecord>,
    pub whitening: SsaWhitening,
}

pub fn fit_ssa(epochs: &[EpochStats], config: &SsaConfig) -> Result<SsaResult> {
    let d = check_epochs(epochs, 2)?;
    config.validate(d)?;
    let whitening = SsaWhitening::pooled(epochs)?;
    let objective = SsaObjective::new(epochs, &whitening)?;
    let (q_hat, cost, best_restart, per_restart) = multi_restart(
        d,
        config.m,
        config.restarts,
        |i| config.restart_seed(i),
        &config.optimizer,
        |q: &Subspace| objective.cost_at(q.basis()),
        |q: &Subspace| objective.egrad_at(q.basis()),
    )?;
    let rotation = q_hat.basis().transpose();
    let projection = &rotation * &whitening.whitener;
    // v lies in span(Z^{-1}B̂_nᵀ) iff B̂_s Z v = 0, i.e. v ⊥ span(ZQ̂).
    let s_basis = Subspace::from_span(&projection.transpose())?;
    let n_basis = s_basis.complement();
    Ok(SsaResult {
        config: config.clone(),
        projection,
        rotation,
        s_basis,
        n_basis,
        cost,
        best_restart,
        per_restart,
        whitening,
    })
}

/// Split a `T×D` recording into epochs and estimate their statistics.
pub fn stats_from_signals(
    samples: &DMatrix<f64>,
    epoch_len: usize,
    overlap: f64,
    estimator: &EstimatorConfig,
) -> Result<Vec<EpochStats>> {
    split_epochs(samples, epoch_len, overlap)?
        .into_iter()
        .enumerate()
        .map(|(i, seg): (usize, DMatrixView<'_, f64>)| epoch_stats(i, seg, estimator))
        .collect()
}
