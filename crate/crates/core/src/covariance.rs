//! Epoch statistics: empirical mean and covariance, with optional shrinkage
//! toward a scaled identity.

use nalgebra::{DMatrix, DMatrixView, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spd::SymPosDef;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Divide by `T` (maximum likelihood).
    #[default]
    Biased,
    /// Divide by `T − 1`.
    Unbiased,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovEstimator {
    #[default]
    Empirical,
    /// `(1−ρ)S + ρ·μI` with `μ = tr(S)/D` (or 1 when `S = 0`). With no
    /// intensity given, `ρ` is the Ledoit-Wolf analytic choice.
    Shrinkage { intensity: Option<f64> },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub estimator: CovEstimator,
    pub normalization: Normalization,
}

impl EstimatorConfig {
    pub fn shrinkage(intensity: Option<f64>) -> Self {
        EstimatorConfig { estimator: CovEstimator::Shrinkage { intensity }, ..Default::default() }
    }
}

/// Empirical mean and covariance of one epoch.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochStats {
    pub index: usize,
    pub mean: Vec<f64>,
    pub cov: SymPosDef,
    pub length: usize,
}

impl EpochStats {
    pub fn mean_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.mean)
    }
}

fn column_mean(segment: &DMatrixView<'_, f64>) -> DVector<f64> {
    let t = segment.nrows() as f64;
    DVector::from_iterator(segment.ncols(), segment.column_iter().map(|c| c.sum() / t))
}

/// Mean and covariance of a `T×D` block of samples.
pub fn estimate(segment: DMatrixView<'_, f64>, config: &EstimatorConfig) -> Result<(DVector<f64>, SymPosDef)> {
    let (t, d) = segment.shape();
    if t < 2 || d == 0 {
        return Err(Error::DegenerateSegment(format!("need at least 2 samples, got {t}")));
    }
    if segment.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateSegment("non-finite sample".into()));
    }
    let mean = column_mean(&segment);
    let mut centered = segment.into_owned();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let denom = match config.normalization {
        Normalization::Biased => t as f64,
        Normalization::Unbiased => (t - 1) as f64,
    };
    let mut sample = centered.transpose() * &centered / denom;
    crate::spd::symmetrize(&mut sample);

    let cov = match config.estimator {
        CovEstimator::Empirical => {
            if t < d + 1 {
                return Err(Error::DegenerateSegment(format!(
                    "{t} samples cannot give a full-rank {d}x{d} empirical covariance"
                )));
            }
            if let Some(j) = (0..d).find(|&j| sample[(j, j)] <= 0.0) {
                return Err(Error::DegenerateSegment(format!("channel {j} has zero variance")));
            }
            SymPosDef::new(sample).map_err(|e| Error::DegenerateSegment(e.to_string()))?
        }
        CovEstimator::Shrinkage { intensity } => {
            let scale = sample.trace() / d as f64;
            let scale = if scale > 0.0 { scale } else { 1.0 };
            let rho = match intensity {
                Some(rho) if (0.0..=1.0).contains(&rho) => rho,
                Some(rho) => return Err(Error::Config(format!("shrinkage intensity {rho} outside [0, 1]"))),
                None if sample.trace() <= 0.0 => 1.0,
                None => ledoit_wolf_intensity(&centered, &sample, scale, t as f64),
            };
            let target = DMatrix::<f64>::identity(d, d) * scale;
            SymPosDef::new(sample * (1.0 - rho) + target * rho)
                .map_err(|e| Error::DegenerateSegment(format!("shrunk covariance still singular: {e}")))?
        }
    };
    Ok((mean, cov))
}

/// Ledoit-Wolf intensity `min(b̄², d²)/d²` for the scaled-identity target.
fn ledoit_wolf_intensity(centered: &DMatrix<f64>, sample: &DMatrix<f64>, scale: f64, t: f64) -> f64 {
    let d = sample.nrows();
    let dist2 = (sample - DMatrix::<f64>::identity(d, d) * scale).norm_squared();
    if dist2 <= 0.0 {
        return 0.0;
    }
    let mut b_bar2 = 0.0;
    for row in centered.row_iter() {
        let outer = row.transpose() * row;
        b_bar2 += (outer - sample).norm_squared();
    }
    b_bar2 /= t * t;
    b_bar2.min(dist2) / dist2
}

/// Covariance only.
pub fn estimate_cov(segment: DMatrixView<'_, f64>, config: &EstimatorConfig) -> Result<SymPosDef> {
    Ok(estimate(segment, config)?.1)
}

/// Statistics of one epoch, tagged with its index.
pub fn epoch_stats(index: usize, segment: DMatrixView<'_, f64>, config: &EstimatorConfig) -> Result<EpochStats> {
    let length = segment.nrows();
    let (mean, cov) = estimate(segment, config)?;
    Ok(EpochStats { index, mean: mean.iter().copied().collect(), cov, length })
}
