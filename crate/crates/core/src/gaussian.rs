//! Diagonal-covariance Gaussian models shared by the hierarchical-type
//! clustering engines: fitting, log-likelihoods, the symmetric KL distance
//! used to pick merge candidates and the BIC merge test.

use std::f64::consts::PI;

use crate::dataset::Dataset;
use crate::partition::GaussianCluster;
use crate::{Error, Result};

/// Lower bound applied to every variance entry.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Default BIC penalty weight.
pub const DEFAULT_LAMBDA: f64 = 1.0;

/// A Gaussian with diagonal covariance, fitted by maximum likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    variance: Vec<f64>,
    count: usize,
    // -0.5 * sum(ln(2 pi var)), cached for density evaluation
    log_norm: f64,
}

impl DiagGaussian {
    /// Builds a Gaussian from explicit parameters. Variances below
    /// [`VARIANCE_FLOOR`] are raised to it.
    pub fn new(mean: Vec<f64>, variance: Vec<f64>, count: usize) -> Result<Self> {
        if mean.len() != variance.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                got: variance.len(),
            });
        }
        if mean.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        let variance: Vec<f64> = variance.into_iter().map(|v| v.max(VARIANCE_FLOOR)).collect();
        let log_norm = -0.5 * variance.iter().map(|v| (2.0 * PI * v).ln()).sum::<f64>();
        Ok(Self {
            mean,
            variance,
            count,
            log_norm,
        })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> &[f64] {
        &self.variance
    }

    /// Number of samples the model was fitted on.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Log density without a dimension check; callers guarantee `x.len() == dim`.
    pub(crate) fn ln_density(&self, x: &[f64]) -> f64 {
        let quad: f64 = x
            .iter()
            .zip(&self.mean)
            .zip(&self.variance)
            .map(|((x, m), v)| (x - m) * (x - m) / v)
            .sum();
        self.log_norm - 0.5 * quad
    }
}

/// Fits a diagonal Gaussian: per-coordinate mean and population variance,
/// floored at [`VARIANCE_FLOOR`].
pub fn fit_gaussian<'a, I>(samples: I) -> Result<DiagGaussian>
where
    I: IntoIterator<Item = &'a [f64]>,
    I::IntoIter: Clone,
{
    let iter = samples.into_iter();
    let mut count = 0usize;
    let mut sum: Vec<f64> = Vec::new();
    for x in iter.clone() {
        if count == 0 {
            sum = vec![0.0; x.len()];
        } else if x.len() != sum.len() {
            return Err(Error::DimensionMismatch {
                expected: sum.len(),
                got: x.len(),
            });
        }
        for (s, v) in sum.iter_mut().zip(x) {
            *s += v;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyCluster);
    }
    let n = count as f64;
    let mean: Vec<f64> = sum.into_iter().map(|s| s / n).collect();
    let mut sq = vec![0.0; mean.len()];
    for x in iter {
        for ((acc, v), m) in sq.iter_mut().zip(x).zip(&mean) {
            *acc += (v - m) * (v - m);
        }
    }
    let variance = sq.into_iter().map(|s| s / n).collect();
    DiagGaussian::new(mean, variance, count)
}

/// Log density of `x` under `g`.
pub fn log_likelihood(g: &DiagGaussian, x: &[f64]) -> Result<f64> {
    if x.len() != g.dim() {
        return Err(Error::DimensionMismatch {
            expected: g.dim(),
            got: x.len(),
        });
    }
    Ok(g.ln_density(x))
}

/// Symmetric Kullback-Leibler distance KL(a||b) + KL(b||a).
///
/// Each coordinate contributes
/// `0.5 * (va/vb + vb/va - 2 + (ma - mb)^2 * (1/va + 1/vb))`, which is
/// written so that swapping the arguments performs the same floating-point
/// operations; the result is exactly symmetric.
pub fn kl2_distance(a: &DiagGaussian, b: &DiagGaussian) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(kl2_unchecked(a, b))
}

pub(crate) fn kl2_unchecked(a: &DiagGaussian, b: &DiagGaussian) -> f64 {
    let mut total = 0.0;
    for j in 0..a.mean.len() {
        let (va, vb) = (a.variance[j], b.variance[j]);
        let d = a.mean[j] - b.mean[j];
        let ratio = (va / vb + vb / va - 2.0).max(0.0);
        total += 0.5 * (ratio + d * d * (1.0 / va + 1.0 / vb));
    }
    total
}

/// Summed log-likelihood of the cluster's own members under its model.
pub fn cluster_log_likelihood(cluster: &GaussianCluster, data: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    for &id in cluster.members() {
        total += log_likelihood(cluster.gaussian(), data.features(id)?)?;
    }
    Ok(total)
}

/// BIC merge test.
///
/// Returns `logL(a) + logL(b) - logL(a ∪ b) - (λ/2) · 2d · ln(n_a + n_b)`;
/// the merge is worthwhile iff the value is negative.
pub fn merge_gain(
    a: &GaussianCluster,
    b: &GaussianCluster,
    data: &Dataset,
    lambda: f64,
) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidConfig(format!("lambda must be > 0, got {lambda}")));
    }
    if !a.members().is_disjoint(b.members()) {
        return Err(Error::OverlappingClusters(a.id(), b.id()));
    }
    let merged_ids: Vec<u64> = a.members().iter().chain(b.members()).copied().collect();
    let rows = merged_ids
        .iter()
        .map(|&id| data.features(id))
        .collect::<Result<Vec<_>>>()?;
    let merged = fit_gaussian(rows.iter().copied())?;
    let merged_ll: f64 = rows.iter().map(|x| merged.ln_density(x)).sum();
    let split_ll = cluster_log_likelihood(a, data)? + cluster_log_likelihood(b, data)?;
    let params = 2.0 * merged.dim() as f64;
    let n = merged_ids.len() as f64;
    Ok(split_ll - merged_ll - 0.5 * lambda * params * n.ln())
}
