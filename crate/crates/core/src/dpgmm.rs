//! Dirichlet process Gaussian mixture clustering by collapsed Gibbs
//! sampling.
//!
//! Each coordinate carries an independent Normal-Inverse-Gamma prior, so
//! cluster parameters integrate out and every reassignment only needs
//! Student-t predictive densities. A sample joins an existing cluster with
//! weight `n_k * p(x | cluster k)` or opens a new one with weight
//! `alpha * p(x | prior)`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::dataset::{Dataset, SampleId};
use crate::gaussian::VARIANCE_FLOOR;
use crate::partition::{ClusterId, Partition};
use crate::{Error, Result};

/// Per-coordinate Normal-Inverse-Gamma hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NigPrior {
    pub mean: Vec<f64>,
    pub strength: f64,
    pub shape: f64,
    pub scale: Vec<f64>,
}

impl NigPrior {
    /// Weakly informative prior centred on the data: mean = data mean,
    /// strength 0.01, shape 1, scale = per-coordinate data variance.
    pub fn from_data(data: &Dataset) -> Self {
        let n = data.len() as f64;
        let d = data.dim();
        let mut mean = vec![0.0; d];
        for s in data.samples() {
            for (m, x) in mean.iter_mut().zip(&s.features) {
                *m += x / n;
            }
        }
        let mut scale = vec![0.0; d];
        for s in data.samples() {
            for ((v, x), m) in scale.iter_mut().zip(&s.features).zip(&mean) {
                *v += (x - m) * (x - m) / n;
            }
        }
        for v in &mut scale {
            *v = v.max(VARIANCE_FLOOR);
        }
        Self {
            mean,
            strength: 0.01,
            shape: 1.0,
            scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DpgmmConfig {
    /// Concentration (aggregation) parameter.
    pub alpha: f64,
    pub sweeps: usize,
    pub seed: u64,
    /// `None` derives [`NigPrior::from_data`].
    pub prior: Option<NigPrior>,
    /// Clusters in the round-robin initialization, capped at the sample count.
    pub init_clusters: usize,
}

impl Default for DpgmmConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            sweeps: 100,
            seed: 0,
            prior: None,
            init_clusters: 300,
        }
    }
}

impl DpgmmConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidConfig(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.sweeps == 0 {
            return Err(Error::InvalidConfig("sweeps must be >= 1".into()));
        }
        if self.init_clusters == 0 {
            return Err(Error::InvalidConfig("init_clusters must be >= 1".into()));
        }
        if let Some(p) = &self.prior {
            if p.mean.len() != dim || p.scale.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: p.mean.len() });
            }
            if !(p.strength > 0.0 && p.shape > 0.0 && p.scale.iter().all(|&b| b > 0.0)) {
                return Err(Error::InvalidConfig("prior strength, shape and scale must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// Diagnostics from one sampler run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DpgmmStats {
    /// Cluster count after each sweep.
    pub clusters_per_sweep: Vec<usize>,
    /// Largest |sum of normalized assignment probabilities - 1| seen.
    pub max_normalization_error: f64,
    /// Whether every sweep ended with cluster sizes summing to n.
    pub sizes_consistent: bool,
}

#[derive(Debug, Clone)]
pub struct DpgmmRun {
    pub partition: Partition,
    pub stats: DpgmmStats,
}

/// Sufficient statistics and cached Student-t predictive terms of one
/// cluster.
#[derive(Debug, Clone)]
struct Suff {
    n: usize,
    sum: Vec<f64>,
    sumsq: Vec<f64>,
    // per coordinate: location, nu * scale^2, and log-normalizer
    loc: Vec<f64>,
    spread: Vec<f64>,
    log_norm: Vec<f64>,
    half_nu_plus_one: f64,
}

impl Suff {
    fn empty(d: usize, prior: &NigPrior) -> Self {
        let mut s = Self {
            n: 0,
            sum: vec![0.0; d],
            sumsq: vec![0.0; d],
            loc: vec![0.0; d],
            spread: vec![0.0; d],
            log_norm: vec![0.0; d],
            half_nu_plus_one: 0.0,
        };
        s.refresh(prior);
        s
    }

    fn add(&mut self, x: &[f64], prior: &NigPrior) {
        self.n += 1;
        for j in 0..x.len() {
            self.sum[j] += x[j];
            self.sumsq[j] += x[j] * x[j];
        }
        self.refresh(prior);
    }

    fn remove(&mut self, x: &[f64], prior: &NigPrior) {
        self.n -= 1;
        if self.n == 0 {
            self.sum.iter_mut().for_each(|v| *v = 0.0);
            self.sumsq.iter_mut().for_each(|v| *v = 0.0);
        } else {
            for j in 0..x.len() {
                self.sum[j] -= x[j];
                self.sumsq[j] -= x[j] * x[j];
            }
        }
        self.refresh(prior);
    }

    fn refresh(&mut self, prior: &NigPrior) {
        let n = self.n as f64;
        let kappa = prior.strength + n;
        let shape = prior.shape + 0.5 * n;
        let nu = 2.0 * shape;
        let lg = ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu);
        self.half_nu_plus_one = 0.5 * (nu + 1.0);
        for j in 0..self.sum.len() {
            let m0 = prior.mean[j];
            let loc = (prior.strength * m0 + self.sum[j]) / kappa;
            let scatter = (self.sumsq[j] + prior.strength * m0 * m0 - kappa * loc * loc).max(0.0);
            let b = prior.scale[j] + 0.5 * scatter;
            let scale2 = b * (kappa + 1.0) / (shape * kappa);
            self.loc[j] = loc;
            self.spread[j] = nu * scale2;
            self.log_norm[j] = lg - 0.5 * (std::f64::consts::PI * nu * scale2).ln();
        }
    }

    fn ln_predictive(&self, x: &[f64]) -> f64 {
        let mut total = 0.0;
        for j in 0..x.len() {
            let z = x[j] - self.loc[j];
            total += self.log_norm[j] - self.half_nu_plus_one * (z * z / self.spread[j]).ln_1p();
        }
        total
    }
}

/// Normalizes log-weights into probabilities (log-sum-exp).
pub fn normalize_log_weights(log_w: &[f64]) -> Vec<f64> {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

pub fn cluster_dpgmm(data: &Dataset, config: &DpgmmConfig) -> Result<DpgmmRun> {
    config.validate(data.dim())?;
    let prior = config.prior.clone().unwrap_or_else(|| NigPrior::from_data(data));
    let d = data.dim();
    let n = data.len();
    let rows: Vec<&[f64]> = data.samples().iter().map(|s| s.features.as_slice()).collect();

    // Round-robin by sample id.
    let mut by_id: Vec<usize> = (0..n).collect();
    by_id.sort_by_key(|&i| data.samples()[i].id);
    let k0 = config.init_clusters.min(n);
    let mut clusters: Vec<Suff> = vec![Suff::empty(d, &prior); k0];
    let mut z = vec![0usize; n];
    for (rank, &i) in by_id.iter().enumerate() {
        z[i] = rank % k0;
        clusters[rank % k0].add(rows[i], &prior);
    }

    let fresh = Suff::empty(d, &prior);
    let ln_alpha = config.alpha.ln();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut stats = DpgmmStats {
        clusters_per_sweep: Vec::with_capacity(config.sweeps),
        max_normalization_error: 0.0,
        sizes_consistent: true,
    };
    let mut log_w = Vec::new();
    for _ in 0..config.sweeps {
        for i in 0..n {
            let x = rows[i];
            let old = z[i];
            clusters[old].remove(x, &prior);
            if clusters[old].n == 0 {
                clusters.remove(old);
                for zi in z.iter_mut() {
                    if *zi > old {
                        *zi -= 1;
                    }
                }
            }
            log_w.clear();
            log_w.extend(clusters.iter().map(|c| (c.n as f64).ln() + c.ln_predictive(x)));
            log_w.push(ln_alpha + fresh.ln_predictive(x));
            let probs = normalize_log_weights(&log_w);
            let err = (probs.iter().sum::<f64>() - 1.0).abs();
            stats.max_normalization_error = stats.max_normalization_error.max(err);

            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut choice = probs.len() - 1;
            for (k, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    choice = k;
                    break;
                }
            }
            if choice == clusters.len() {
                clusters.push(fresh.clone());
            }
            clusters[choice].add(x, &prior);
            z[i] = choice;
        }
        stats.clusters_per_sweep.push(clusters.len());
        let total: usize = clusters.iter().map(|c| c.n).sum();
        stats.sizes_consistent &= total == n;
    }

    // Renumber clusters by their smallest member id.
    let mut first: BTreeMap<usize, SampleId> = BTreeMap::new();
    for (i, &k) in z.iter().enumerate() {
        let id = data.samples()[i].id;
        first.entry(k).and_modify(|m| *m = (*m).min(id)).or_insert(id);
    }
    let mut order: Vec<(SampleId, usize)> = first.into_iter().map(|(k, m)| (m, k)).collect();
    order.sort();
    let relabel: BTreeMap<usize, ClusterId> = order.iter().enumerate().map(|(new, &(_, k))| (k, new)).collect();
    let assignment = data
        .samples()
        .iter()
        .zip(&z)
        .map(|(s, k)| (s.id, relabel[k]))
        .collect();
    Ok(DpgmmRun {
        partition: Partition::from_assignment(data, assignment)?,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Sample;

    #[test]
    fn single_sample_is_one_cluster() {
        let ds = Dataset::new(vec![Sample::new(3, 0, vec![1.0, 2.0])]).unwrap();
        for alpha in [0.01, 1.0, 100.0] {
            let cfg = DpgmmConfig { alpha, sweeps: 5, ..DpgmmConfig::default() };
            assert_eq!(cluster_dpgmm(&ds, &cfg).unwrap().partition.n_clusters(), 1);
        }
    }

    #[test]
    fn normalization() {
        let p = normalize_log_weights(&[-1000.0, -1001.0, -2000.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[0] > p[1] && p[2] == 0.0);
    }

    // Student-t predictive against a direct evaluation of the textbook
    // posterior updates.
    #[test]
    fn predictive_matches_closed_form() {
        let prior = NigPrior { mean: vec![0.5], strength: 0.3, shape: 2.0, scale: vec![1.5] };
        let pts = [1.0, 2.0, -0.5, 0.25];
        let mut s = Suff::empty(1, &prior);
        for p in pts {
            s.add(&[p], &prior);
        }
        let n = pts.len() as f64;
        let mean = pts.iter().sum::<f64>() / n;
        let ss: f64 = pts.iter().map(|p| (p - mean).powi(2)).sum();
        let kn = 0.3 + n;
        let mn = (0.3 * 0.5 + n * mean) / kn;
        let an = 2.0 + n / 2.0;
        let bn = 1.5 + 0.5 * ss + 0.3 * n * (mean - 0.5f64).powi(2) / (2.0 * kn);
        let nu = 2.0 * an;
        let s2 = bn * (kn + 1.0) / (an * kn);
        let x: f64 = 0.7;
        let expected = ln_gamma((nu + 1.0) / 2.0) - ln_gamma(nu / 2.0)
            - 0.5 * (nu * std::f64::consts::PI * s2).ln()
            - (nu + 1.0) / 2.0 * (1.0 + (x - mn).powi(2) / (nu * s2)).ln();
        assert!((s.ln_predictive(&[x]) - expected).abs() < 1e-12);
        s.remove(&[0.25], &prior);
        s.add(&[0.25], &prior);
        assert!((s.ln_predictive(&[x]) - expected).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_config() {
        let ds = Dataset::new(vec![Sample::new(0, 0, vec![1.0])]).unwrap();
        let cfg = DpgmmConfig { alpha: 0.0, ..DpgmmConfig::default() };
        assert!(cluster_dpgmm(&ds, &cfg).is_err());
        let cfg = DpgmmConfig { sweeps: 0, ..DpgmmConfig::default() };
        assert!(cluster_dpgmm(&ds, &cfg).is_err());
    }
}
