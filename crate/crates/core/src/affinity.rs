//! Affinity propagation: samples exchange responsibility and availability
//! messages until a stable set of exemplars emerges.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::dataset::{Dataset, SampleId};
use crate::partition::Partition;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preference {
    /// Median of the off-diagonal similarities.
    Median,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApConfig {
    /// Weight kept from the previous message, in `[0.5, 1)`.
    pub damping: f64,
    pub max_iters: usize,
    /// Iterations with an unchanged exemplar set needed to stop.
    pub convergence_window: usize,
    pub preference: Preference,
    /// Raise damping by 0.1 (up to 0.9) after every two convergence windows
    /// without a stable exemplar set.
    pub adaptive_damping: bool,
}

const DAMPING_STEP: f64 = 0.1;
const DAMPING_CAP: f64 = 0.9;

impl Default for ApConfig {
    fn default() -> Self {
        Self {
            damping: 0.5,
            max_iters: 200,
            convergence_window: 15,
            preference: Preference::Median,
            adaptive_damping: true,
        }
    }
}

impl ApConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.5..1.0).contains(&self.damping) {
            return Err(Error::InvalidConfig(format!("damping must be in [0.5, 1), got {}", self.damping)));
        }
        if self.convergence_window == 0 || self.max_iters < self.convergence_window {
            return Err(Error::InvalidConfig(
                "need max_iters >= convergence_window >= 1".into(),
            ));
        }
        if let Preference::Value(p) = self.preference {
            if !p.is_finite() {
                return Err(Error::InvalidConfig("preference must be finite".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApStats {
    pub iterations: usize,
    pub converged: bool,
    /// No exemplar emerged; a single fallback exemplar was used.
    pub degenerate_convergence: bool,
    pub exemplars: Vec<SampleId>,
    pub preference: f64,
    /// Damping in effect when the run stopped.
    pub final_damping: f64,
}

#[derive(Debug, Clone)]
pub struct ApRun {
    pub partition: Partition,
    pub stats: ApStats,
}

/// Negative squared Euclidean distances, row-major `n × n`, diagonal set to
/// the preference.
pub fn similarity_matrix(data: &Dataset, preference: Preference) -> (Vec<f64>, f64) {
    let n = data.len();
    let rows: Vec<&[f64]> = data.samples().iter().map(|s| s.features.as_slice()).collect();
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            if i != k {
                s[i * n + k] = -rows[i].iter().zip(rows[k]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            }
        }
    }
    let pref = match preference {
        Preference::Value(p) => p,
        Preference::Median => {
            let mut off: Vec<f64> = (0..n)
                .flat_map(|i| (0..n).filter(move |&k| k != i).map(move |k| (i, k)))
                .map(|(i, k)| s[i * n + k])
                .collect();
            if off.is_empty() {
                0.0
            } else {
                off.sort_by(f64::total_cmp);
                let m = off.len();
                if m % 2 == 1 {
                    off[m / 2]
                } else {
                    0.5 * (off[m / 2 - 1] + off[m / 2])
                }
            }
        }
    };
    for i in 0..n {
        s[i * n + i] = pref;
    }
    (s, pref)
}

/// Perturbs each similarity by a relative amount near machine epsilon so
/// that exactly tied messages cannot oscillate forever.
fn break_ties(s: &mut [f64], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in s.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v += (f64::EPSILON * *v + f64::MIN_POSITIVE * 100.0) * z;
    }
}

pub fn cluster_ap(data: &Dataset, config: &ApConfig) -> Result<ApRun> {
    config.validate()?;
    let n = data.len();
    let (raw, pref) = similarity_matrix(data, config.preference);
    let mut s = raw.clone();
    break_ties(&mut s, 0);
    let mut lam = config.damping;
    let mut since_escalation = 0usize;
    let mut r = vec![0.0; n * n];
    let mut a = vec![0.0; n * n];
    let mut exemplars: Vec<usize> = Vec::new();
    let mut stable = 0usize;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < config.max_iters {
        iterations += 1;
        // Responsibilities.
        for i in 0..n {
            let row = i * n;
            let (mut best, mut best_k, mut second) = (f64::NEG_INFINITY, 0, f64::NEG_INFINITY);
            for k in 0..n {
                let v = a[row + k] + s[row + k];
                if v > best {
                    second = best;
                    best = v;
                    best_k = k;
                } else if v > second {
                    second = v;
                }
            }
            for k in 0..n {
                let competitor = if k == best_k { second } else { best };
                let fresh = s[row + k] - competitor;
                r[row + k] = lam * r[row + k] + (1.0 - lam) * fresh;
            }
        }
        // Availabilities.
        for k in 0..n {
            let mut col = 0.0;
            for i in 0..n {
                let v = r[i * n + k];
                col += if i == k { v } else { v.max(0.0) };
            }
            for i in 0..n {
                let own = r[i * n + k];
                let fresh = if i == k {
                    col - own
                } else {
                    (col - own.max(0.0)).min(0.0)
                };
                a[i * n + k] = lam * a[i * n + k] + (1.0 - lam) * fresh;
            }
        }

        let current: Vec<usize> = (0..n).filter(|&k| r[k * n + k] + a[k * n + k] > 0.0).collect();
        if current == exemplars {
            stable += 1;
        } else {
            stable = 0;
            exemplars = current;
        }
        if !exemplars.is_empty() && stable + 1 >= config.convergence_window {
            converged = true;
            break;
        }
        since_escalation += 1;
        if config.adaptive_damping && since_escalation >= 2 * config.convergence_window && lam < DAMPING_CAP {
            lam = (lam + DAMPING_STEP).min(DAMPING_CAP);
            since_escalation = 0;
        }
    }

    let s = raw;
    let degenerate = exemplars.is_empty();
    if degenerate {
        let mut best = (0usize, f64::NEG_INFINITY);
        for i in 0..n {
            let total: f64 = (0..n).filter(|&k| k != i).map(|k| s[i * n + k]).sum();
            if total > best.1 {
                best = (i, total);
            }
        }
        exemplars = vec![best.0];
    }

    let assignment = (0..n)
        .map(|i| {
            let cluster = match exemplars.binary_search(&i) {
                Ok(rank) => rank,
                Err(_) => {
                    let mut best = (0usize, f64::NEG_INFINITY);
                    for (rank, &k) in exemplars.iter().enumerate() {
                        if s[i * n + k] > best.1 {
                            best = (rank, s[i * n + k]);
                        }
                    }
                    best.0
                }
            };
            (data.samples()[i].id, cluster)
        })
        .collect();

    Ok(ApRun {
        partition: Partition::from_assignment(data, assignment)?,
        stats: ApStats {
            iterations,
            converged,
            degenerate_convergence: degenerate,
            exemplars: exemplars.iter().map(|&k| data.samples()[k].id).collect(),
            preference: pref,
            final_damping: lam,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Sample;

    fn line(xs: &[f64]) -> Dataset {
        Dataset::new(
            xs.iter()
                .enumerate()
                .map(|(i, &x)| Sample::new(i as u64, i as u64, vec![x]))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_sample_is_its_own_exemplar() {
        let run = cluster_ap(&line(&[4.0]), &ApConfig::default()).unwrap();
        assert_eq!(run.partition.n_clusters(), 1);
        assert_eq!(run.stats.exemplars, vec![0]);
    }

    #[test]
    fn median_preference() {
        let (s, p) = similarity_matrix(&line(&[0.0, 1.0, 3.0]), Preference::Median);
        // off-diagonal: -1, -9, -1, -4, -9, -4 -> median of sorted
        // [-9, -9, -4, -4, -1, -1] = -4
        assert_eq!(p, -4.0);
        assert_eq!(s[0], -4.0);
        assert_eq!(s[1], -1.0);
    }

    #[test]
    fn two_groups() {
        let run = cluster_ap(&line(&[0.0, 0.1, 0.2, 10.0, 10.1, 10.2]), &ApConfig::default()).unwrap();
        assert_eq!(run.partition.n_clusters(), 2);
        assert!(run.stats.converged);
        assert_eq!(run.stats.exemplars, vec![1, 4]);
    }

    #[test]
    fn unreachable_preference_falls_back() {
        let cfg = ApConfig { preference: Preference::Value(-1e12), max_iters: 15, ..ApConfig::default() };
        let run = cluster_ap(&line(&[0.0, 1.0, 2.0, 3.0]), &cfg).unwrap();
        assert!(run.stats.degenerate_convergence);
        assert!(!run.stats.converged);
        assert_eq!(run.partition.n_clusters(), 1);
        // middle samples tie on similarity row sum; lowest wins
        assert_eq!(run.stats.exemplars, vec![1]);
    }

    #[test]
    fn duplicates_share_a_cluster() {
        let run = cluster_ap(&line(&[0.0, 0.0, 0.3, 5.0, 5.0, 5.2]), &ApConfig::default()).unwrap();
        let p = &run.partition;
        assert_eq!(p.cluster_of(0), p.cluster_of(1));
        assert_eq!(p.cluster_of(3), p.cluster_of(4));
    }

    #[test]
    fn config_bounds() {
        assert!(ApConfig { damping: 0.4, ..ApConfig::default() }.validate().is_err());
        assert!(ApConfig { damping: 1.0, ..ApConfig::default() }.validate().is_err());
        assert!(ApConfig { max_iters: 10, ..ApConfig::default() }.validate().is_err());
    }
}
