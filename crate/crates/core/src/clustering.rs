//! Agglomerative engines over diagonal-Gaussian clusters.
//!
//! Both engines merge the KL2-closest pair of clusters while the BIC merge
//! test accepts, and stop at the first rejection. The diarization engine
//! additionally alternates resegmentation and retraining until the
//! assignment is stable before each merge; with locking, every plant group
//! is kept in a single cluster throughout.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::dataset::{Dataset, SampleId};
use crate::gaussian::{kl2_unchecked, merge_gain, DiagGaussian, DEFAULT_LAMBDA};
use crate::partition::{ClusterId, GaussianCluster, Partition};
use crate::{Error, Result};

/// How the initial over-segmentation is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// One singleton cluster per sample.
    PerImage,
    /// One cluster per plant group.
    PerPlantGroup,
    /// Samples dealt round-robin, in id order, into `k` clusters.
    FixedCount(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterConfig {
    /// BIC penalty weight.
    pub lambda: f64,
    /// Cap on resegment/retrain rounds per stabilization.
    pub max_inner_iters: usize,
    /// Keep plant groups together during resegmentation.
    pub locking: bool,
    pub init_mode: InitMode,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            max_inner_iters: 100,
            locking: false,
            init_mode: InitMode::PerImage,
        }
    }
}

impl ClusterConfig {
    /// Plant-group initialization with lock enforcement.
    pub fn locked() -> Self {
        Self {
            locking: true,
            init_mode: InitMode::PerPlantGroup,
            ..Self::default()
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidConfig(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if self.max_inner_iters == 0 {
            return Err(Error::InvalidConfig("max_inner_iters must be >= 1".into()));
        }
        if self.locking && self.init_mode != InitMode::PerPlantGroup {
            return Err(Error::InvalidConfig(
                "locking requires per-plant-group initialization".into(),
            ));
        }
        Ok(())
    }
}

/// Counters describing one engine run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RunStats {
    pub initial_clusters: usize,
    pub merges_accepted: usize,
    pub merges_rejected: usize,
    /// Resegment/retrain rounds summed over all stabilizations.
    pub inner_iterations: usize,
    /// Stabilizations that stopped at the iteration cap.
    pub capped_stabilizations: usize,
}

#[derive(Debug, Clone)]
pub struct ClusterRun {
    pub partition: Partition,
    pub stats: RunStats,
}

pub fn initialize(data: &Dataset, config: &ClusterConfig) -> Result<Partition> {
    let groups: Vec<Vec<SampleId>> = match config.init_mode {
        InitMode::PerImage => data.samples().iter().map(|s| vec![s.id]).collect(),
        InitMode::PerPlantGroup => data.plant_groups().into_values().collect(),
        InitMode::FixedCount(k) => {
            if k == 0 || k > data.len() {
                return Err(Error::InvalidConfig(format!(
                    "fixed-count init needs 1 <= k <= {}, got {k}",
                    data.len()
                )));
            }
            let ids: BTreeSet<SampleId> = data.samples().iter().map(|s| s.id).collect();
            let mut groups = vec![Vec::new(); k];
            for (i, id) in ids.into_iter().enumerate() {
                groups[i % k].push(id);
            }
            groups
        }
    };
    Partition::from_groups(data, groups)
}

/// Index of the cluster maximizing `score`; ties go to the lowest id.
fn argmax_cluster<'a>(
    clusters: impl Iterator<Item = &'a GaussianCluster>,
    score: impl Fn(&DiagGaussian) -> f64,
) -> Option<ClusterId> {
    let mut best: Option<(ClusterId, f64)> = None;
    for k in clusters {
        let s = score(k.gaussian());
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((k.id(), s));
        }
    }
    best.map(|(id, _)| id)
}

/// Reassigns every sample to its maximum-likelihood cluster. Cluster models
/// are left as they were; clusters that lose all members are removed.
pub fn segment_clusters(partition: &Partition, data: &Dataset) -> Partition {
    let mut next = partition.clone();
    for s in data.samples() {
        if let Some(best) = argmax_cluster(partition.clusters().values(), |g| g.ln_density(&s.features)) {
            next.move_sample(s.id, best);
        }
    }
    next.drop_empty();
    next
}

/// Refits every cluster's Gaussian on its current members.
pub fn retrain_clusters(partition: &Partition, data: &Dataset) -> Result<Partition> {
    let mut next = partition.clone();
    for k in next.clusters_mut().values_mut() {
        *k = GaussianCluster::fit(k.id(), k.members().clone(), data)?;
    }
    Ok(next)
}

/// Reunites split plant groups: each split group moves wholesale into the
/// cluster (among those holding its samples) with the highest summed
/// log-likelihood over the group.
pub fn enforce_locks(partition: &Partition, data: &Dataset) -> Partition {
    let mut next = partition.clone();
    for ids in data.plant_groups().into_values() {
        let holding: BTreeSet<ClusterId> = ids
            .iter()
            .filter_map(|&id| partition.cluster_of(id))
            .collect();
        if holding.len() < 2 {
            continue;
        }
        let rows: Vec<&[f64]> = ids
            .iter()
            .map(|&id| data.features(id).expect("group ids come from the dataset"))
            .collect();
        let target = argmax_cluster(
            holding.iter().filter_map(|c| partition.cluster(*c)),
            |g| rows.iter().map(|x| g.ln_density(x)).sum(),
        )
        .expect("at least two candidate clusters");
        for &id in &ids {
            next.move_sample(id, target);
        }
    }
    next.drop_empty();
    next
}

/// Alternates resegmentation (plus lock enforcement when enabled) and
/// retraining until no assignment changes or the iteration cap is hit.
/// Returns the stabilized partition and the number of rounds run.
pub fn stabilize(
    partition: &Partition,
    data: &Dataset,
    config: &ClusterConfig,
) -> Result<(Partition, usize)> {
    let mut current = partition.clone();
    for round in 1..=config.max_inner_iters {
        let mut next = segment_clusters(&current, data);
        if config.locking {
            next = enforce_locks(&next, data);
        }
        let changed = next.assignment() != current.assignment();
        current = retrain_clusters(&next, data)?;
        if !changed {
            return Ok((current, round));
        }
    }
    Ok((current, config.max_inner_iters))
}

/// KL2 distances between live clusters, recomputed only for clusters whose
/// model changed since the last query.
struct PairDistances {
    models: BTreeMap<ClusterId, DiagGaussian>,
    dist: BTreeMap<ClusterId, BTreeMap<ClusterId, f64>>,
}

impl PairDistances {
    fn new() -> Self {
        Self {
            models: BTreeMap::new(),
            dist: BTreeMap::new(),
        }
    }

    fn sync(&mut self, partition: &Partition) {
        let live = partition.clusters();
        self.models.retain(|id, _| live.contains_key(id));
        self.dist.retain(|id, _| live.contains_key(id));
        let stale: BTreeSet<ClusterId> = live
            .iter()
            .filter(|(id, k)| self.models.get(id) != Some(k.gaussian()))
            .map(|(&id, _)| id)
            .collect();
        for row in self.dist.values_mut() {
            row.retain(|b, _| live.contains_key(b) && !stale.contains(b));
        }
        for &id in &stale {
            self.models.insert(id, live[&id].gaussian().clone());
            self.dist.insert(id, BTreeMap::new());
        }
        // Row `a` holds distances to every b > a.
        for (&a, ga) in &self.models {
            let row = self.dist.get_mut(&a).expect("row per live model");
            for (&b, gb) in self.models.range(a + 1..) {
                row.entry(b).or_insert_with(|| kl2_unchecked(ga, gb));
            }
        }
    }

    fn closest(&self) -> Option<(ClusterId, ClusterId, f64)> {
        let mut best: Option<(ClusterId, ClusterId, f64)> = None;
        for (&a, row) in &self.dist {
            for (&b, &d) in row {
                if best.is_none_or(|(_, _, bd)| d < bd) {
                    best = Some((a, b, d));
                }
            }
        }
        best
    }
}

/// The KL2-closest pair of clusters `(a, b, distance)` with `a < b`; ties go
/// to the lexicographically smallest pair.
pub fn closest_pair(partition: &Partition) -> Option<(ClusterId, ClusterId, f64)> {
    let mut cache = PairDistances::new();
    cache.sync(partition);
    cache.closest()
}

/// Plain agglomerative clustering: merge the closest pair while the BIC
/// test accepts, no resegmentation.
pub fn cluster_hierarchical(data: &Dataset, config: &ClusterConfig) -> Result<ClusterRun> {
    config.validate()?;
    let mut partition = initialize(data, config)?;
    let mut stats = RunStats {
        initial_clusters: partition.n_clusters(),
        ..RunStats::default()
    };
    let mut cache = PairDistances::new();
    loop {
        cache.sync(&partition);
        let Some((a, b, _)) = cache.closest() else { break };
        if !try_merge(&mut partition, a, b, data, config, &mut stats)? {
            break;
        }
    }
    Ok(ClusterRun { partition, stats })
}

/// Diarization clustering: stabilize, then merge the closest pair while the
/// BIC test accepts. With `config.locking` this is the locked variant.
pub fn cluster_diarization(data: &Dataset, config: &ClusterConfig) -> Result<ClusterRun> {
    config.validate()?;
    let mut partition = initialize(data, config)?;
    let mut stats = RunStats {
        initial_clusters: partition.n_clusters(),
        ..RunStats::default()
    };
    let mut cache = PairDistances::new();
    loop {
        let (stable, rounds) = stabilize(&partition, data, config)?;
        partition = stable;
        stats.inner_iterations += rounds;
        if rounds == config.max_inner_iters {
            stats.capped_stabilizations += 1;
        }
        cache.sync(&partition);
        let Some((a, b, _)) = cache.closest() else { break };
        if !try_merge(&mut partition, a, b, data, config, &mut stats)? {
            break;
        }
    }
    Ok(ClusterRun { partition, stats })
}

fn try_merge(
    partition: &mut Partition,
    a: ClusterId,
    b: ClusterId,
    data: &Dataset,
    config: &ClusterConfig,
    stats: &mut RunStats,
) -> Result<bool> {
    let (ka, kb) = (
        partition.cluster(a).expect("closest pair is live"),
        partition.cluster(b).expect("closest pair is live"),
    );
    if merge_gain(ka, kb, data, config.lambda)? < 0.0 {
        partition.merge(a, b, data)?;
        stats.merges_accepted += 1;
        Ok(true)
    } else {
        stats.merges_rejected += 1;
        Ok(false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Sample;

    fn ds(points: &[(u64, u64, &[f64])]) -> Dataset {
        Dataset::new(
            points
                .iter()
                .map(|&(id, g, x)| Sample::new(id, g, x.to_vec()))
                .collect(),
        )
        .unwrap()
    }

    fn line(n: u64, groups: &[u64]) -> Dataset {
        Dataset::new(
            (0..n)
                .map(|i| Sample::new(i, groups[i as usize], vec![i as f64 * 0.1]))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn initialize_modes() {
        let data = line(6, &[1, 1, 2, 2, 2, 3]);
        let p = initialize(&data, &ClusterConfig::default()).unwrap();
        assert_eq!(p.n_clusters(), 6);
        assert!(p.clusters().values().all(|k| k.count() == 1));

        let p = initialize(&data, &ClusterConfig::locked()).unwrap();
        let sizes: Vec<usize> = p.sizes().into_values().collect();
        assert_eq!(sizes, vec![2, 3, 1]);

        let cfg = ClusterConfig {
            init_mode: InitMode::FixedCount(7),
            ..ClusterConfig::default()
        };
        assert!(initialize(&data, &cfg).is_err());
    }

    #[test]
    fn fixed_count_300_of_371() {
        let data = Dataset::new(
            (0..371)
                .map(|i| Sample::new(i, i, vec![(i % 17) as f64]))
                .collect(),
        )
        .unwrap();
        let cfg = ClusterConfig {
            init_mode: InitMode::FixedCount(300),
            ..ClusterConfig::default()
        };
        let p = initialize(&data, &cfg).unwrap();
        assert_eq!(p.n_clusters(), 300);
        assert!(p.sizes().values().all(|&s| s == 1 || s == 2));
        assert_eq!(p.cluster_of(0), p.cluster_of(300));
    }

    #[test]
    fn segment_prefers_near_cluster_and_lowest_id_on_ties() {
        let data = ds(&[(0, 0, &[0.0]), (1, 1, &[0.1]), (2, 2, &[10.0]), (3, 3, &[10.1])]);
        let p = Partition::from_groups(&data, vec![vec![0, 1], vec![2, 3]]).unwrap();
        let s = segment_clusters(&p, &data);
        assert_eq!(s.assignment(), p.assignment());

        // Two clusters with identical models: everything lands in the lower id.
        let twin = ds(&[(0, 0, &[0.0]), (1, 1, &[1.0]), (2, 2, &[0.0]), (3, 3, &[1.0])]);
        let p = Partition::from_groups(&twin, vec![vec![2, 3], vec![0, 1]]).unwrap();
        let s = segment_clusters(&p, &twin);
        assert_eq!(s.n_clusters(), 1);
        assert!(s.assignment().values().all(|&c| c == 0));
    }

    #[test]
    fn retrain_refits_on_members() {
        let data = ds(&[(0, 0, &[0.0]), (1, 1, &[1.0]), (2, 2, &[100.0])]);
        let p = Partition::from_groups(&data, vec![vec![0, 1], vec![2]]).unwrap();
        let same = retrain_clusters(&p, &data).unwrap();
        assert_eq!(same, p);
        let mut moved = p.clone();
        moved.move_sample(2, 0);
        moved.drop_empty();
        let r = retrain_clusters(&moved, &data).unwrap();
        assert!(r.cluster(0).unwrap().mean()[0] > p.cluster(0).unwrap().mean()[0]);
    }

    #[test]
    fn locks_follow_summed_log_likelihood() {
        // Cluster 0 ~ N(0, 1), cluster 1 ~ N(5, 1). Group 7 has two samples
        // near 0 (in cluster 0) and one at 3 (in cluster 1).
        // Summed log-density: cluster 0 -> -(0.01+0.04+9)/2 - 3c,
        // cluster 1 -> -(24.01+23.04+4)/2 - 3c, so cluster 0 wins.
        let data = ds(&[
            (0, 7, &[0.1]),
            (1, 7, &[-0.2]),
            (2, 7, &[3.0]),
            (3, 1, &[-1.0]),
            (4, 2, &[1.0]),
            (5, 3, &[4.0]),
            (6, 4, &[6.0]),
        ]);
        let p = Partition::from_groups(&data, vec![vec![0, 1, 3, 4], vec![2, 5, 6]]).unwrap();
        let locked = enforce_locks(&p, &data);
        assert_eq!(locked.cluster_of(2), Some(0));
        assert!(locked.split_groups(&data).is_empty());

        let together = Partition::from_groups(&data, vec![vec![0, 1, 2, 3, 4], vec![5, 6]]).unwrap();
        assert_eq!(enforce_locks(&together, &data), together);
    }

    #[test]
    fn stabilize_fixpoint_returns_after_one_round() {
        let data = ds(&[(0, 0, &[0.0]), (1, 1, &[0.2]), (2, 2, &[9.0]), (3, 3, &[9.3])]);
        let p = Partition::from_groups(&data, vec![vec![0, 1], vec![2, 3]]).unwrap();
        let (s, rounds) = stabilize(&p, &data, &ClusterConfig::default()).unwrap();
        assert_eq!(rounds, 1);
        assert_eq!(s, p);
    }

    #[test]
    fn stabilize_respects_cap() {
        let data = ds(&[(0, 0, &[0.0]), (1, 1, &[0.2]), (2, 2, &[9.0]), (3, 3, &[9.3])]);
        let p = Partition::from_groups(&data, vec![vec![0, 2], vec![1, 3]]).unwrap();
        let cfg = ClusterConfig {
            max_inner_iters: 1,
            ..ClusterConfig::default()
        };
        let (_, rounds) = stabilize(&p, &data, &cfg).unwrap();
        assert_eq!(rounds, 1);
    }

    #[test]
    fn degenerate_inputs() {
        let one = ds(&[(5, 0, &[1.0, 2.0])]);
        let h = cluster_hierarchical(&one, &ClusterConfig::default()).unwrap();
        assert_eq!(h.partition.n_clusters(), 1);
        assert_eq!(h.stats.merges_accepted + h.stats.merges_rejected, 0);
        let d = cluster_diarization(&one, &ClusterConfig::default()).unwrap();
        assert_eq!(d.partition.n_clusters(), 1);

        let same = ds(&[(0, 0, &[1.0]), (1, 1, &[1.0]), (2, 2, &[1.0]), (3, 3, &[1.0])]);
        let h = cluster_hierarchical(&same, &ClusterConfig::default()).unwrap();
        assert_eq!(h.partition.n_clusters(), 1);
    }

    #[test]
    fn locking_requires_group_init() {
        let cfg = ClusterConfig {
            locking: true,
            ..ClusterConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(ClusterConfig::default().with_lambda(0.0).validate().is_err());
    }

    #[test]
    fn closest_pair_scans_all_pairs() {
        let data = ds(&[(0, 0, &[0.0]), (1, 1, &[5.0]), (2, 2, &[5.5]), (3, 3, &[20.0])]);
        let p = initialize(&data, &ClusterConfig::default()).unwrap();
        let (a, b, d) = closest_pair(&p).unwrap();
        assert_eq!((a, b), (1, 2));
        assert!(d > 0.0);
    }
}
