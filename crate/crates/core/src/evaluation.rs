//! DScore and pairwise clustering metrics.
//!
//! The DScore maps every cluster to its dominant class, then scores each
//! class by the purity of its clusters weighted by how much of the class
//! they hold, divided by how many clusters the class was split into. The
//! final score averages the class scores, so every class counts equally.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::dataset::{ClassId, SampleId};
use crate::partition::{ClusterId, Partition};
use crate::{Error, Result};

/// A cluster assignment together with ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPartition {
    assignment: BTreeMap<SampleId, ClusterId>,
    labels: BTreeMap<SampleId, ClassId>,
    // cluster -> class -> count
    table: BTreeMap<ClusterId, BTreeMap<ClassId, usize>>,
    class_sizes: BTreeMap<ClassId, usize>,
}

impl LabeledPartition {
    /// Labels of unassigned samples are ignored; every assigned sample must
    /// be labeled.
    pub fn new(
        assignment: BTreeMap<SampleId, ClusterId>,
        labels: &BTreeMap<SampleId, ClassId>,
    ) -> Result<Self> {
        let mut table: BTreeMap<ClusterId, BTreeMap<ClassId, usize>> = BTreeMap::new();
        let mut class_sizes: BTreeMap<ClassId, usize> = BTreeMap::new();
        let mut kept = BTreeMap::new();
        for (&s, &k) in &assignment {
            let &c = labels.get(&s).ok_or(Error::MissingLabel(s))?;
            *table.entry(k).or_default().entry(c).or_default() += 1;
            *class_sizes.entry(c).or_default() += 1;
            kept.insert(s, c);
        }
        if class_sizes.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self {
            assignment,
            labels: kept,
            table,
            class_sizes,
        })
    }

    pub fn from_partition(partition: &Partition, labels: &BTreeMap<SampleId, ClassId>) -> Result<Self> {
        Self::new(partition.assignment().clone(), labels)
    }

    pub fn assignment(&self) -> &BTreeMap<SampleId, ClusterId> {
        &self.assignment
    }

    pub fn labels(&self) -> &BTreeMap<SampleId, ClassId> {
        &self.labels
    }

    pub fn classes(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.class_sizes.keys().copied()
    }

    pub fn n_clusters(&self) -> usize {
        self.table.len()
    }

    fn cluster_size(&self, k: ClusterId) -> usize {
        self.table.get(&k).map_or(0, |row| row.values().sum())
    }

    fn count(&self, k: ClusterId, c: ClassId) -> usize {
        self.table.get(&k).and_then(|row| row.get(&c)).copied().unwrap_or(0)
    }
}

/// Fraction of cluster `k` belonging to class `c`.
pub fn purity(k: ClusterId, c: ClassId, labeled: &LabeledPartition) -> Result<f64> {
    let n = labeled.cluster_size(k);
    if n == 0 {
        return Err(Error::EmptyCluster);
    }
    Ok(labeled.count(k, c) as f64 / n as f64)
}

/// Dominant class per cluster; ties go to the lowest class id.
pub fn assign_clusters_to_classes(labeled: &LabeledPartition) -> BTreeMap<ClusterId, ClassId> {
    labeled
        .table
        .iter()
        .map(|(&k, row)| {
            let mut best = (0, 0usize);
            for (&c, &n) in row {
                if n > best.1 {
                    best = (c, n);
                }
            }
            (k, best.0)
        })
        .collect()
}

fn score_with(c: ClassId, labeled: &LabeledPartition, mapping: &BTreeMap<ClusterId, ClassId>) -> Result<f64> {
    let n_c = *labeled.class_sizes.get(&c).ok_or(Error::ClassAbsent(c))?;
    let mut sum = 0.0;
    let mut owned = 0usize;
    for (&k, _) in mapping.iter().filter(|(_, &mc)| mc == c) {
        let n_kc = labeled.count(k, c) as f64;
        sum += purity(k, c, labeled)? * n_kc / n_c as f64;
        owned += 1;
    }
    Ok(if owned == 0 { 0.0 } else { sum / owned as f64 })
}

/// Score of one class: purity of each cluster mapped to `c`, weighted by
/// the share of `c` it holds, summed and divided by the number of such
/// clusters. Classes that win no cluster score 0.
pub fn class_score(c: ClassId, labeled: &LabeledPartition) -> Result<f64> {
    score_with(c, labeled, &assign_clusters_to_classes(labeled))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairwiseMetrics {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub true_negatives: u64,
}

fn pairs(n: usize) -> u64 {
    let n = n as u64;
    n * n.saturating_sub(1) / 2
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Pair-counting precision, recall, accuracy and F1 from the
/// cluster × class contingency table.
pub fn pairwise_metrics(labeled: &LabeledPartition) -> Result<PairwiseMetrics> {
    let n = labeled.assignment.len();
    if n < 2 {
        return Err(Error::TooFewSamples);
    }
    let tp: u64 = labeled.table.values().flat_map(|row| row.values()).map(|&m| pairs(m)).sum();
    let same_cluster: u64 = labeled.table.values().map(|row| pairs(row.values().sum())).sum();
    let same_class: u64 = labeled.class_sizes.values().map(|&m| pairs(m)).sum();
    let fp = same_cluster - tp;
    let fn_ = same_class - tp;
    let tn = pairs(n) - tp - fp - fn_;
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(PairwiseMetrics {
        precision,
        recall,
        accuracy: ratio(tp + tn, pairs(n)),
        f1,
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        true_negatives: tn,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DScoreReport {
    pub dscore: f64,
    pub per_class_scores: BTreeMap<ClassId, f64>,
    pub cluster_to_class: BTreeMap<ClusterId, ClassId>,
    /// `None` for single-sample inputs.
    pub pairwise: Option<PairwiseMetrics>,
    pub n_clusters: usize,
}

pub fn dscore(labeled: &LabeledPartition) -> Result<DScoreReport> {
    let mapping = assign_clusters_to_classes(labeled);
    let per_class_scores = labeled
        .classes()
        .map(|c| Ok((c, score_with(c, labeled, &mapping)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let dscore = per_class_scores.values().sum::<f64>() / per_class_scores.len() as f64;
    let pairwise = match pairwise_metrics(labeled) {
        Ok(m) => Some(m),
        Err(Error::TooFewSamples) => None,
        Err(e) => return Err(e),
    };
    Ok(DScoreReport {
        dscore,
        per_class_scores,
        cluster_to_class: mapping,
        pairwise,
        n_clusters: labeled.n_clusters(),
    })
}

/// Classes whose samples all sit in one cluster holding nothing else.
pub fn perfectly_clustered(labeled: &LabeledPartition) -> BTreeSet<ClassId> {
    labeled
        .classes()
        .filter(|&c| {
            let holders: Vec<_> = labeled.table.iter().filter(|(_, row)| row.contains_key(&c)).collect();
            holders.len() == 1 && holders[0].1.len() == 1
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Builds a labeled partition from `(cluster, class, count)` triples.
    pub(crate) fn build(cells: &[(ClusterId, ClassId, usize)]) -> LabeledPartition {
        let mut assignment = BTreeMap::new();
        let mut labels = BTreeMap::new();
        let mut id = 0u64;
        for &(k, c, n) in cells {
            for _ in 0..n {
                assignment.insert(id, k);
                labels.insert(id, c);
                id += 1;
            }
        }
        LabeledPartition::new(assignment, &labels).unwrap()
    }

    #[test]
    fn purity_examples() {
        let lp = build(&[(0, 1, 7), (0, 2, 2), (1, 2, 4)]);
        assert!((purity(0, 1, &lp).unwrap() - 7.0 / 9.0).abs() < 1e-15);
        assert_eq!(purity(1, 2, &lp).unwrap(), 1.0);
        assert_eq!(purity(1, 1, &lp).unwrap(), 0.0);
        assert!(matches!(purity(9, 1, &lp), Err(Error::EmptyCluster)));
    }

    #[test]
    fn majority_mapping_and_ties() {
        let lp = build(&[(0, 1, 7), (0, 2, 2), (1, 1, 3), (1, 2, 3), (2, 5, 4)]);
        let m = assign_clusters_to_classes(&lp);
        assert_eq!(m[&0], 1);
        assert_eq!(m[&1], 1);
        assert_eq!(m[&2], 5);
    }

    #[test]
    fn class_one_of_dscore_figure() {
        let lp = build(&[(0, 1, 7), (0, 2, 2), (1, 1, 10), (1, 3, 1)]);
        let s = class_score(1, &lp).unwrap();
        let expected = (7.0 / 9.0 * 7.0 / 17.0 + 10.0 / 11.0 * 10.0 / 17.0) / 2.0;
        assert!((s - expected).abs() < 1e-15);
        assert!((s - 0.43).abs() < 0.005);
        assert!(matches!(class_score(42, &lp), Err(Error::ClassAbsent(42))));
        // Classes 2 and 3 win no cluster.
        assert_eq!(class_score(2, &lp).unwrap(), 0.0);
    }

    #[test]
    fn splitting_a_pure_class_halves_its_score() {
        let whole = build(&[(0, 1, 10), (1, 2, 5)]);
        assert_eq!(class_score(1, &whole).unwrap(), 1.0);
        let split = build(&[(0, 1, 5), (2, 1, 5), (1, 2, 5)]);
        assert_eq!(class_score(1, &split).unwrap(), 0.5);
    }

    #[test]
    fn dscore_averages_classes() {
        let perfect = build(&[(0, 1, 3), (1, 2, 4), (2, 3, 1)]);
        let r = dscore(&perfect).unwrap();
        assert_eq!(r.dscore, 1.0);
        assert_eq!(perfectly_clustered(&perfect).len(), 3);

        // All singletons: each class scores 1/m.
        let singles: Vec<(ClusterId, ClassId, usize)> =
            (0..5).map(|k| (k, 0, 1)).chain((5..7).map(|k| (k, 1, 1))).collect();
        let r = dscore(&build(&singles)).unwrap();
        assert!((r.per_class_scores[&0] - 0.2).abs() < 1e-15);
        assert!((r.per_class_scores[&1] - 0.5).abs() < 1e-15);
        assert!((r.dscore - 0.35).abs() < 1e-15);

        // Averaging arithmetic: {0.43, 0.13} -> 0.28
        assert!(((0.43 + 0.13) / 2.0 - 0.28f64).abs() < 1e-12);
    }

    #[test]
    fn pairwise_examples() {
        let perfect = build(&[(0, 1, 3), (1, 2, 4)]);
        let m = pairwise_metrics(&perfect).unwrap();
        assert_eq!((m.precision, m.recall, m.accuracy, m.f1), (1.0, 1.0, 1.0, 1.0));

        let m_size = 6;
        let giant = build(&[(0, 1, m_size), (0, 2, m_size)]);
        let m = pairwise_metrics(&giant).unwrap();
        let expected = (2 * pairs(m_size)) as f64 / pairs(2 * m_size) as f64;
        assert_eq!(m.precision, expected);
        assert_eq!(m.recall, 1.0);

        let one = build(&[(0, 1, 1)]);
        assert!(matches!(pairwise_metrics(&one), Err(Error::TooFewSamples)));
        assert!(dscore(&one).unwrap().pairwise.is_none());
    }

    #[test]
    fn missing_label_is_an_error() {
        let assignment = BTreeMap::from([(1, 0), (2, 0)]);
        let labels = BTreeMap::from([(1, 0)]);
        assert!(matches!(
            LabeledPartition::new(assignment, &labels),
            Err(Error::MissingLabel(2))
        ));
    }
}
