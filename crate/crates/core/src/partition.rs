use std::collections::{BTreeMap, BTreeSet};

use crate::dataset::{Dataset, PlantGroup, SampleId};
use crate::gaussian::{fit_gaussian, DiagGaussian};
use crate::{Error, Result};

pub type ClusterId = usize;

/// A cluster: its members and the diagonal Gaussian modelling them.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCluster {
    id: ClusterId,
    gaussian: DiagGaussian,
    members: BTreeSet<SampleId>,
}

impl GaussianCluster {
    /// Fits a cluster on `members`.
    pub fn fit(id: ClusterId, members: BTreeSet<SampleId>, data: &Dataset) -> Result<Self> {
        let rows = members
            .iter()
            .map(|&m| data.features(m))
            .collect::<Result<Vec<_>>>()?;
        let gaussian = fit_gaussian(rows.iter().copied())?;
        Ok(Self {
            id,
            gaussian,
            members,
        })
    }

    pub fn id(&self) -> ClusterId {
        self.id
    }

    pub fn gaussian(&self) -> &DiagGaussian {
        &self.gaussian
    }

    pub fn members(&self) -> &BTreeSet<SampleId> {
        &self.members
    }

    pub fn count(&self) -> usize {
        self.members.len()
    }

    pub fn mean(&self) -> &[f64] {
        self.gaussian.mean()
    }

    pub fn variance(&self) -> &[f64] {
        self.gaussian.variance()
    }
}

/// A total assignment of samples to clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    assignment: BTreeMap<SampleId, ClusterId>,
    clusters: BTreeMap<ClusterId, GaussianCluster>,
}

impl Partition {
    /// Builds a partition from member lists; list `i` becomes cluster `i`.
    pub fn from_groups(data: &Dataset, groups: Vec<Vec<SampleId>>) -> Result<Self> {
        let mut assignment = BTreeMap::new();
        let mut clusters = BTreeMap::new();
        for (cid, members) in groups.into_iter().enumerate() {
            for &m in &members {
                data.position(m)?;
                if assignment.insert(m, cid).is_some() {
                    return Err(Error::DuplicateSample(m));
                }
            }
            let cluster = GaussianCluster::fit(cid, members.into_iter().collect(), data)?;
            clusters.insert(cid, cluster);
        }
        let p = Self {
            assignment,
            clusters,
        };
        p.validate(data)?;
        Ok(p)
    }

    /// Builds a partition from a sample → cluster map, keeping cluster ids.
    pub fn from_assignment(data: &Dataset, assignment: BTreeMap<SampleId, ClusterId>) -> Result<Self> {
        let mut members: BTreeMap<ClusterId, BTreeSet<SampleId>> = BTreeMap::new();
        for (&s, &c) in &assignment {
            data.position(s)?;
            members.entry(c).or_default().insert(s);
        }
        let clusters = members
            .into_iter()
            .map(|(c, m)| Ok((c, GaussianCluster::fit(c, m, data)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let p = Self {
            assignment,
            clusters,
        };
        p.validate(data)?;
        Ok(p)
    }

    pub fn assignment(&self) -> &BTreeMap<SampleId, ClusterId> {
        &self.assignment
    }

    pub fn clusters(&self) -> &BTreeMap<ClusterId, GaussianCluster> {
        &self.clusters
    }

    pub fn cluster(&self, id: ClusterId) -> Option<&GaussianCluster> {
        self.clusters.get(&id)
    }

    pub fn cluster_of(&self, sample: SampleId) -> Option<ClusterId> {
        self.assignment.get(&sample).copied()
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    /// Cluster sizes keyed by cluster id.
    pub fn sizes(&self) -> BTreeMap<ClusterId, usize> {
        self.clusters.iter().map(|(&c, k)| (c, k.count())).collect()
    }

    /// Checks totality, non-emptiness and that members agree with the
    /// assignment map.
    pub fn validate(&self, data: &Dataset) -> Result<()> {
        if self.assignment.len() != data.len() {
            return Err(Error::Invariant(format!(
                "{} of {} samples assigned",
                self.assignment.len(),
                data.len()
            )));
        }
        for s in data.samples() {
            let c = self
                .assignment
                .get(&s.id)
                .ok_or_else(|| Error::Invariant(format!("sample {} unassigned", s.id)))?;
            let cluster = self
                .clusters
                .get(c)
                .ok_or_else(|| Error::Invariant(format!("sample {} assigned to missing cluster {c}", s.id)))?;
            if !cluster.members.contains(&s.id) {
                return Err(Error::Invariant(format!("cluster {c} lost member {}", s.id)));
            }
        }
        let total: usize = self.clusters.values().map(GaussianCluster::count).sum();
        if total != data.len() {
            return Err(Error::Invariant("cluster members disagree with assignment".into()));
        }
        if let Some(k) = self.clusters.values().find(|k| k.members.is_empty()) {
            return Err(Error::Invariant(format!("cluster {} is empty", k.id)));
        }
        Ok(())
    }

    /// Plant groups whose samples sit in more than one cluster.
    pub fn split_groups(&self, data: &Dataset) -> Vec<PlantGroup> {
        data.plant_groups()
            .into_iter()
            .filter(|(_, ids)| {
                let first = self.assignment.get(&ids[0]);
                ids.iter().any(|id| self.assignment.get(id) != first)
            })
            .map(|(g, _)| g)
            .collect()
    }

    pub(crate) fn clusters_mut(&mut self) -> &mut BTreeMap<ClusterId, GaussianCluster> {
        &mut self.clusters
    }

    /// Moves `sample` into cluster `to` without refitting either model.
    pub(crate) fn move_sample(&mut self, sample: SampleId, to: ClusterId) {
        let from = self.assignment.insert(sample, to);
        if let Some(from) = from {
            if from == to {
                return;
            }
            if let Some(k) = self.clusters.get_mut(&from) {
                k.members.remove(&sample);
            }
        }
        if let Some(k) = self.clusters.get_mut(&to) {
            k.members.insert(sample);
        }
    }

    pub(crate) fn drop_empty(&mut self) {
        self.clusters.retain(|_, k| !k.members.is_empty());
    }

    /// Unions `b` into `a` and refits `a`.
    pub(crate) fn merge(&mut self, a: ClusterId, b: ClusterId, data: &Dataset) -> Result<()> {
        let gone = self
            .clusters
            .remove(&b)
            .ok_or_else(|| Error::Invariant(format!("merge of missing cluster {b}")))?;
        for &m in &gone.members {
            self.assignment.insert(m, a);
        }
        let target = self
            .clusters
            .get_mut(&a)
            .ok_or_else(|| Error::Invariant(format!("merge into missing cluster {a}")))?;
        target.members.extend(gone.members);
        *target = GaussianCluster::fit(a, std::mem::take(&mut target.members), data)?;
        Ok(())
    }
}
