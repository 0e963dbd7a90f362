use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type SampleId = u64;
pub type PlantGroup = u64;
pub type ClassId = u32;

/// World position of an observation, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
}

/// One plant observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: SampleId,
    /// Views of the same physical plant share a group.
    pub plant_group: PlantGroup,
    pub features: Vec<f64>,
    pub label: Option<ClassId>,
    pub pose: Option<Pose>,
}

impl Sample {
    pub fn new(id: SampleId, plant_group: PlantGroup, features: Vec<f64>) -> Self {
        Self {
            id,
            plant_group,
            features,
            label: None,
            pose: None,
        }
    }

    pub fn with_label(mut self, label: ClassId) -> Self {
        self.label = Some(label);
        self
    }
}

/// A validated collection of samples: unique ids, one shared dimension,
/// finite features.
#[derive(Debug, Clone)]
pub struct Dataset {
    samples: Vec<Sample>,
    index: HashMap<SampleId, usize>,
    dim: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let dim = samples.first().ok_or(Error::EmptyDataset)?.features.len();
        if dim == 0 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        let mut index = HashMap::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: s.features.len(),
                });
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(s.id));
            }
            if index.insert(s.id, i).is_some() {
                return Err(Error::DuplicateSample(s.id));
            }
        }
        Ok(Self {
            samples,
            index,
            dim,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn position(&self, id: SampleId) -> Result<usize> {
        self.index.get(&id).copied().ok_or(Error::UnknownSample(id))
    }

    pub fn sample(&self, id: SampleId) -> Result<&Sample> {
        Ok(&self.samples[self.position(id)?])
    }

    pub fn features(&self, id: SampleId) -> Result<&[f64]> {
        Ok(&self.sample(id)?.features)
    }

    /// Ground-truth labels, or `None` unless every sample carries one.
    pub fn labels(&self) -> Option<BTreeMap<SampleId, ClassId>> {
        self.samples
            .iter()
            .map(|s| s.label.map(|l| (s.id, l)))
            .collect()
    }

    /// Sample ids per plant group, in sample order.
    pub fn plant_groups(&self) -> BTreeMap<PlantGroup, Vec<SampleId>> {
        let mut groups: BTreeMap<PlantGroup, Vec<SampleId>> = BTreeMap::new();
        for s in &self.samples {
            groups.entry(s.plant_group).or_default().push(s.id);
        }
        groups
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(Dataset::new(vec![]), Err(Error::EmptyDataset)));
        let dup = vec![Sample::new(1, 1, vec![0.0]), Sample::new(1, 2, vec![1.0])];
        assert!(matches!(Dataset::new(dup), Err(Error::DuplicateSample(1))));
        let ragged = vec![Sample::new(1, 1, vec![0.0]), Sample::new(2, 2, vec![1.0, 2.0])];
        assert!(matches!(
            Dataset::new(ragged),
            Err(Error::DimensionMismatch { .. })
        ));
        let nan = vec![Sample::new(4, 1, vec![f64::NAN])];
        assert!(matches!(Dataset::new(nan), Err(Error::NonFinite(4))));
    }

    #[test]
    fn labels_require_every_sample() {
        let ds = Dataset::new(vec![
            Sample::new(1, 1, vec![0.0]).with_label(3),
            Sample::new(2, 1, vec![1.0]),
        ])
        .unwrap();
        assert!(ds.labels().is_none());
        assert_eq!(ds.plant_groups()[&1], vec![1, 2]);
    }
}
