//! Descriptor datasets and the episodic sampler.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::descriptor::{ClassId, Episode, LabeledSample};
use crate::error::{Error, Result};

/// A split of labeled descriptor sets sharing one `C x H x W` shape.
#[derive(Clone, Debug)]
pub struct DescriptorDataset {
    /// Class table; `ClassId(i)` names `classes[i]`.
    pub classes: Vec<String>,
    pub samples: Vec<LabeledSample>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub source: String,
}

impl DescriptorDataset {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::InvalidData(
                "dataset has an empty class table".into(),
            ));
        }
        let shape = (self.channels, self.height, self.width);
        for s in &self.samples {
            if s.label.0 as usize >= self.classes.len() {
                return Err(Error::InvalidData(format!(
                    "sample {} refers to class {} but the table has {} classes",
                    s.sample_id,
                    s.label.0,
                    self.classes.len()
                )));
            }
            if s.descriptors.shape() != shape {
                return Err(Error::InvalidData(format!(
                    "sample {} has shape {:?}, dataset declares {:?}",
                    s.sample_id,
                    s.descriptors.shape(),
                    shape
                )));
            }
        }
        Ok(())
    }

    /// Sample positions grouped by class, in dataset order.
    pub fn by_class(&self) -> BTreeMap<ClassId, Vec<usize>> {
        let mut map: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            map.entry(s.label).or_default().push(i);
        }
        map
    }

    /// Value-level equality, ignoring `source`.
    pub fn same_contents(&self, other: &Self) -> bool {
        self.classes == other.classes
            && self.samples == other.samples
            && (self.channels, self.height, self.width)
                == (other.channels, other.height, other.width)
    }
}

/// Draws an N-way K-shot episode with `n_query_per_class` queries per class.
///
/// Classes are chosen uniformly without replacement among those holding at
/// least `k_shot + n_query_per_class` samples; samples within a class likewise.
pub fn sample_episode(
    ds: &DescriptorDataset,
    n_way: usize,
    k_shot: usize,
    n_query_per_class: usize,
    seed: u64,
) -> Result<Episode> {
    if n_way == 0 || k_shot == 0 || n_query_per_class == 0 {
        return Err(Error::Config(format!(
            "n_way, k_shot and n_query must be positive, got {n_way}, {k_shot}, {n_query_per_class}"
        )));
    }
    let need = k_shot + n_query_per_class;
    let groups = ds.by_class();
    let eligible: Vec<(&ClassId, &Vec<usize>)> =
        groups.iter().filter(|(_, v)| v.len() >= need).collect();
    if eligible.len() < n_way {
        return Err(Error::Config(format!(
            "need {n_way} classes with at least {need} samples each, dataset has {} (of {} classes)",
            eligible.len(),
            groups.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = index::sample(&mut rng, eligible.len(), n_way);
    let mut classes = Vec::with_capacity(n_way);
    let mut support = Vec::with_capacity(n_way * k_shot);
    let mut query = Vec::with_capacity(n_way * n_query_per_class);
    for ci in chosen.iter() {
        let (&class, members) = eligible[ci];
        classes.push(class);
        let picks = index::sample(&mut rng, members.len(), need);
        for (j, pick) in picks.iter().enumerate() {
            let s = ds.samples[members[pick]].clone();
            if j < k_shot {
                support.push(s);
            } else {
                query.push(s);
            }
        }
    }
    Ok(Episode {
        n_way,
        k_shot,
        classes,
        support,
        query,
    })
}
