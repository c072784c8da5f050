//! Descriptor tensors, labeled samples and episodes.
//!
//! A backbone feature map of shape `C x H x W` is viewed as `N = H * W` local
//! descriptors of dimension `C`. Descriptors are stored position-major: the
//! descriptor at spatial position `(h, w)` is column `h * W + w` and occupies
//! the contiguous slice `data[n * C..(n + 1) * C]`. Every transformation in
//! this crate preserves that column order, so kept-index sets computed in one
//! stage refer to the same spatial positions in every other stage.

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One image's local descriptors.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorSet {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl DescriptorSet {
    /// Builds a set from position-major data (`N` descriptors of `C` values each).
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidData(format!(
                "descriptor shape must be positive, got C={channels} H={height} W={width}"
            )));
        }
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(Error::InvalidData(format!(
                "expected {expected} values for C={channels} H={height} W={width}, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite value at descriptor {} channel {}",
                pos / channels,
                pos % channels
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Builds a set from a channel-major `C x H x W` tensor (the backbone layout).
    pub fn from_chw(channels: usize, height: usize, width: usize, chw: &[f32]) -> Result<Self> {
        let n = height * width;
        if chw.len() != channels * n {
            return Err(Error::InvalidData(format!(
                "expected {} values for C={channels} H={height} W={width}, got {}",
                channels * n,
                chw.len()
            )));
        }
        let mut data = vec![0.0f32; chw.len()];
        for c in 0..channels {
            for pos in 0..n {
                data[pos * channels + c] = chw[c * n + pos];
            }
        }
        Self::new(channels, height, width, data)
    }

    /// Inverse of [`DescriptorSet::unflatten`]: builds a set from `H * W` descriptors.
    pub fn unflatten(height: usize, width: usize, columns: &[Vec<f32>]) -> Result<Self> {
        let channels = columns.first().map(Vec::len).unwrap_or(0);
        if columns.len() != height * width {
            return Err(Error::InvalidData(format!(
                "expected {} descriptors for H={height} W={width}, got {}",
                height * width,
                columns.len()
            )));
        }
        if columns.iter().any(|c| c.len() != channels) {
            return Err(Error::InvalidData(
                "descriptors have differing dimensions".into(),
            ));
        }
        Self::new(channels, height, width, columns.concat())
    }

    /// Returns the descriptors (columns) in column order.
    pub fn flatten(&self) -> Vec<Vec<f32>> {
        self.columns().map(<[f32]>::to_vec).collect()
    }

    pub fn columns(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.channels)
    }

    pub fn column(&self, index: usize) -> &[f32] {
        &self.data[index * self.channels..(index + 1) * self.channels]
    }

    /// Channel-major `C x H x W` copy of the data.
    pub fn to_chw(&self) -> Vec<f32> {
        let n = self.len();
        let mut chw = vec![0.0f32; self.data.len()];
        for (pos, col) in self.columns().enumerate() {
            for (c, &v) in col.iter().enumerate() {
                chw[c * n + pos] = v;
            }
        }
        chw
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of local descriptors, `H * W`.
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_pool(&self) -> DescriptorPool<'_> {
        DescriptorPool::new(&self.data, self.channels)
    }

    /// Applies `f` to every value, keeping the shape. Used for rescaling in tests
    /// and by callers that need elementwise transforms.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Self> {
        Self::new(
            self.channels,
            self.height,
            self.width,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub(crate) fn with_data_unchecked(&self, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), self.data.len());
        Self {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data,
        }
    }
}

/// A borrowed, position-major list of equally sized descriptor vectors.
#[derive(Clone, Copy, Debug)]
pub struct DescriptorPool<'a> {
    data: &'a [f32],
    dim: usize,
}

impl<'a> DescriptorPool<'a> {
    pub fn new(data: &'a [f32], dim: usize) -> Self {
        assert!(dim > 0, "descriptor dimension must be positive");
        assert_eq!(data.len() % dim, 0, "pool data is not a multiple of dim");
        Self { data, dim }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, index: usize) -> &'a [f32] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'a, f32> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &'a [f32] {
        self.data
    }
}

/// Dataset-level class identifier: an index into the owning dataset's class table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClassId(pub u32);

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub descriptors: Arc<DescriptorSet>,
    pub label: ClassId,
    pub sample_id: u64,
}

impl LabeledSample {
    pub fn new(descriptors: DescriptorSet, label: ClassId, sample_id: u64) -> Self {
        Self {
            descriptors: Arc::new(descriptors),
            label,
            sample_id,
        }
    }
}

/// An N-way K-shot task. `classes[i]` is the dataset class behind episode-local
/// class index `i`; `support` holds `k_shot` samples per class, class-major in
/// the order of `classes`.
#[derive(Clone, Debug)]
pub struct Episode {
    pub n_way: usize,
    pub k_shot: usize,
    pub classes: Vec<ClassId>,
    pub support: Vec<LabeledSample>,
    pub query: Vec<LabeledSample>,
}

impl Episode {
    /// Episode-local index of a dataset class, if it is one of the support classes.
    pub fn local_index(&self, label: ClassId) -> Option<usize> {
        self.classes.iter().position(|&c| c == label)
    }

    /// Support samples of episode-local class `class_index`.
    pub fn support_of(&self, class_index: usize) -> &[LabeledSample] {
        &self.support[class_index * self.k_shot..(class_index + 1) * self.k_shot]
    }

    pub fn shape(&self) -> Option<(usize, usize, usize)> {
        self.support.first().map(|s| s.descriptors.shape())
    }
}

/// The first broken episode invariant found by [`validate_episode`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EpisodeViolation {
    ZeroSize,
    ClassCount {
        expected: usize,
        found: usize,
    },
    ShotCount {
        class: ClassId,
        expected: usize,
        found: usize,
    },
    SupportOrder {
        position: usize,
    },
    EmptyQuery,
    QueryLabel {
        sample_id: u64,
        label: ClassId,
    },
    Shape {
        sample_id: u64,
    },
    SharedSample {
        sample_id: u64,
    },
}

impl fmt::Display for EpisodeViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ZeroSize => write!(f, "episode size: n_way and k_shot must be positive"),
            Self::ClassCount { expected, found } => {
                write!(
                    f,
                    "class count: expected {expected} support classes, found {found}"
                )
            }
            Self::ShotCount {
                class,
                expected,
                found,
            } => write!(
                f,
                "shot count: class {class} has {found} support samples, expected {expected}"
            ),
            Self::SupportOrder { position } => write!(
                f,
                "support order: sample at position {position} is not grouped under its class"
            ),
            Self::EmptyQuery => write!(f, "query set: empty"),
            Self::QueryLabel { sample_id, label } => write!(
                f,
                "query label: sample {sample_id} has class {label} outside the support classes"
            ),
            Self::Shape { sample_id } => {
                write!(
                    f,
                    "shape: sample {sample_id} differs from the episode's C x H x W"
                )
            }
            Self::SharedSample { sample_id } => write!(
                f,
                "sample overlap: sample {sample_id} appears twice in the episode"
            ),
        }
    }
}

/// Checks every [`Episode`] invariant, reporting the first violation.
pub fn validate_episode(e: &Episode) -> Result<(), EpisodeViolation> {
    if e.n_way == 0 || e.k_shot == 0 {
        return Err(EpisodeViolation::ZeroSize);
    }
    let distinct: HashSet<ClassId> = e.support.iter().map(|s| s.label).collect();
    if distinct.len() != e.n_way || e.classes.len() != e.n_way {
        return Err(EpisodeViolation::ClassCount {
            expected: e.n_way,
            found: distinct.len(),
        });
    }
    for &class in &e.classes {
        let found = e.support.iter().filter(|s| s.label == class).count();
        if found != e.k_shot {
            return Err(EpisodeViolation::ShotCount {
                class,
                expected: e.k_shot,
                found,
            });
        }
    }
    for (position, sample) in e.support.iter().enumerate() {
        if e.classes.get(position / e.k_shot) != Some(&sample.label) {
            return Err(EpisodeViolation::SupportOrder { position });
        }
    }
    if e.query.is_empty() {
        return Err(EpisodeViolation::EmptyQuery);
    }
    if let Some(q) = e.query.iter().find(|q| !distinct.contains(&q.label)) {
        return Err(EpisodeViolation::QueryLabel {
            sample_id: q.sample_id,
            label: q.label,
        });
    }
    let shape = e.support[0].descriptors.shape();
    if let Some(s) = e
        .support
        .iter()
        .chain(&e.query)
        .find(|s| s.descriptors.shape() != shape)
    {
        return Err(EpisodeViolation::Shape {
            sample_id: s.sample_id,
        });
    }
    let mut seen = HashSet::new();
    if let Some(s) = e
        .support
        .iter()
        .chain(&e.query)
        .find(|s| !seen.insert(s.sample_id))
    {
        return Err(EpisodeViolation::SharedSample {
            sample_id: s.sample_id,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(label: u32, id: u64) -> LabeledSample {
        LabeledSample::new(
            DescriptorSet::new(2, 1, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            ClassId(label),
            id,
        )
    }

    fn episode(n_way: usize, k_shot: usize, queries_per_class: usize) -> Episode {
        let mut id = 0;
        let mut support = Vec::new();
        let mut query = Vec::new();
        for c in 0..n_way as u32 {
            for _ in 0..k_shot {
                support.push(sample(c, id));
                id += 1;
            }
        }
        for c in 0..n_way as u32 {
            for _ in 0..queries_per_class {
                query.push(sample(c, id));
                id += 1;
            }
        }
        Episode {
            n_way,
            k_shot,
            classes: (0..n_way as u32).map(ClassId).collect(),
            support,
            query,
        }
    }

    #[test]
    fn flatten_reads_columns() {
        // data given as the C x N matrix [[1,3],[2,4]]
        let d = DescriptorSet::from_chw(2, 1, 2, &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_eq!(d.flatten(), vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        let single = DescriptorSet::new(1, 1, 1, vec![7.0]).unwrap();
        assert_eq!(single.flatten(), vec![vec![7.0]]);
        let big = DescriptorSet::new(3, 21, 21, vec![0.5; 3 * 441]).unwrap();
        assert_eq!(big.flatten().len(), 441);
    }

    #[test]
    fn column_order_is_row_major_over_positions() {
        // value at (c, h, w) = 100c + 10h + w
        let (c, h, w) = (2, 2, 3);
        let chw: Vec<f32> = (0..c)
            .flat_map(|ci| {
                (0..h).flat_map(move |hi| (0..w).map(move |wi| (100 * ci + 10 * hi + wi) as f32))
            })
            .collect();
        let d = DescriptorSet::from_chw(c, h, w, &chw).unwrap();
        assert_eq!(d.column(1 * w + 2), &[12.0, 112.0]);
        assert_eq!(d.to_chw(), chw);
    }

    #[test]
    fn rejects_bad_shapes_and_values() {
        assert!(DescriptorSet::new(2, 1, 2, vec![1.0; 3]).is_err());
        assert!(DescriptorSet::new(0, 1, 2, vec![]).is_err());
        assert!(DescriptorSet::new(1, 1, 2, vec![1.0, f32::NAN]).is_err());
        assert!(DescriptorSet::new(1, 1, 2, vec![f32::INFINITY, 1.0]).is_err());
    }

    #[test]
    fn well_formed_episode_is_ok() {
        assert_eq!(validate_episode(&episode(5, 1, 3)), Ok(()));
        assert_eq!(validate_episode(&episode(5, 5, 3)), Ok(()));
    }

    #[test]
    fn class_count_violation() {
        let mut e = episode(4, 1, 1);
        e.n_way = 5;
        let v = validate_episode(&e).unwrap_err();
        assert!(matches!(
            v,
            EpisodeViolation::ClassCount {
                expected: 5,
                found: 4
            }
        ));
        assert!(v.to_string().starts_with("class count"));
    }

    #[test]
    fn query_label_violation() {
        let mut e = episode(5, 1, 1);
        e.query.push(sample(9, 1000));
        let v = validate_episode(&e).unwrap_err();
        assert!(v.to_string().starts_with("query label"));
    }

    #[test]
    fn shot_shape_and_overlap_violations() {
        let mut e = episode(2, 2, 1);
        e.support.pop();
        assert!(matches!(
            validate_episode(&e),
            Err(EpisodeViolation::ShotCount { .. })
        ));

        let mut e = episode(2, 1, 1);
        e.query[0].sample_id = e.support[1].sample_id;
        assert!(matches!(
            validate_episode(&e),
            Err(EpisodeViolation::SharedSample { .. })
        ));

        let mut e = episode(2, 1, 1);
        e.query[0].descriptors = Arc::new(DescriptorSet::new(4, 1, 1, vec![0.0; 4]).unwrap());
        assert!(matches!(
            validate_episode(&e),
            Err(EpisodeViolation::Shape { .. })
        ));

        let mut e = episode(2, 1, 1);
        e.query.clear();
        assert_eq!(validate_episode(&e), Err(EpisodeViolation::EmptyQuery));

        let mut e = episode(2, 1, 1);
        e.support.swap(0, 1);
        assert!(matches!(
            validate_episode(&e),
            Err(EpisodeViolation::SupportOrder { .. })
        ));
    }

    proptest! {
        #[test]
        fn flatten_unflatten_round_trip(
            (c, h, w, data) in (1usize..6, 1usize..5, 1usize..5).prop_flat_map(|(c, h, w)| {
                (Just(c), Just(h), Just(w), proptest::collection::vec(-1e3f32..1e3, c * h * w))
            })
        ) {
            let d = DescriptorSet::new(c, h, w, data).unwrap();
            let back = DescriptorSet::unflatten(h, w, &d.flatten()).unwrap();
            prop_assert_eq!(&back, &d);
            let chw = DescriptorSet::from_chw(c, h, w, &d.to_chw()).unwrap();
            prop_assert_eq!(chw, d);
        }
    }
}
