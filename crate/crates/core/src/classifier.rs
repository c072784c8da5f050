//! Image-to-class k-NN scoring over filtered descriptors and softmax class probabilities.

use serde::{Deserialize, Serialize};

use crate::descriptor::DescriptorPool;
use crate::error::{Error, Result};
use crate::neighborhood::{cosine_from_parts, dot, norm, top_k};

pub const DEFAULT_K_BAR: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    /// Neighbors per query descriptor; clamped to the class pool size.
    pub k_bar: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            k_bar: DEFAULT_K_BAR,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub scores: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub predicted: usize,
}

/// A class's filtered support descriptors with their norms cached.
#[derive(Clone, Debug)]
pub struct ClassPool {
    dim: usize,
    data: Vec<f32>,
    norms: Vec<f64>,
}

impl ClassPool {
    pub fn new(dim: usize, data: Vec<f32>) -> Self {
        let norms = DescriptorPool::new(&data, dim).iter().map(norm).collect();
        Self { dim, data, norms }
    }

    pub fn from_descriptors<'a>(
        dim: usize,
        descriptors: impl IntoIterator<Item = &'a [f32]>,
    ) -> Self {
        let data: Vec<f32> = descriptors.into_iter().flatten().copied().collect();
        Self::new(dim, data)
    }

    pub fn len(&self) -> usize {
        self.norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }

    pub fn as_pool(&self) -> DescriptorPool<'_> {
        DescriptorPool::new(&self.data, self.dim)
    }
}

/// Sum over query descriptors of the cosine similarities to their
/// `min(k_bar, |pool|)` nearest descriptors in the class pool.
pub fn image_to_class_score(
    query: DescriptorPool<'_>,
    pool: &ClassPool,
    class_index: usize,
    cfg: &ClassifierConfig,
) -> Result<f64> {
    if pool.is_empty() {
        return Err(Error::DegenerateClass { class_index });
    }
    if query.is_empty() {
        return Err(Error::Config("query has no descriptors".into()));
    }
    if cfg.k_bar == 0 {
        return Err(Error::Config("k_bar must be at least 1".into()));
    }
    let k = cfg.k_bar.min(pool.len());
    let pool_view = pool.as_pool();
    let mut total = 0.0;
    let mut scored = Vec::with_capacity(pool.len());
    for q in query.iter() {
        let qn = norm(q);
        scored.clear();
        scored.extend(
            pool_view
                .iter()
                .zip(&pool.norms)
                .enumerate()
                .map(|(j, (m, &mn))| (cosine_from_parts(dot(q, m), qn, mn), j)),
        );
        total += top_k(std::mem::take(&mut scored), k)
            .iter()
            .map(|&(s, _)| s)
            .sum::<f64>();
    }
    Ok(total)
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn classify(
    query: DescriptorPool<'_>,
    pools: &[ClassPool],
    cfg: &ClassifierConfig,
) -> Result<ClassScores> {
    let scores = pools
        .iter()
        .enumerate()
        .map(|(c, p)| image_to_class_score(query, p, c, cfg))
        .collect::<Result<Vec<_>>>()?;
    let probabilities = softmax(&scores);
    let predicted = argmax(&scores);
    Ok(ClassScores {
        scores,
        probabilities,
        predicted,
    })
}
