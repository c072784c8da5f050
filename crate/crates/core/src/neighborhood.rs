//! Exact cosine k-NN among the local descriptors of one image and the
//! neighborhood representation (mean of the k nearest peers) built from it.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::descriptor::DescriptorPool;
use crate::error::{Error, Result};

pub const DEFAULT_K_NEIGHBORS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborhoodConfig {
    pub k_neighbors: usize,
    /// Whether a descriptor may be selected as its own neighbor.
    pub include_self: bool,
}

impl Default for NeighborhoodConfig {
    fn default() -> Self {
        Self {
            k_neighbors: DEFAULT_K_NEIGHBORS,
            include_self: false,
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

#[inline]
pub(crate) fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine from a precomputed dot product and norms. Zero-norm operands give 0.
#[inline]
pub(crate) fn cosine_from_parts(dot: f64, norm_a: f64, norm_b: f64) -> f64 {
    if norm_a == 0.0 || norm_b == 0.0 {
        return 0.0;
    }
    (dot / (norm_a * norm_b)).clamp(-1.0, 1.0)
}

/// Cosine similarity in `[-1, 1]`; 0 when either vector has zero norm.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(
        a.len(),
        b.len(),
        "cosine of vectors with different dimensions"
    );
    cosine_from_parts(dot(a, b), norm(a), norm(b))
}

/// Descending similarity, ascending index on ties.
#[inline]
pub(crate) fn rank_order(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then(a.1.cmp(&b.1))
}

/// Keeps the `k` best `(similarity, index)` pairs, sorted by [`rank_order`].
pub(crate) fn top_k(mut scored: Vec<(f64, usize)>, k: usize) -> Vec<(f64, usize)> {
    if k < scored.len() {
        scored.select_nth_unstable_by(k, rank_order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(rank_order);
    scored
}

fn available(pool_len: usize, self_index: Option<usize>, include_self: bool) -> usize {
    match self_index {
        Some(i) if !include_self && i < pool_len => pool_len - 1,
        _ => pool_len,
    }
}

fn check_pool(needed: usize, available: usize) -> Result<()> {
    if needed == 0 {
        return Err(Error::Config("k_neighbors must be at least 1".into()));
    }
    if available < needed {
        return Err(Error::Config(format!(
            "neighbor pool too small: need {needed} descriptors, {available} available"
        )));
    }
    Ok(())
}

/// Indices of the `k` pool entries most cosine-similar to `query`, best first.
///
/// `self_index` names the position of `query` inside `pool` when it was drawn
/// from it; that entry is skipped unless `cfg.include_self` is set.
pub fn knn_indices(
    query: &[f32],
    pool: DescriptorPool<'_>,
    cfg: &NeighborhoodConfig,
    self_index: Option<usize>,
) -> Result<Vec<usize>> {
    check_pool(
        cfg.k_neighbors,
        available(pool.len(), self_index, cfg.include_self),
    )?;
    let qn = norm(query);
    let scored = pool
        .iter()
        .enumerate()
        .filter(|&(j, _)| cfg.include_self || Some(j) != self_index)
        .map(|(j, x)| (cosine_from_parts(dot(query, x), qn, norm(x)), j))
        .collect();
    Ok(top_k(scored, cfg.k_neighbors)
        .into_iter()
        .map(|(_, j)| j)
        .collect())
}

/// Symmetric cosine similarity matrix of a pool, row-major `n x n`.
pub(crate) fn similarity_matrix(pool: DescriptorPool<'_>) -> Vec<f64> {
    let n = pool.len();
    let norms: Vec<f64> = pool.iter().map(norm).collect();
    let mut sims = vec![0.0f64; n * n];
    for i in 0..n {
        let xi = pool.get(i);
        for j in i..n {
            let s = cosine_from_parts(dot(xi, pool.get(j)), norms[i], norms[j]);
            sims[i * n + j] = s;
            sims[j * n + i] = s;
        }
    }
    sims
}

/// Neighbor index lists for every descriptor of the pool, searched within the pool.
pub fn neighbor_lists(
    pool: DescriptorPool<'_>,
    cfg: &NeighborhoodConfig,
) -> Result<Vec<Vec<usize>>> {
    let n = pool.len();
    check_pool(cfg.k_neighbors, available(n, Some(0), cfg.include_self))?;
    let sims = similarity_matrix(pool);
    Ok((0..n)
        .map(|i| {
            let row = &sims[i * n..(i + 1) * n];
            let scored = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| cfg.include_self || j != i)
                .map(|(j, &s)| (s, j))
                .collect();
            top_k(scored, cfg.k_neighbors)
                .into_iter()
                .map(|(_, j)| j)
                .collect()
        })
        .collect())
}

/// Mean of each descriptor's `k` nearest peers, position-major like the input.
pub fn neighborhood_representation(
    pool: DescriptorPool<'_>,
    cfg: &NeighborhoodConfig,
) -> Result<Vec<f32>> {
    let dim = pool.dim();
    let lists = neighbor_lists(pool, cfg)?;
    let inv_k = 1.0 / cfg.k_neighbors as f64;
    let mut out = Vec::with_capacity(pool.as_slice().len());
    let mut acc = vec![0.0f64; dim];
    for neighbors in &lists {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for &j in neighbors {
            for (a, &v) in acc.iter_mut().zip(pool.get(j)) {
                *a += v as f64;
            }
        }
        out.extend(acc.iter().map(|&a| (a * inv_k) as f32));
    }
    Ok(out)
}
