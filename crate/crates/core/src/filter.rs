//! Dynamically weighted local descriptor filtering.
//!
//! Each descriptor is weighted by the cosine similarity of its neighborhood
//! representation to every class prototype, averaged over classes. Descriptors
//! whose weight falls below `mean - std` of the weights of the set are dropped,
//! prototypes are recomputed from what remains, and the procedure repeats until
//! the weight spread falls below `sigma_0 / c_stop`, nothing more is removed, or
//! the iteration cap is reached. Query images are then filtered once against
//! the final support prototypes.

use serde::{Deserialize, Serialize};

use crate::descriptor::{DescriptorPool, DescriptorSet};
use crate::error::{Error, Result};
use crate::neighborhood::{cosine_from_parts, dot, norm};
use crate::prototype::{all_prototypes, ClassPrototype, SupportView};
use crate::stats::mean_and_population_std;

/// Which quantity is compared against the `mean - std` threshold.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterMode {
    /// The class-averaged weight of each descriptor.
    #[default]
    Averaged,
    /// The per-class similarities: a descriptor is dropped only when it falls
    /// below the threshold for every class.
    PerClass,
}

/// Where the query-side threshold statistics come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryStats {
    #[default]
    Own,
    Support,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub c_stop: f64,
    pub max_iterations: usize,
    pub min_keep_fraction: f64,
    pub mode: FilterMode,
    pub query_stats: QueryStats,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            c_stop: 2.0,
            max_iterations: 10,
            min_keep_fraction: 0.1,
            mode: FilterMode::Averaged,
            query_stats: QueryStats::Own,
        }
    }
}

impl FilterConfig {
    // negated comparisons so that NaN is rejected too
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(self.c_stop > 1.0) {
            return Err(Error::Config(format!(
                "c_stop must exceed 1, got {}",
                self.c_stop
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if !(self.min_keep_fraction > 0.0 && self.min_keep_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "min_keep_fraction must be in (0, 1], got {}",
                self.min_keep_fraction
            )));
        }
        Ok(())
    }

    /// Number of descriptors an image of `total` descriptors always retains.
    pub fn keep_floor(&self, total: usize) -> usize {
        let raw = (self.min_keep_fraction * total as f64 - 1e-9).ceil();
        (raw.max(1.0) as usize).min(total)
    }
}

/// A normalized image together with the neighborhood representation of each
/// of its descriptors. `class_index` is the episode-local class (for query
/// samples it is the ground truth and is never read by the filter).
#[derive(Clone, Debug)]
pub struct PreparedSample {
    pub class_index: usize,
    pub features: DescriptorSet,
    pub neighborhoods: Vec<f32>,
}

impl PreparedSample {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn neighborhood_pool(&self) -> DescriptorPool<'_> {
        DescriptorPool::new(&self.neighborhoods, self.features.channels())
    }
}

impl SupportView for PreparedSample {
    fn class_index(&self) -> usize {
        self.class_index
    }

    fn descriptor(&self, index: usize) -> &[f32] {
        self.features.column(index)
    }
}

/// Similarities `S[c][i]` between descriptor `i` and prototype `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrix {
    n_way: usize,
    len: usize,
    data: Vec<f64>,
}

impl WeightMatrix {
    pub fn n_way(&self) -> usize {
        self.n_way
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, class: usize, descriptor: usize) -> f64 {
        self.data[class * self.len + descriptor]
    }

    pub fn class_row(&self, class: usize) -> &[f64] {
        &self.data[class * self.len..(class + 1) * self.len]
    }

    fn max_over_classes(&self, descriptor: usize) -> f64 {
        (0..self.n_way)
            .map(|c| self.get(c, descriptor))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Cosine similarity of every neighborhood representation to every prototype.
pub fn descriptor_weights(
    neighborhoods: DescriptorPool<'_>,
    prototypes: &[ClassPrototype],
) -> WeightMatrix {
    let len = neighborhoods.len();
    let nr_norms: Vec<f64> = neighborhoods.iter().map(norm).collect();
    let mut data = Vec::with_capacity(prototypes.len() * len);
    for p in prototypes {
        assert_eq!(
            p.vector.len(),
            neighborhoods.dim(),
            "prototype dimension mismatch"
        );
        let pn = norm(&p.vector);
        data.extend(
            neighborhoods
                .iter()
                .zip(&nr_norms)
                .map(|(x, &xn)| cosine_from_parts(dot(x, &p.vector), xn, pn)),
        );
    }
    WeightMatrix {
        n_way: prototypes.len(),
        len,
        data,
    }
}

/// Class-averaged weight of each descriptor.
pub fn aggregate_weights(s: &WeightMatrix) -> Vec<f64> {
    assert!(s.n_way >= 1, "at least one class is required");
    let inv = 1.0 / s.n_way as f64;
    (0..s.len)
        .map(|i| (0..s.n_way).map(|c| s.get(c, i)).sum::<f64>() * inv)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdStats {
    pub mu_bar: f64,
    pub sigma_bar: f64,
}

impl ThresholdStats {
    pub fn threshold(&self) -> f64 {
        self.mu_bar - self.sigma_bar
    }
}

/// Mean and population standard deviation of the pooled weights.
pub fn threshold_stats(weights: &[f64]) -> Result<ThresholdStats> {
    if weights.len() < 2 {
        return Err(Error::DegenerateStatistics(weights.len()));
    }
    let (mu_bar, sigma_bar) = mean_and_population_std(weights).expect("nonempty");
    Ok(ThresholdStats { mu_bar, sigma_bar })
}

/// Per-class and class-averaged weights of every descriptor of one image.
#[derive(Clone, Debug)]
pub struct SampleWeights {
    pub per_class: WeightMatrix,
    pub averaged: Vec<f64>,
}

impl SampleWeights {
    pub fn compute(sample: &PreparedSample, prototypes: &[ClassPrototype]) -> Self {
        let per_class = descriptor_weights(sample.neighborhood_pool(), prototypes);
        let averaged = aggregate_weights(&per_class);
        Self {
            per_class,
            averaged,
        }
    }

    pub fn from_averaged(averaged: Vec<f64>) -> Self {
        let len = averaged.len();
        Self {
            per_class: WeightMatrix {
                n_way: 1,
                len,
                data: averaged.clone(),
            },
            averaged,
        }
    }

    fn score(&self, mode: FilterMode, descriptor: usize) -> f64 {
        match mode {
            FilterMode::Averaged => self.averaged[descriptor],
            FilterMode::PerClass => self.per_class.max_over_classes(descriptor),
        }
    }
}

/// Averaged weights of the currently kept descriptors, pooled over all images.
fn pooled_weights(weights: &[SampleWeights], kept: &[Vec<usize>]) -> Vec<f64> {
    weights
        .iter()
        .zip(kept)
        .flat_map(|(w, k)| k.iter().map(move |&i| w.averaged[i]))
        .collect()
}

/// One filtering pass. Keeps descriptor `i` of an image iff its score is at
/// least `mu_bar - sigma_bar`; when that would leave fewer than the
/// configured floor, the highest-scoring currently kept descriptors fill it.
pub fn filter_once(
    weights: &[SampleWeights],
    kept: &[Vec<usize>],
    stats: ThresholdStats,
    cfg: &FilterConfig,
) -> Vec<Vec<usize>> {
    let threshold = stats.threshold();
    weights
        .iter()
        .zip(kept)
        .map(|(w, current)| {
            let floor = cfg.keep_floor(w.averaged.len()).min(current.len());
            let passed: Vec<usize> = current
                .iter()
                .copied()
                .filter(|&i| w.score(cfg.mode, i) >= threshold)
                .collect();
            if passed.len() >= floor {
                return passed;
            }
            let mut ranked: Vec<(f64, usize)> =
                current.iter().map(|&i| (w.score(cfg.mode, i), i)).collect();
            ranked.sort_unstable_by(crate::neighborhood::rank_order);
            let mut top: Vec<usize> = ranked[..floor].iter().map(|&(_, i)| i).collect();
            top.sort_unstable();
            top
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterResult {
    /// Retained descriptor indices per image, strictly increasing.
    pub kept: Vec<Vec<usize>>,
    /// Class-averaged weights of every descriptor from the final weighting round.
    pub weights: Vec<Vec<f64>>,
    pub mu_bar: f64,
    pub sigma_bar: f64,
    pub sigma_bar_0: f64,
    /// Filtering passes applied.
    pub iterations: usize,
    /// `sigma_bar` of every weighting round, starting with `sigma_bar_0`.
    pub sigma_history: Vec<f64>,
}

impl FilterResult {
    pub fn kept_total(&self) -> usize {
        self.kept.iter().map(Vec::len).sum()
    }

    pub fn kept_fraction(&self) -> f64 {
        let total: usize = self.weights.iter().map(Vec::len).sum();
        if total == 0 {
            return 0.0;
        }
        self.kept_total() as f64 / total as f64
    }

    /// Keeps every descriptor; used when filtering is disabled.
    pub fn keep_all(samples: &[PreparedSample]) -> Self {
        Self {
            kept: samples.iter().map(|s| (0..s.len()).collect()).collect(),
            weights: samples.iter().map(|s| vec![0.0; s.len()]).collect(),
            mu_bar: 0.0,
            sigma_bar: 0.0,
            sigma_bar_0: 0.0,
            iterations: 0,
            sigma_history: Vec::new(),
        }
    }
}

/// Iteratively filters the support set and returns the prototypes over the
/// final kept descriptors.
pub fn iterative_filter_support(
    support: &[PreparedSample],
    n_way: usize,
    cfg: &FilterConfig,
) -> Result<(FilterResult, Vec<ClassPrototype>)> {
    filter_support_inner(support, n_way, cfg, None)
}

/// Kept descriptor indices, one list per sample.
pub type KeptSets = Vec<Vec<usize>>;

/// As [`iterative_filter_support`], also recording the kept sets after every pass
/// (the first entry is the initial, unfiltered state).
pub fn iterative_filter_support_traced(
    support: &[PreparedSample],
    n_way: usize,
    cfg: &FilterConfig,
) -> Result<(FilterResult, Vec<ClassPrototype>, Vec<KeptSets>)> {
    let mut trace = Vec::new();
    let (r, p) = filter_support_inner(support, n_way, cfg, Some(&mut trace))?;
    Ok((r, p, trace))
}

fn filter_support_inner(
    support: &[PreparedSample],
    n_way: usize,
    cfg: &FilterConfig,
    mut trace: Option<&mut Vec<KeptSets>>,
) -> Result<(FilterResult, Vec<ClassPrototype>)> {
    cfg.validate()?;
    let mut kept: Vec<Vec<usize>> = support.iter().map(|s| (0..s.len()).collect()).collect();
    let round = |kept: &[Vec<usize>]| -> Result<_> {
        let prototypes = all_prototypes(support, kept, n_way)?;
        let weights: Vec<SampleWeights> = support
            .iter()
            .map(|s| SampleWeights::compute(s, &prototypes))
            .collect();
        let stats = threshold_stats(&pooled_weights(&weights, kept))?;
        Ok((prototypes, weights, stats))
    };

    let (mut prototypes, mut weights, mut stats) = round(&kept)?;
    let sigma_bar_0 = stats.sigma_bar;
    let mut sigma_history = vec![sigma_bar_0];
    let mut iterations = 0;
    if let Some(t) = trace.as_deref_mut() {
        t.push(kept.clone());
    }
    loop {
        if iterations > 0 && stats.sigma_bar < sigma_bar_0 / cfg.c_stop {
            break;
        }
        if iterations >= cfg.max_iterations {
            break;
        }
        let next = filter_once(&weights, &kept, stats, cfg);
        iterations += 1;
        if next == kept {
            break;
        }
        kept = next;
        if let Some(t) = trace.as_deref_mut() {
            t.push(kept.clone());
        }
        (prototypes, weights, stats) = round(&kept)?;
        sigma_history.push(stats.sigma_bar);
    }

    let result = FilterResult {
        kept,
        weights: weights.into_iter().map(|w| w.averaged).collect(),
        mu_bar: stats.mu_bar,
        sigma_bar: stats.sigma_bar,
        sigma_bar_0,
        iterations,
        sigma_history,
    };
    Ok((result, prototypes))
}

/// Single filtering pass over the query images against fixed prototypes.
/// `support_stats` is used only with [`QueryStats::Support`].
pub fn filter_query(
    query: &[PreparedSample],
    prototypes: &[ClassPrototype],
    support_stats: ThresholdStats,
    cfg: &FilterConfig,
) -> Result<FilterResult> {
    cfg.validate()?;
    let all: Vec<Vec<usize>> = query.iter().map(|s| (0..s.len()).collect()).collect();
    let weights: Vec<SampleWeights> = query
        .iter()
        .map(|s| SampleWeights::compute(s, prototypes))
        .collect();
    let own = threshold_stats(&pooled_weights(&weights, &all))?;
    let stats = match cfg.query_stats {
        QueryStats::Own => own,
        QueryStats::Support => support_stats,
    };
    let kept = filter_once(&weights, &all, stats, cfg);
    Ok(FilterResult {
        kept,
        weights: weights.into_iter().map(|w| w.averaged).collect(),
        mu_bar: stats.mu_bar,
        sigma_bar: stats.sigma_bar,
        sigma_bar_0: own.sigma_bar,
        iterations: 1,
        sigma_history: vec![own.sigma_bar],
    })
}
