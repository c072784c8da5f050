//! Episodic evaluation: the per-episode pipeline (normalize, neighborhood
//! representation, support and query filtering, image-to-class scoring),
//! run-level aggregation and the JSON run report.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{classify, ClassPool, ClassScores, ClassifierConfig};
use crate::cross_norm::{CrossNormParams, Normalization};
use crate::descriptor::{DescriptorSet, Episode, LabeledSample};
use crate::episode::{sample_episode, DescriptorDataset};
use crate::error::{Error, Result};
use crate::filter::{
    filter_query, iterative_filter_support, FilterConfig, FilterResult, PreparedSample,
    ThresholdStats,
};
use crate::io::{load_cross_norm_params, read_dataset};
use crate::neighborhood::{neighborhood_representation, NeighborhoodConfig};
use crate::stats::{ci95_half_width, mean_and_sample_std};
use crate::synthetic::{generate_synthetic, SyntheticSpec};

pub const REPORT_FORMAT: &str = "ldwr-run-report/1";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizeMode {
    #[default]
    Cn,
    L2,
    None,
}

/// Every pipeline toggle. `None` for `neighborhood` or `filter` disables that stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub normalize: NormalizeMode,
    /// Cross-normalization parameters; identity parameters when absent.
    pub cn_params: Option<CrossNormParams>,
    pub neighborhood: Option<NeighborhoodConfig>,
    pub filter: Option<FilterConfig>,
    pub classifier: ClassifierConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            normalize: NormalizeMode::Cn,
            cn_params: None,
            neighborhood: Some(NeighborhoodConfig::default()),
            filter: Some(FilterConfig::default()),
            classifier: ClassifierConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// L2 normalization, raw descriptors for weighting, no filtering: a plain
    /// cosine image-to-class k-NN classifier.
    pub fn baseline() -> Self {
        Self {
            normalize: NormalizeMode::L2,
            cn_params: None,
            neighborhood: None,
            filter: None,
            classifier: ClassifierConfig::default(),
        }
    }

    pub fn normalization(&self, channels: usize) -> Result<Normalization> {
        Ok(match self.normalize {
            NormalizeMode::Cn => {
                let p = self
                    .cn_params
                    .clone()
                    .unwrap_or_else(|| CrossNormParams::identity(channels));
                p.validate()?;
                if p.gamma.len() != channels {
                    return Err(Error::Config(format!(
                        "cross-norm parameters are for {} channels, data has {channels}",
                        p.gamma.len()
                    )));
                }
                Normalization::Cross(p)
            }
            NormalizeMode::L2 => Normalization::L2,
            NormalizeMode::None => Normalization::None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub n_way: usize,
    pub k_shot: usize,
    pub n_query_per_class: usize,
    pub episode_count: usize,
    pub seed: u64,
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        Self {
            n_way: 5,
            k_shot: 1,
            n_query_per_class: 15,
            episode_count: 600,
            seed: 42,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    File(PathBuf),
    Synthetic(SyntheticSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub episodes: EpisodeSpec,
    pub data: DataSource,
    /// Evaluate episodes on the rayon pool; results are identical either way.
    /// Not written to reports, so serial and parallel reports match byte for byte.
    #[serde(skip, default = "parallel_by_default")]
    pub parallel: bool,
    /// Record wall-clock time in the report (makes reports differ run to run).
    pub record_timing: bool,
}

fn parallel_by_default() -> bool {
    true
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes.episode_count == 0 {
            return Err(Error::Config("episode_count must be at least 1".into()));
        }
        if let Some(f) = &self.pipeline.filter {
            f.validate()?;
        }
        if let Some(n) = &self.pipeline.neighborhood {
            if n.k_neighbors == 0 {
                return Err(Error::Config("k_neighbors must be at least 1".into()));
            }
        }
        if self.pipeline.classifier.k_bar == 0 {
            return Err(Error::Config("k_bar must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub sample_id: u64,
    /// Episode-local class indices.
    pub true_class: usize,
    pub predicted: usize,
    pub scores: Vec<f64>,
    pub probabilities: Vec<f64>,
    /// Descriptors retained after query filtering.
    pub kept: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterDiagnostics {
    pub support_iterations: usize,
    pub support_kept_fraction: f64,
    pub query_kept_fraction: f64,
    pub mu_bar: f64,
    pub sigma_bar: f64,
    pub sigma_bar_0: f64,
    pub query_mu_bar: f64,
    pub query_sigma_bar: f64,
}

/// Background (ground-truth non-foreground) descriptors seen and removed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackgroundCounts {
    pub total: usize,
    pub removed: usize,
}

impl BackgroundCounts {
    pub fn recall(&self) -> Option<f64> {
        (self.total > 0).then(|| self.removed as f64 / self.total as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub index: usize,
    pub seed: u64,
    pub accuracy: f64,
    /// Dataset class ids behind episode-local indices.
    pub classes: Vec<u32>,
    pub queries: Vec<QueryOutcome>,
    pub filter: Option<FilterDiagnostics>,
    pub background: Option<BackgroundCounts>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format: String,
    pub config: RunConfig,
    pub episode_count: usize,
    pub mean_accuracy: f64,
    /// Sample standard deviation of per-episode accuracy.
    pub accuracy_std: f64,
    pub ci95_half_width: f64,
    pub background_recall: Option<f64>,
    pub wall_time_secs: Option<f64>,
    pub episodes: Vec<EpisodeReport>,
}

/// Everything computed for one episode, including kept sets.
#[derive(Clone, Debug)]
pub struct EpisodeOutcome {
    pub support_filter: FilterResult,
    pub query_filter: FilterResult,
    pub scores: Vec<ClassScores>,
    pub report: EpisodeReport,
}

/// Seed of episode `index` in a run seeded with `run_seed` (splitmix64 mixing).
pub fn episode_seed(run_seed: u64, index: usize) -> u64 {
    let mut z = run_seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn prepare(
    sample: &DescriptorSet,
    class_index: usize,
    norm: &Normalization,
    nr: Option<&NeighborhoodConfig>,
) -> Result<PreparedSample> {
    let features = norm.apply(sample)?;
    let neighborhoods = match nr {
        Some(cfg) => neighborhood_representation(features.as_pool(), cfg)?,
        None => features.as_slice().to_vec(),
    };
    Ok(PreparedSample {
        class_index,
        features,
        neighborhoods,
    })
}

fn prepare_all(
    e: &Episode,
    samples: &[LabeledSample],
    norm: &Normalization,
    nr: Option<&NeighborhoodConfig>,
) -> Result<Vec<PreparedSample>> {
    samples
        .iter()
        .map(|s| {
            let class = e.local_index(s.label).ok_or_else(|| {
                Error::InvalidData(format!(
                    "sample {} is not in the episode's classes",
                    s.sample_id
                ))
            })?;
            prepare(&s.descriptors, class, norm, nr)
        })
        .collect()
}

fn count_background(
    samples: &[LabeledSample],
    kept: &[Vec<usize>],
    masks: &dyn Fn(u64) -> Option<Vec<bool>>,
    counts: &mut BackgroundCounts,
) -> Option<()> {
    for (s, k) in samples.iter().zip(kept) {
        let mask = masks(s.sample_id)?;
        let mut is_kept = vec![false; mask.len()];
        for &i in k {
            is_kept[i] = true;
        }
        for (fg, kept) in mask.iter().zip(is_kept) {
            if !fg {
                counts.total += 1;
                if !kept {
                    counts.removed += 1;
                }
            }
        }
    }
    Some(())
}

/// Runs the whole pipeline on one episode. `masks` maps a sample id to its
/// ground-truth foreground mask, when known.
pub fn evaluate_episode(
    e: &Episode,
    cfg: &PipelineConfig,
    masks: Option<&dyn Fn(u64) -> Option<Vec<bool>>>,
) -> Result<EpisodeOutcome> {
    let (channels, _, _) = e
        .shape()
        .ok_or_else(|| Error::InvalidData("episode has no support samples".into()))?;
    let norm = cfg.normalization(channels)?;
    let nr = cfg.neighborhood.as_ref();
    let support = prepare_all(e, &e.support, &norm, nr)?;
    let query = prepare_all(e, &e.query, &norm, nr)?;

    let (support_filter, query_filter) = match &cfg.filter {
        Some(fc) => {
            let (sf, prototypes) = iterative_filter_support(&support, e.n_way, fc)?;
            let stats = ThresholdStats {
                mu_bar: sf.mu_bar,
                sigma_bar: sf.sigma_bar,
            };
            let qf = filter_query(&query, &prototypes, stats, fc)?;
            (sf, qf)
        }
        None => (
            FilterResult::keep_all(&support),
            FilterResult::keep_all(&query),
        ),
    };

    let pools: Vec<ClassPool> = (0..e.n_way)
        .map(|class| {
            ClassPool::from_descriptors(
                channels,
                support
                    .iter()
                    .zip(&support_filter.kept)
                    .filter(|(s, _)| s.class_index == class)
                    .flat_map(|(s, k)| k.iter().map(move |&i| s.features.column(i))),
            )
        })
        .collect();

    let mut scores = Vec::with_capacity(query.len());
    let mut outcomes = Vec::with_capacity(query.len());
    let mut correct = 0usize;
    for ((q, kept), sample) in query.iter().zip(&query_filter.kept).zip(&e.query) {
        let data: Vec<f32> = kept
            .iter()
            .flat_map(|&i| q.features.column(i).iter().copied())
            .collect();
        let r = classify(
            crate::descriptor::DescriptorPool::new(&data, channels),
            &pools,
            &cfg.classifier,
        )?;
        if r.predicted == q.class_index {
            correct += 1;
        }
        outcomes.push(QueryOutcome {
            sample_id: sample.sample_id,
            true_class: q.class_index,
            predicted: r.predicted,
            scores: r.scores.clone(),
            probabilities: r.probabilities.clone(),
            kept: kept.len(),
        });
        scores.push(r);
    }

    let filter = cfg.filter.as_ref().map(|_| FilterDiagnostics {
        support_iterations: support_filter.iterations,
        support_kept_fraction: support_filter.kept_fraction(),
        query_kept_fraction: query_filter.kept_fraction(),
        mu_bar: support_filter.mu_bar,
        sigma_bar: support_filter.sigma_bar,
        sigma_bar_0: support_filter.sigma_bar_0,
        query_mu_bar: query_filter.mu_bar,
        query_sigma_bar: query_filter.sigma_bar,
    });

    let background = masks.and_then(|m| {
        let mut counts = BackgroundCounts::default();
        count_background(&e.support, &support_filter.kept, m, &mut counts)?;
        count_background(&e.query, &query_filter.kept, m, &mut counts)?;
        Some(counts)
    });

    let report = EpisodeReport {
        index: 0,
        seed: 0,
        accuracy: correct as f64 / e.query.len() as f64,
        classes: e.classes.iter().map(|c| c.0).collect(),
        queries: outcomes,
        filter,
        background,
    };
    Ok(EpisodeOutcome {
        support_filter,
        query_filter,
        scores,
        report,
    })
}

/// Evaluates `cfg.episodes` on an in-memory dataset.
pub fn run_on_dataset(
    cfg: &RunConfig,
    ds: &DescriptorDataset,
    masks: Option<&[Vec<bool>]>,
) -> Result<RunReport> {
    cfg.validate()?;
    let started = Instant::now();
    let mask_lookup = |id: u64| masks.and_then(|m| m.get(id as usize).cloned());
    let spec = cfg.episodes;
    let one = |index: usize| -> Result<EpisodeReport> {
        let seed = episode_seed(spec.seed, index);
        let episode = sample_episode(ds, spec.n_way, spec.k_shot, spec.n_query_per_class, seed)
            .map_err(|e| e.in_episode(index))?;
        let lookup: Option<&dyn Fn(u64) -> Option<Vec<bool>>> = match masks {
            Some(_) => Some(&mask_lookup),
            None => None,
        };
        let mut report = evaluate_episode(&episode, &cfg.pipeline, lookup)
            .map_err(|e| e.in_episode(index))?
            .report;
        report.index = index;
        report.seed = seed;
        Ok(report)
    };
    let episodes: Vec<EpisodeReport> = if cfg.parallel {
        (0..spec.episode_count)
            .into_par_iter()
            .map(one)
            .collect::<Result<_>>()?
    } else {
        (0..spec.episode_count).map(one).collect::<Result<_>>()?
    };

    let accuracies: Vec<f64> = episodes.iter().map(|e| e.accuracy).collect();
    let (mean_accuracy, accuracy_std) = mean_and_sample_std(&accuracies).unwrap_or((0.0, 0.0));
    let background_recall = episodes
        .iter()
        .map(|e| e.background)
        .collect::<Option<Vec<_>>>()
        .and_then(|all| {
            all.iter()
                .fold(BackgroundCounts::default(), |acc, c| BackgroundCounts {
                    total: acc.total + c.total,
                    removed: acc.removed + c.removed,
                })
                .recall()
        });
    Ok(RunReport {
        format: REPORT_FORMAT.to_owned(),
        config: cfg.clone(),
        episode_count: episodes.len(),
        mean_accuracy,
        accuracy_std,
        ci95_half_width: ci95_half_width(&accuracies),
        background_recall,
        wall_time_secs: cfg.record_timing.then(|| started.elapsed().as_secs_f64()),
        episodes,
    })
}

/// Loads or generates the configured data and evaluates it.
pub fn run(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    match &cfg.data {
        DataSource::File(path) => {
            let ds = read_dataset(path)?;
            run_on_dataset(cfg, &ds, None)
        }
        DataSource::Synthetic(spec) => {
            let s = generate_synthetic(spec)?;
            run_on_dataset(cfg, &s.dataset, Some(&s.masks))
        }
    }
}

/// Loads cross-normalization parameters into `cfg` from a parameter file.
pub fn with_cn_params_file(mut cfg: PipelineConfig, path: &Path) -> Result<PipelineConfig> {
    cfg.cn_params = Some(load_cross_norm_params(path)?);
    Ok(cfg)
}

/// Paired per-episode comparison of two runs over the same episode stream.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub episodes: usize,
    /// Mean of `a - b` per-episode accuracy.
    pub mean_difference: f64,
    pub std_error: f64,
}

impl PairedComparison {
    /// Difference in units of its standard error (infinite when the error is 0
    /// and the difference is not).
    pub fn z(&self) -> f64 {
        if self.std_error > 0.0 {
            self.mean_difference / self.std_error
        } else if self.mean_difference == 0.0 {
            0.0
        } else {
            self.mean_difference.signum() * f64::INFINITY
        }
    }
}

pub fn paired_comparison(a: &RunReport, b: &RunReport) -> Result<PairedComparison> {
    if a.episodes.len() != b.episodes.len()
        || a.episodes
            .iter()
            .zip(&b.episodes)
            .any(|(x, y)| x.seed != y.seed)
    {
        return Err(Error::Config(
            "paired comparison needs runs over the same episode seeds".into(),
        ));
    }
    let diffs: Vec<f64> = a
        .episodes
        .iter()
        .zip(&b.episodes)
        .map(|(x, y)| x.accuracy - y.accuracy)
        .collect();
    let (mean, std) = mean_and_sample_std(&diffs).unwrap_or((0.0, 0.0));
    Ok(PairedComparison {
        episodes: diffs.len(),
        mean_difference: mean,
        std_error: std / (diffs.len().max(1) as f64).sqrt(),
    })
}

pub fn report_to_string(r: &RunReport) -> String {
    let mut s = serde_json::to_string_pretty(r).expect("report values are finite");
    s.push('\n');
    s
}

pub fn report_write(r: &RunReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, report_to_string(r)).map_err(|e| Error::io(path, e))
}

pub fn report_read(path: impl AsRef<Path>) -> Result<RunReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
