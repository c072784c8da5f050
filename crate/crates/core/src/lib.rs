//! Few-shot classification over local descriptor tensors.
//!
//! The pipeline normalizes each image's `C x H x W` descriptor tensor
//! ([`cross_norm`]), smooths every descriptor with the mean of its nearest
//! peers ([`neighborhood`]), iteratively drops support descriptors whose
//! class-averaged prototype similarity is an outlier on the low side
//! ([`filter`]), filters the queries against the final prototypes, and scores
//! each query against each class with an image-to-class k-NN measure
//! ([`classifier`]). [`eval`] runs the whole thing over sampled episodes.

pub mod classifier;
pub mod cross_norm;
pub mod descriptor;
pub mod episode;
pub mod error;
pub mod eval;
pub mod filter;
pub mod io;
pub mod neighborhood;
pub mod prototype;
pub mod stats;
pub mod synthetic;

pub use classifier::{classify, image_to_class_score, ClassPool, ClassScores, ClassifierConfig};
pub use cross_norm::{
    channel_normalize, cross_normalize, l2_normalize, spatial_normalize, CrossNormParams,
    Normalization,
};
pub use descriptor::{
    validate_episode, ClassId, DescriptorPool, DescriptorSet, Episode, EpisodeViolation,
    LabeledSample,
};
pub use episode::{sample_episode, DescriptorDataset};
pub use error::{Error, Result};
pub use eval::{
    evaluate_episode, paired_comparison, report_read, report_write, run, run_on_dataset,
    DataSource, EpisodeSpec, NormalizeMode, PipelineConfig, RunConfig, RunReport,
};
pub use filter::{
    aggregate_weights, descriptor_weights, filter_once, filter_query, iterative_filter_support,
    threshold_stats, FilterConfig, FilterMode, FilterResult, PreparedSample, QueryStats,
};
pub use neighborhood::{
    cosine_similarity, knn_indices, neighborhood_representation, NeighborhoodConfig,
};
pub use prototype::{all_prototypes, class_prototype, ClassPrototype};
pub use synthetic::{generate_synthetic, SyntheticDataset, SyntheticSpec};
