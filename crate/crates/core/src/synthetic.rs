//! Synthetic descriptor datasets with planted foreground and background.
//!
//! Every class owns a unit direction `u_c = sqrt(1 - rho) * e_c + sqrt(rho) * o`,
//! where `o` is an "object" direction common to all classes and
//! `rho = class_similarity` is the cosine between any two class directions.
//! A fraction of each image's positions (the foreground) carry
//! `signal_to_noise * u_c`. Each image picks one of `background_modes` unit
//! background directions (its scene) and all of its remaining positions carry
//! that direction; with zero modes they carry noise only. The directions `o`,
//! `e_c` and the background directions are orthonormal whenever they fit in
//! `C` dimensions, and independent random unit vectors otherwise.
//!
//! Every descriptor gets isotropic Gaussian noise of unit expected squared
//! norm (per-component variance `1 / C`), so `signal_to_noise` is the ratio of
//! foreground magnitude to noise magnitude and background has magnitude equal
//! to the noise. Ground-truth foreground masks are returned alongside the data.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::descriptor::{ClassId, DescriptorSet, LabeledSample};
use crate::episode::DescriptorDataset;
use crate::error::{Error, Result};

/// Generator parameters. The defaults are the planted-background benchmark
/// used by the ablation tests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub samples_per_class: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub foreground_fraction: f64,
    pub signal_to_noise: f64,
    pub background_modes: usize,
    /// Cosine between any two class directions, in `[0, 1)`.
    pub class_similarity: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_classes: 20,
            samples_per_class: 30,
            channels: 64,
            height: 7,
            width: 7,
            foreground_fraction: 0.7,
            signal_to_noise: 2.0,
            background_modes: 16,
            class_similarity: 0.8,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0
            || self.samples_per_class == 0
            || self.channels == 0
            || self.height == 0
            || self.width == 0
        {
            return Err(Error::Config(
                "synthetic sizes (classes, samples, C, H, W) must be positive".into(),
            ));
        }
        if !(self.foreground_fraction > 0.0 && self.foreground_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "foreground_fraction must be in (0, 1], got {}",
                self.foreground_fraction
            )));
        }
        if !(self.signal_to_noise >= 0.0 && self.signal_to_noise.is_finite()) {
            return Err(Error::Config(format!(
                "signal_to_noise must be a nonnegative number, got {}",
                self.signal_to_noise
            )));
        }
        if !(self.class_similarity >= 0.0 && self.class_similarity < 1.0) {
            return Err(Error::Config(format!(
                "class_similarity must be in [0, 1), got {}",
                self.class_similarity
            )));
        }
        Ok(())
    }

    /// Foreground positions per image.
    pub fn foreground_count(&self) -> usize {
        let n = self.height * self.width;
        ((self.foreground_fraction * n as f64).round() as usize).clamp(1, n)
    }

    /// Whether the object, class and background directions are exactly orthonormal.
    pub fn orthogonal_directions(&self) -> bool {
        1 + self.n_classes + self.background_modes <= self.channels
    }
}

/// A generated dataset with per-sample foreground masks (indexed like
/// `dataset.samples`; `sample_id` equals the sample's position).
#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub dataset: DescriptorDataset,
    pub masks: Vec<Vec<bool>>,
    pub class_directions: Vec<Vec<f64>>,
    pub background_directions: Vec<Vec<f64>>,
}

impl SyntheticDataset {
    pub fn mask(&self, sample_id: u64) -> Option<&[bool]> {
        self.masks.get(sample_id as usize).map(Vec::as_slice)
    }
}

fn gaussian_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Scales `v` to unit length; `None` for a (numerically) zero vector.
fn normalized(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let norm = dot(&v, &v).sqrt();
    if norm <= 1e-9 {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Some(v)
}

/// `count` unit vectors, mutually orthogonal when `orthogonal` is set
/// (Gram-Schmidt over Gaussian draws, redrawing degenerate ones).
fn directions(rng: &mut ChaCha8Rng, dim: usize, count: usize, orthogonal: bool) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    while out.len() < count {
        let mut v = gaussian_vector(rng, dim);
        if orthogonal {
            for d in &out {
                let p = dot(&v, d);
                v.iter_mut().zip(d).for_each(|(x, y)| *x -= p * y);
            }
        }
        if let Some(v) = normalized(v) {
            out.push(v);
        }
    }
    out
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let c = spec.channels;
    let n = spec.height * spec.width;
    let noise_std = 1.0 / (c as f64).sqrt();

    let mut basis = directions(
        &mut rng,
        c,
        1 + spec.n_classes + spec.background_modes,
        spec.orthogonal_directions(),
    );
    let background_dirs = basis.split_off(1 + spec.n_classes);
    let object = basis.remove(0);
    let (own, shared) = (
        (1.0 - spec.class_similarity).sqrt(),
        spec.class_similarity.sqrt(),
    );
    let class_dirs: Vec<Vec<f64>> = basis
        .into_iter()
        .map(|e| {
            let u: Vec<f64> = e
                .iter()
                .zip(&object)
                .map(|(a, o)| own * a + shared * o)
                .collect();
            normalized(u).expect("mix of unit vectors with a positive own weight")
        })
        .collect();
    let fg_count = spec.foreground_count();

    let mut samples = Vec::with_capacity(spec.n_classes * spec.samples_per_class);
    let mut masks = Vec::with_capacity(samples.capacity());
    for (class, dir) in class_dirs.iter().enumerate() {
        for _ in 0..spec.samples_per_class {
            let mut mask = vec![false; n];
            for pos in index::sample(&mut rng, n, fg_count).iter() {
                mask[pos] = true;
            }
            let scene = (!background_dirs.is_empty())
                .then(|| &background_dirs[rng.random_range(0..background_dirs.len())]);
            let mut data = Vec::with_capacity(n * c);
            for &fg in &mask {
                let base: Option<(&[f64], f64)> = if fg {
                    Some((dir, spec.signal_to_noise))
                } else {
                    scene.map(|d| (d.as_slice(), 1.0))
                };
                for ch in 0..c {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    let signal = base.map_or(0.0, |(d, scale)| d[ch] * scale);
                    data.push((signal + noise * noise_std) as f32);
                }
            }
            let id = samples.len() as u64;
            samples.push(LabeledSample::new(
                DescriptorSet::new(c, spec.height, spec.width, data)?,
                ClassId(class as u32),
                id,
            ));
            masks.push(mask);
        }
    }
    let dataset = DescriptorDataset {
        classes: (0..spec.n_classes)
            .map(|i| format!("synthetic_{i:03}"))
            .collect(),
        samples,
        channels: c,
        height: spec.height,
        width: spec.width,
        source: format!("synthetic(seed={})", spec.seed),
    };
    Ok(SyntheticDataset {
        dataset,
        masks,
        class_directions: class_dirs,
        background_directions: background_dirs,
    })
}
