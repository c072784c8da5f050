//! Cross normalization: spatial-level and channel-level standardization fused
//! with positive weights, plus the plain per-descriptor L2 normalization used
//! as the ablation baseline.

use serde::{Deserialize, Serialize};

use crate::descriptor::DescriptorSet;
use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Scalar affine map `weight * x + bias`, the 1x1 single-channel convolution
/// applied to the per-position mean map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub weight: f64,
    pub bias: f64,
}

impl Affine {
    pub fn apply(&self, x: f64) -> f64 {
        self.weight * x + self.bias
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossNormParams {
    /// Gate on the standardized value (conv1).
    pub spatial_scale: Affine,
    /// Additive term (conv2).
    pub spatial_shift: Affine,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub omega1: f64,
    pub omega2: f64,
    pub epsilon: f64,
}

impl CrossNormParams {
    /// Untrained parameters: both branches reduce to plain standardization and
    /// are averaged with equal weight.
    pub fn identity(channels: usize) -> Self {
        Self {
            spatial_scale: Affine {
                weight: 0.0,
                bias: 1.0,
            },
            spatial_shift: Affine {
                weight: 0.0,
                bias: 0.0,
            },
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            omega1: 1.0,
            omega2: 1.0,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.spatial_scale.weight,
            self.spatial_scale.bias,
            self.spatial_shift.weight,
            self.spatial_shift.bias,
            self.omega1,
            self.omega2,
            self.epsilon,
        ]
        .iter()
        .chain(&self.gamma)
        .chain(&self.beta)
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("cross-norm parameters must be finite".into()));
        }
        if self.omega1 <= 0.0 || self.omega2 <= 0.0 {
            return Err(Error::Config(format!(
                "fusion weights must be positive, got omega1={} omega2={}",
                self.omega1, self.omega2
            )));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.gamma.len() != self.beta.len() {
            return Err(Error::Config(format!(
                "gamma has {} entries but beta has {}",
                self.gamma.len(),
                self.beta.len()
            )));
        }
        Ok(())
    }

    fn check_channels(&self, channels: usize) -> Result<()> {
        if self.gamma.len() != channels || self.beta.len() != channels {
            return Err(Error::Config(format!(
                "cross-norm parameters are for {} channels, data has {channels}",
                self.gamma.len()
            )));
        }
        Ok(())
    }

    /// Mixing coefficients `(omega1 / (omega1 + omega2), omega2 / (omega1 + omega2))`.
    pub fn fusion_coefficients(&self) -> (f64, f64) {
        let total = self.omega1 + self.omega2;
        (self.omega1 / total, self.omega2 / total)
    }
}

/// Per-position standardization across channels, gated and shifted by affine
/// maps of the per-position channel mean.
pub fn spatial_normalize(d: &DescriptorSet, p: &CrossNormParams) -> Result<DescriptorSet> {
    p.validate()?;
    let c = d.channels() as f64;
    let mut out = Vec::with_capacity(d.as_slice().len());
    for col in d.columns() {
        let mean = col.iter().map(|&v| v as f64).sum::<f64>() / c;
        let var = col
            .iter()
            .map(|&v| {
                let dv = v as f64 - mean;
                dv * dv
            })
            .sum::<f64>()
            / c;
        let inv = 1.0 / (var + p.epsilon).sqrt();
        let gate = p.spatial_scale.apply(mean);
        let shift = p.spatial_shift.apply(mean);
        out.extend(
            col.iter()
                .map(|&v| ((v as f64 - mean) * inv * gate + shift) as f32),
        );
    }
    Ok(d.with_data_unchecked(out))
}

/// Per-channel standardization over spatial positions with scale `gamma` and shift `beta`.
pub fn channel_normalize(d: &DescriptorSet, p: &CrossNormParams) -> Result<DescriptorSet> {
    p.validate()?;
    p.check_channels(d.channels())?;
    let channels = d.channels();
    let n = d.len() as f64;
    let mut mean = vec![0.0f64; channels];
    for col in d.columns() {
        for (m, &v) in mean.iter_mut().zip(col) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0f64; channels];
    for col in d.columns() {
        for ((s, &v), &m) in var.iter_mut().zip(col).zip(&mean) {
            let dv = v as f64 - m;
            *s += dv * dv;
        }
    }
    let scale: Vec<f64> = var
        .iter()
        .zip(&p.gamma)
        .map(|(&s, &g)| g / (s / n + p.epsilon).sqrt())
        .collect();
    let mut out = Vec::with_capacity(d.as_slice().len());
    for col in d.columns() {
        for (ch, &v) in col.iter().enumerate() {
            out.push(((v as f64 - mean[ch]) * scale[ch] + p.beta[ch]) as f32);
        }
    }
    Ok(d.with_data_unchecked(out))
}

/// Weighted fusion of the spatial and channel branches.
pub fn cross_normalize(d: &DescriptorSet, p: &CrossNormParams) -> Result<DescriptorSet> {
    let xs = spatial_normalize(d, p)?;
    let xc = channel_normalize(d, p)?;
    Ok(fuse(&xs, &xc, p))
}

pub(crate) fn fuse(xs: &DescriptorSet, xc: &DescriptorSet, p: &CrossNormParams) -> DescriptorSet {
    let (w1, w2) = p.fusion_coefficients();
    let out = xs
        .as_slice()
        .iter()
        .zip(xc.as_slice())
        .map(|(&s, &c)| (s as f64 * w1 + c as f64 * w2) as f32)
        .collect();
    xs.with_data_unchecked(out)
}

/// Divides every descriptor by its Euclidean norm; zero descriptors pass through.
pub fn l2_normalize(d: &DescriptorSet) -> DescriptorSet {
    let mut out = Vec::with_capacity(d.as_slice().len());
    for col in d.columns() {
        let norm = col.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
        if norm > 0.0 {
            out.extend(col.iter().map(|&v| (v as f64 / norm) as f32));
        } else {
            out.extend_from_slice(col);
        }
    }
    d.with_data_unchecked(out)
}

/// Which normalization the pipeline applies to every image before anything else.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Cross(CrossNormParams),
    L2,
    None,
}

impl Normalization {
    pub fn apply(&self, d: &DescriptorSet) -> Result<DescriptorSet> {
        match self {
            Normalization::Cross(p) => cross_normalize(d, p),
            Normalization::L2 => Ok(l2_normalize(d)),
            Normalization::None => Ok(d.clone()),
        }
    }
}
