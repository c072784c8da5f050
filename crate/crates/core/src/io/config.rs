//! Text configuration files: cross-normalization parameters and synthetic specs (TOML).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cross_norm::{Affine, CrossNormParams, DEFAULT_EPSILON};
use crate::error::{Error, Result};
use crate::synthetic::SyntheticSpec;

/// On-disk layout of a cross-normalization parameter file.
///
/// ```toml
/// a1 = 0.0
/// b1 = 1.0
/// a2 = 0.0
/// b2 = 0.0
/// gamma = [1.0, 1.0]
/// beta = [0.0, 0.0]
/// omega1 = 1.0
/// omega2 = 1.0
/// epsilon = 1e-5
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CrossNormFile {
    a1: f64,
    b1: f64,
    a2: f64,
    b2: f64,
    gamma: Vec<f64>,
    beta: Vec<f64>,
    omega1: f64,
    omega2: f64,
    #[serde(default = "default_epsilon")]
    epsilon: f64,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

impl From<CrossNormFile> for CrossNormParams {
    fn from(f: CrossNormFile) -> Self {
        Self {
            spatial_scale: Affine {
                weight: f.a1,
                bias: f.b1,
            },
            spatial_shift: Affine {
                weight: f.a2,
                bias: f.b2,
            },
            gamma: f.gamma,
            beta: f.beta,
            omega1: f.omega1,
            omega2: f.omega2,
            epsilon: f.epsilon,
        }
    }
}

impl From<&CrossNormParams> for CrossNormFile {
    fn from(p: &CrossNormParams) -> Self {
        Self {
            a1: p.spatial_scale.weight,
            b1: p.spatial_scale.bias,
            a2: p.spatial_shift.weight,
            b2: p.spatial_shift.bias,
            gamma: p.gamma.clone(),
            beta: p.beta.clone(),
            omega1: p.omega1,
            omega2: p.omega2,
            epsilon: p.epsilon,
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn format_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub fn parse_cross_norm_params(text: &str, path: &Path) -> Result<CrossNormParams> {
    let file: CrossNormFile = toml::from_str(text).map_err(|e| format_error(path, e))?;
    let params = CrossNormParams::from(file);
    params.validate().map_err(|e| format_error(path, e))?;
    Ok(params)
}

pub fn load_cross_norm_params(path: impl AsRef<Path>) -> Result<CrossNormParams> {
    let path = path.as_ref();
    parse_cross_norm_params(&read_text(path)?, path)
}

pub fn cross_norm_params_to_string(p: &CrossNormParams) -> String {
    toml::to_string(&CrossNormFile::from(p)).expect("plain numeric fields always serialize")
}

pub fn save_cross_norm_params(p: &CrossNormParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, cross_norm_params_to_string(p)).map_err(|e| Error::io(path, e))
}

/// Parses a synthetic spec; missing keys take their defaults.
pub fn parse_synthetic_spec(text: &str, path: &Path) -> Result<SyntheticSpec> {
    let spec: SyntheticSpec = toml::from_str(text).map_err(|e| format_error(path, e))?;
    spec.validate().map_err(|e| format_error(path, e))?;
    Ok(spec)
}

pub fn load_synthetic_spec(path: impl AsRef<Path>) -> Result<SyntheticSpec> {
    let path = path.as_ref();
    parse_synthetic_spec(&read_text(path)?, path)
}
