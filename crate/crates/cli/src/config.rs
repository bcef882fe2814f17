//! Strict JSON configuration files for each command.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use spatial_lp::dataset::{DensityConfig, Region};
use spatial_lp::inference::{default_order, default_tau, InferenceSettings};
use spatial_lp::kernels::{KernelConfig, TaperConfig};
use spatial_lp::mc::ErrorConfig;
use spatial_lp::surface::SurfaceConfig;

/// Reads and parses `path`, reporting JSON syntax and schema errors with
/// the byte offset of the offending position.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<(T, serde_json::Value)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| located(path, &text, e))?;
    let parsed = serde_json::from_str(&text).map_err(|e| located(path, &text, e))?;
    Ok((parsed, value))
}

fn located(path: &Path, text: &str, e: serde_json::Error) -> anyhow::Error {
    let offset = byte_offset(text, e.line(), e.column());
    anyhow!(
        "{}: byte {offset} (line {}, column {}): {e}",
        path.display(),
        e.line(),
        e.column()
    )
}

/// Byte offset of a 1-based line and column.
pub fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (start + column.saturating_sub(1)).min(text.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub n: usize,
    pub region: Region,
    #[serde(default)]
    pub density: DensityConfig,
    pub mean: SurfaceConfig,
    pub error: ErrorConfig,
    #[serde(default)]
    pub seed: u64,
    /// When present, a second independent sample with this mean is written
    /// to `data2.csv`. With a two-component field both samples share the
    /// driving measure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean2: Option<SurfaceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n2: Option<usize>,
}

/// Evaluation points as a regular grid: `points` per axis from `lo` to `hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub points: Vec<usize>,
}

impl GridConfig {
    pub fn points(&self) -> Result<Vec<Vec<f64>>> {
        let d = self.lo.len();
        if self.hi.len() != d || self.points.len() != d || d == 0 {
            return Err(anyhow!("grid lo, hi and points must have the same length"));
        }
        if self.points.contains(&0) {
            return Err(anyhow!("grid needs at least one point per axis"));
        }
        let axes: Vec<Vec<f64>> = (0..d)
            .map(|j| {
                let k = self.points[j];
                (0..k)
                    .map(|i| {
                        if k == 1 {
                            0.5 * (self.lo[j] + self.hi[j])
                        } else {
                            self.lo[j] + (self.hi[j] - self.lo[j]) * i as f64 / (k - 1) as f64
                        }
                    })
                    .collect()
            })
            .collect();
        let mut out = vec![Vec::new()];
        for axis in &axes {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    axis.iter().map(move |&v| {
                        let mut p = prefix.clone();
                        p.push(v);
                        p
                    })
                })
                .collect();
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitCommandConfig {
    #[serde(default = "default_order")]
    pub p: usize,
    #[serde(default)]
    pub kernel: KernelConfig,
    pub h: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pilot_h: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance_h: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_h: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taper: Option<TaperConfig>,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub ridge_eps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    /// Region sides, for data files without an `# A=` line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<Region>,
}

impl FitCommandConfig {
    pub fn inference(&self) -> InferenceSettings {
        InferenceSettings {
            p: self.p,
            kernel: self.kernel.clone(),
            h: self.h.clone(),
            pilot_h: self.pilot_h.clone(),
            variance_h: self.variance_h.clone(),
            residual_h: self.residual_h.clone(),
            taper: self.taper.clone(),
            tau: self.tau,
            ridge_eps: self.ridge_eps,
        }
    }

    pub fn evaluation_points(&self) -> Result<Vec<Vec<f64>>> {
        match (&self.z, &self.grid) {
            (Some(z), None) => Ok(vec![z.clone()]),
            (None, Some(g)) => g.points(),
            _ => Err(anyhow!("fit config needs exactly one of `z` or `grid`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoSampleCommandConfig {
    #[serde(default = "default_order")]
    pub p: usize,
    #[serde(default)]
    pub kernel: KernelConfig,
    pub h: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance_h: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_h: Option<Vec<f64>>,
    pub taper: TaperConfig,
    pub z: Vec<f64>,
    #[serde(default)]
    pub idx: String,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<Region>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsConfig {
    pub d: usize,
    #[serde(default = "default_order")]
    pub p: usize,
    #[serde(default)]
    pub kernel: KernelConfig,
}
