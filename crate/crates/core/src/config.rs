//! Pipeline configuration: one JSON document with a section per stage.
//! Every field has a default, so an empty object `{}` is a valid config.

use crate::error::{Error, Result};
use crate::shade::ShadowConfig;
use crate::stabilize::StabilizeConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    /// Tile size for patchwise blending.
    pub patch: usize,
    /// Tile overlap in pixels.
    pub overlap: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig { patch: 512, overlap: 64 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ConsistencyConfig {
    /// Absolute forward/backward round-trip threshold, pixels.
    pub abs_thresh: f64,
    /// Relative threshold as a fraction of the flow magnitude.
    pub rel_thresh: f64,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        ConsistencyConfig { abs_thresh: 1.5, rel_thresh: 0.05 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ShadingConfig {
    /// Environment quadrature resolution in theta.
    pub n_theta: usize,
    /// Environment quadrature resolution in phi.
    pub n_phi: usize,
    pub exposure: f64,
    pub gamma: f64,
}

impl Default for ShadingConfig {
    fn default() -> Self {
        ShadingConfig { n_theta: 32, n_phi: 64, exposure: 1.0, gamma: 2.2 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LossesConfig {
    /// Contrast sensitivity for edge weights.
    pub sigma: f64,
    /// Huber threshold for the depth TV loss, meters.
    pub delta: f64,
}

impl Default for LossesConfig {
    fn default() -> Self {
        LossesConfig { sigma: 0.1, delta: 0.01 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub ensemble: EnsembleConfig,
    pub consistency: ConsistencyConfig,
    pub stabilize: StabilizeConfig,
    pub shading: ShadingConfig,
    pub shadow: ShadowConfig,
    pub losses: LossesConfig,
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidParam(format!("config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.ensemble.patch == 0 || self.ensemble.overlap >= self.ensemble.patch {
            problems.push("ensemble: overlap must be smaller than patch".to_string());
        }
        if self.consistency.abs_thresh < 0.0 || self.consistency.rel_thresh < 0.0 {
            problems.push("consistency thresholds must be >= 0".to_string());
        }
        if self.shading.n_theta < 1 || self.shading.n_phi < 1 {
            problems.push("shading quadrature must be >= 1 in both axes".to_string());
        }
        if !(self.shading.gamma > 0.0) {
            problems.push("gamma must be > 0".to_string());
        }
        if !(self.shading.exposure > 0.0) {
            problems.push("exposure must be > 0".to_string());
        }
        if !(self.losses.sigma > 0.0) || !(self.losses.delta > 0.0) {
            problems.push("losses: sigma and delta must be > 0".to_string());
        }
        if let Err(Error::Validation(mut v)) = self.stabilize.validate() {
            problems.append(&mut v);
        }
        if let Err(Error::Validation(mut v)) = self.shadow.validate() {
            problems.append(&mut v);
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// Canonical JSON used for the reproducibility record hash.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
