//! TOML configuration. Every section is optional and every key inside a
//! section overrides the built-in default; unknown keys are rejected.

use std::path::Path;

use hoopmesh_core::camera::RefineConfig;
use hoopmesh_core::composer::ComposeConfig;
use hoopmesh_core::meshnet::{TlConfig, TrainConfig};
use hoopmesh_core::skinning::{FitConfig, HeatConfig};
use hoopmesh_core::synth::{toy_part_config, SceneConfig};
use serde::{Deserialize, Serialize};

use crate::formats::read_text;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub emd_samples: usize,
    pub icp_max_iterations: usize,
    pub icp_tolerance: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            emd_samples: hoopmesh_core::eval::DEFAULT_EMD_SAMPLES,
            icp_max_iterations: 50,
            icp_tolerance: 1e-8,
        }
    }
}

/// Limits checked by the pipeline; a stage passes when all of its checks do.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Mean court-keypoint reprojection error of the calibrated camera, px.
    pub reprojection_px: f64,
    pub calibrate_seconds: f64,
    /// Largest per-coordinate 2D error after the map round trip, crop px.
    pub codec_2d_px: f64,
    pub codec_3d_m: f64,
    /// Lowest-joint error when placing with the ground-truth camera, m.
    pub placement_exact_m: f64,
    pub weight_sum: f64,
    /// Fitted joint error after similarity alignment, mm.
    pub fit_mpjpe_pa_mm: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            reprojection_px: 0.5,
            calibrate_seconds: 1.0,
            codec_2d_px: 2.0,
            codec_3d_m: 1e-9,
            placement_exact_m: 1e-6,
            weight_sum: 1e-9,
            fit_mpjpe_pa_mm: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub examples: usize,
    pub dataset_seed: u64,
    pub init_seed: u64,
    /// Fixed toy architecture; not settable from TOML.
    #[serde(skip, default = "toy_part_config")]
    pub network: TlConfig,
    pub train: TrainConfig,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            examples: 50,
            dataset_seed: 7,
            init_seed: 1,
            network: toy_part_config(),
            train: TrainConfig {
                epochs: 1000,
                max_steps: Some(500),
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Config {
    pub scene: SceneConfig,
    pub refine: RefineConfig,
    pub heat: HeatConfig,
    pub fit: FitConfig,
    pub compose: ComposeConfig,
    pub eval: EvalConfig,
    pub thresholds: Thresholds,
    pub toy: ToyConfig,
}

fn merge(base: &mut toml::Table, user: toml::Table, path: &str) -> std::result::Result<(), String> {
    for (k, v) in user {
        let key = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => merge(b, u, &key)?,
            (Some(slot), v) => *slot = v,
            (None, v) if OPTIONAL_KEYS.contains(&key.as_str()) => {
                base.insert(k, v);
            }
            (None, _) => return Err(format!("unknown key `{key}`")),
        }
    }
    Ok(())
}

/// Keys whose default is "unset" and therefore absent from the defaults table.
const OPTIONAL_KEYS: &[&str] = &["heat.bones", "toy.train.max_steps"];

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut base = toml::Table::try_from(Config::default()).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, user, "").map_err(Error::Config)?;
        let cfg: Config = base.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&read_text(path)?).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.fit.validate()?;
        self.toy.network.validate()?;
        if self.eval.emd_samples == 0 {
            return Err(Error::Config("eval.emd_samples must be positive".into()));
        }
        if self.compose.max_outer == 0 || self.compose.band.is_nan() || self.compose.band <= 0.0 || self.compose.push.is_nan() || self.compose.push <= 0.0 {
            return Err(Error::Config("compose band, push and max_outer must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(Config::from_toml_str("").unwrap(), Config::default());
    }

    #[test]
    fn partial_override() {
        let cfg = Config::from_toml_str("[scene]\nclick_noise = 0.5\n[scene.focal]\nmax = 2000.0\n[toy.train]\nmax_steps = 20\n").unwrap();
        assert_eq!(cfg.scene.click_noise, 0.5);
        assert_eq!(cfg.scene.focal.max, 2000.0);
        assert_eq!(cfg.scene.focal.min, SceneConfig::default().focal.min);
        assert_eq!(cfg.toy.train.max_steps, Some(20));
        assert_eq!(cfg.compose, ComposeConfig::default());
    }

    #[test]
    fn unknown_keys_and_bad_values() {
        assert!(matches!(Config::from_toml_str("[scene]\nclik_noise = 1.0\n"), Err(Error::Config(_))));
        assert!(matches!(Config::from_toml_str("[bogus]\n"), Err(Error::Config(_))));
        assert!(Config::from_toml_str("[scene.elevation]\nmin = 20.0\nmax = 10.0\n").is_err());
        assert!(matches!(Config::from_toml_str("[scene]\nwidth = \"wide\"\n"), Err(Error::Config(_))));
    }
}
