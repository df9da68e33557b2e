//! The single run configuration file.
//!
//! ```toml
//! seed = 7
//! out_dir = "runs/demo"
//!
//! [dataset]
//! objects = 8
//!
//! [plant]
//! safety_s = 1.05
//!
//! [geometry]
//! beta = 0.6
//!
//! [codec]
//! latent_dim = 16
//!
//! [diffusion]
//! train_steps = 2000
//!
//! [control]
//! r_weight = 1.0
//!
//! [experiment]
//! episodes_per_class = 10
//! ```
//!
//! Every section is optional and falls back to defaults; unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::CodecConfig;
use crate::control::ServoConfig;
use crate::dataset::DatasetConfig;
use crate::diffusion::DiffusionConfig;
use crate::error::{Error, Result};
use crate::geometry::{RankWeights, DEFAULT_NEIGHBORS};
use crate::plant::PlantConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    /// Neighbours used for normal and curvature estimation.
    pub normal_neighbors: usize,
    pub top_n: usize,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        let w = RankWeights::default();
        GeometryConfig {
            alpha: w.alpha,
            beta: w.beta,
            gamma: w.gamma,
            delta: w.delta,
            normal_neighbors: DEFAULT_NEIGHBORS,
            top_n: 1,
        }
    }
}

impl GeometryConfig {
    pub fn weights(&self) -> RankWeights {
        RankWeights {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            delta: self.delta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights().validate().map_err(|e| Error::Config(format!("geometry: {e}")))?;
        if self.normal_neighbors < 3 {
            return Err(Error::Config("geometry.normal_neighbors must be at least 3".into()));
        }
        if self.top_n == 0 {
            return Err(Error::Config("geometry.top_n must be at least 1".into()));
        }
        Ok(())
    }
}

/// Which goal the closed-loop policy servos toward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GoalSource {
    /// Sampled by the diffusion model.
    #[default]
    Ldm,
    /// Encoded from the plant's own force-optimal imprint.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub episodes_per_class: usize,
    pub goal: GoalSource,
    /// Upper FOSG band: final force in `[F_slip, (1 + tol_f) F_slip]`.
    pub tol_f: f64,
    /// Fixed-force preset as a multiple of the reference object's `F*`.
    pub fixed_force_factor: f64,
    /// Penetration past first contact commanded by the open-loop policy, mm.
    pub open_loop_squeeze_mm: f64,
    /// Whole grasps held out from training, taken as the last grasp of the
    /// first objects. Evaluation episodes and the image-metric table use them.
    pub held_out_grasps: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            episodes_per_class: 10,
            goal: GoalSource::Ldm,
            tol_f: 0.15,
            fixed_force_factor: 2.0,
            open_loop_squeeze_mm: 1.5,
            held_out_grasps: 8,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("experiment.{m}")));
        if self.episodes_per_class == 0 {
            return bad("episodes_per_class must be at least 1");
        }
        if !(self.tol_f >= 0.0) {
            return bad("tol_f must be non-negative");
        }
        if !(self.fixed_force_factor > 0.0) {
            return bad("fixed_force_factor must be positive");
        }
        if !(self.open_loop_squeeze_mm >= 0.0) {
            return bad("open_loop_squeeze_mm must be non-negative");
        }
        if self.held_out_grasps == 0 {
            return bad("held_out_grasps must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub plant: PlantConfig,
    pub geometry: GeometryConfig,
    pub codec: CodecConfig,
    pub diffusion: DiffusionConfig,
    pub control: ServoConfig,
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: None,
            dataset: DatasetConfig::default(),
            plant: PlantConfig::default(),
            geometry: GeometryConfig::default(),
            codec: CodecConfig::default(),
            diffusion: DiffusionConfig::default(),
            control: ServoConfig::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Config(format!("config file {} not found", path.display())),
            _ => Error::io(path, e),
        })?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.plant.validate()?;
        self.geometry.validate()?;
        self.codec.validate()?;
        self.diffusion.validate()?;
        self.control.validate()?;
        self.experiment.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn namespaced_override() {
        let c = RunConfig::parse("seed = 9\n[control]\nr_weight = 2.5\n[experiment]\ngoal = \"oracle\"\n").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.control.r_weight, 2.5);
        assert_eq!(c.experiment.goal, GoalSource::Oracle);
        assert_eq!(c.codec, CodecConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["bogus = 1", "[codec]\nlatent = 4", "[nonsense]\nx = 1", "[control]\nq = 1.0"] {
            assert!(matches!(RunConfig::parse(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for text in ["[control]\nforgetting = 1.5", "[geometry]\nalpha = 0.9", "[experiment]\nepisodes_per_class = 0"] {
            let err = RunConfig::parse(text).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{text}: {err}");
            assert_eq!(err.exit_code(), 2);
        }
    }

    #[test]
    fn round_trip() {
        let mut c = RunConfig::default();
        c.seed = 3;
        c.out_dir = Some("somewhere".into());
        c.diffusion.train_steps = 17;
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
    }
}
