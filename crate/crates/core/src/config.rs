//! Run configuration: every module config plus training and evaluation
//! settings, read from and written to JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversarial::DiscriminatorConfig;
use crate::dataset::{default_eval_captions, DataConfig};
use crate::error::{Error, Result};
use crate::generator::GeneratorConfig;
use crate::render::RenderSettings;
use crate::surface::SurfaceConfig;
use crate::text::TextConfig;
use crate::tpa::{Ablation, TpaConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    /// Training and discriminator resolution.
    pub img_res: usize,
    /// Resolution of exported renders.
    pub eval_img_res: usize,
    pub k_sharp: f64,
    pub samples: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { img_res: 32, eval_img_res: 64, k_sharp: 20.0, samples: 48 }
    }
}

impl RenderConfig {
    pub fn settings(&self) -> RenderSettings {
        RenderSettings { k_sharp: self.k_sharp, samples: self.samples }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch: usize,
    pub steps: usize,
    /// Zero writes only the final checkpoint.
    pub checkpoint_every: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda_r1: f64,
    pub w_clip: f64,
    pub mismatch: bool,
    /// Scale on the mismatch term in the discriminator objective.
    pub mismatch_weight: f64,
    pub clip: bool,
    /// Progress is logged every this many steps.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch: 8,
            steps: 2000,
            checkpoint_every: 500,
            lr_g: 0.001,
            lr_d: 0.002,
            beta1: 0.9,
            beta2: 0.999,
            lambda_r1: 1.0,
            w_clip: 0.1,
            mismatch: true,
            mismatch_weight: 1.0,
            clip: true,
            log_every: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub captions: Vec<String>,
    pub seeds: Vec<u64>,
    pub top_k: usize,
    pub bench_samples: usize,
    pub interpolation_steps: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { captions: default_eval_captions(), seeds: vec![0, 1, 2, 3], top_k: 1, bench_samples: 100, interpolation_steps: 8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub ablation: Ablation,
    /// Imported `.tpaemb` features replace the toy encoder when set.
    pub embeddings: Option<PathBuf>,
    pub text: TextConfig,
    pub generator: GeneratorConfig,
    pub tpa: TpaConfig,
    pub surface: SurfaceConfig,
    pub render: RenderConfig,
    pub discriminator: DiscriminatorConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            ablation: Ablation::Full,
            embeddings: None,
            text: TextConfig::default(),
            generator: GeneratorConfig::default(),
            tpa: TpaConfig::default(),
            surface: SurfaceConfig { sdf_prior_radius: Some(0.3), ..SurfaceConfig::default() },
            render: RenderConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            data: DataConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reduced model for the 2000-step overfit run on a single core.
    pub fn overfit() -> Self {
        let mut c = Self::default();
        c.generator.base_res = 1;
        c.generator.trunk_channels = 16;
        c.generator.style_dim = 32;
        c.generator.mapping_depth = 2;
        c.render.samples = 16;
        c.render.img_res = 32;
        c.surface.hidden = 16;
        c.discriminator = DiscriminatorConfig { base_channels: 8, max_channels: 32, feature_dim: 32 };
        c.train.checkpoint_every = 500;
        // Momentum makes the adversarial game overshoot into an empty scene.
        c.train.beta1 = 0.0;
        c.train.beta2 = 0.99;
        c
    }

    pub fn paper() -> Self {
        let mut c = Self { text: TextConfig::paper_scale(), generator: GeneratorConfig::paper_scale(), ..Self::default() };
        c.train.batch = 32;
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" | "desk" => Ok(Self::default()),
            "overfit" => Ok(Self::overfit()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::Config(format!("unknown preset `{other}`; expected default, overfit or paper"))),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Reads a JSON file, or a preset when the path is `preset:<name>`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if let Some(name) = path.to_str().and_then(|s| s.strip_prefix("preset:")) {
            return Self::preset(name);
        }
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.text.validate()?;
        self.generator.validate()?;
        self.render.settings().validate()?;
        self.data.validate()?;
        if self.render.img_res < 8 || self.render.eval_img_res < 8 {
            return Err(Error::Config("image resolutions must be at least 8".into()));
        }
        if self.surface.tet_res < 2 {
            return Err(Error::Config("tet_res must be at least 2".into()));
        }
        if self.train.batch == 0 {
            return Err(Error::Config("batch must be positive".into()));
        }
        if self.eval.top_k == 0 || self.eval.captions.len() < 2 * self.eval.top_k {
            return Err(Error::Config(format!(
                "retrieval needs at least {} captions for top-{}",
                2 * self.eval.top_k,
                self.eval.top_k
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_unknown_keys() {
        for name in ["default", "overfit", "paper"] {
            let c = RunConfig::preset(name).unwrap();
            assert_eq!(RunConfig::from_json(&c.to_json().unwrap()).unwrap(), c);
        }
        assert!(RunConfig::from_json(r#"{"seed": 1, "bogus": 2}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train": {"batchsize": 2}}"#).is_err());
        let c = RunConfig::from_json(r#"{"seed": 7, "ablation": "no_cross_word"}"#).unwrap();
        assert_eq!((c.seed, c.ablation), (7, Ablation::NoCrossWord));
    }
}
