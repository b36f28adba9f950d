//! The full model: text source, mapping network, generator with attention
//! blocks, surface heads and the two discriminators.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tpa3d_autodiff::{check_unique_names, load_checkpoint, save_checkpoint, Param, Parameterized};

use crate::adversarial::{DeskImageEmbedder, DiscriminatorPair};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::generator::{GeneratorOutput, LatentW, LatentZ, MappingNetwork, TriplaneGenerator, WordInput};
use crate::render::{render_view, Camera, RenderedView, TriplaneField};
use crate::surface::{marching_tets, texture_mesh, SurfaceHeads, TetGrid, TexturedMesh};
use crate::text::{filter_caption, load_embeddings, TextFeatures, TextWarning, ToyTextEncoder};
use crate::tpa::Ablation;
use crate::triplane::Triplane;

/// Where caption features come from.
#[derive(Clone, Debug)]
pub enum TextSource {
    Toy(ToyTextEncoder),
    /// Features keyed by filtered caption.
    Imported { features: BTreeMap<String, TextFeatures>, phrases: Vec<String> },
}

impl TextSource {
    pub fn from_config(config: &RunConfig) -> Result<Self> {
        match &config.embeddings {
            None => Ok(Self::Toy(ToyTextEncoder::new(config.text.clone())?)),
            Some(path) => {
                let raw = load_embeddings(path, &config.text)?;
                let features = raw.into_iter().map(|(k, v)| (filter_caption(&k, &config.text.phrases), v)).collect();
                Ok(Self::Imported { features, phrases: config.text.phrases.clone() })
            }
        }
    }

    pub fn is_imported(&self) -> bool {
        matches!(self, Self::Imported { .. })
    }

    pub fn encode(&self, caption: &str) -> Result<(TextFeatures, Vec<TextWarning>)> {
        match self {
            Self::Toy(enc) => Ok(enc.encode_str(caption)),
            Self::Imported { features, phrases } => {
                let key = filter_caption(caption, phrases);
                features
                    .get(&key)
                    .cloned()
                    .map(|f| (f, Vec::new()))
                    .ok_or_else(|| Error::Config(format!("caption `{key}` is not in the imported embeddings")))
            }
        }
    }
}

/// Generator-side outputs for one caption and seed.
#[derive(Clone, Debug)]
pub struct Generated {
    pub features: TextFeatures,
    pub latent: LatentW,
    pub output: GeneratorOutput,
}

#[derive(Debug)]
pub struct Tpa3d {
    pub config: RunConfig,
    pub text: TextSource,
    pub mapping: MappingNetwork,
    pub generator: TriplaneGenerator,
    pub heads: SurfaceHeads,
    pub discs: DiscriminatorPair,
    /// `None` when the similarity term has no matching embedder.
    pub embedder: Option<DeskImageEmbedder>,
}

impl Tpa3d {
    /// Fresh weights drawn from `config.seed`.
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let text = TextSource::from_config(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let g = &config.generator;
        let mapping = MappingNetwork::new(g, config.text.sentence_dim, &mut rng);
        let generator = TriplaneGenerator::new(g, &config.tpa, config.text.word_dim, &mut rng)?;
        let heads = SurfaceHeads::new(g.channels, &config.surface, &mut rng);
        let discs = DiscriminatorPair::new(config.render.img_res, config.text.sentence_dim, &config.discriminator, &mut rng)?;
        let embedder = (!text.is_imported()).then(|| DeskImageEmbedder::new(config.text.sentence_dim, DeskImageEmbedder::SEED));
        let model = Self { config: config.clone(), text, mapping, generator, heads, discs, embedder };
        check_unique_names(&model.params())?;
        Ok(model)
    }

    /// Builds the model and loads `checkpoint` when given.
    pub fn load(config: &RunConfig, checkpoint: Option<&Path>) -> Result<Self> {
        let model = Self::new(config)?;
        if let Some(path) = checkpoint {
            model.load_state(&load_checkpoint(path)?)?;
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_checkpoint(path, &self.state())?;
        Ok(())
    }

    /// Mapping network, generator, attention blocks and surface heads.
    pub fn generator_params(&self) -> Vec<&Param> {
        let mut v = self.mapping.params();
        v.extend(self.generator.params());
        v.extend(self.heads.params());
        v
    }

    pub fn discriminator_params(&self) -> Vec<&Param> {
        self.discs.params()
    }

    pub fn encode(&self, caption: &str) -> Result<TextFeatures> {
        let (features, _) = self.text.encode(caption)?;
        features.check_dims(&self.config.text)?;
        Ok(features)
    }

    pub fn latent(&self, features: &TextFeatures, seed: u64) -> Result<LatentW> {
        let z = LatentZ::sample(self.config.generator.z_dim, seed);
        self.mapping.map_latent(&z, &features.sentence_tensor())
    }

    pub fn synthesize(&self, latent: &LatentW, features: &TextFeatures, ablation: Ablation) -> Result<GeneratorOutput> {
        self.generator.synthesize(latent, &WordInput::from(features), ablation)
    }

    /// Caption and seed to final triplanes under the configured ablation.
    pub fn generate(&self, caption: &str, seed: u64) -> Result<Generated> {
        let features = self.encode(caption)?;
        self.generate_features(features, seed)
    }

    pub fn generate_features(&self, features: TextFeatures, seed: u64) -> Result<Generated> {
        let latent = self.latent(&features, seed)?;
        let output = self.synthesize(&latent, &features, self.config.ablation)?;
        Ok(Generated { features, latent, output })
    }

    pub fn render(&self, geo: &Triplane, tex: &Triplane, camera: &Camera) -> Result<RenderedView> {
        let field = TriplaneField { geo, tex, heads: &self.heads };
        render_view(&field, camera, &self.config.render.settings())
    }

    pub fn mesh(&self, geo: &Triplane, tex: &Triplane) -> Result<TexturedMesh> {
        let grid = TetGrid::new(self.config.surface.tet_res)?;
        self.mesh_on(&grid, geo, tex)
    }

    /// Extraction on a prebuilt grid.
    pub fn mesh_on(&self, grid: &TetGrid, geo: &Triplane, tex: &Triplane) -> Result<TexturedMesh> {
        let field = self.heads.surface_field(geo, grid)?;
        texture_mesh(&marching_tets(grid, &field)?, tex, &self.heads)
    }
}

impl Parameterized for Tpa3d {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.generator_params();
        v.extend(self.discriminator_params());
        v
    }
}
