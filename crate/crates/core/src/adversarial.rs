//! Camera- and text-conditioned discriminators and the training objectives.
//!
//! Logit convention: the discriminator objective is the sum of
//! `g(D(fake)) + g(-D(real))` terms and is ascended, so a high logit means
//! "judged fake". The generator ascends `g(-D(fake))`, which is the
//! non-saturating direction under this convention.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tpa3d_autodiff::{grad, set_grad_enabled, softplus, Array, Param, Tensor};

use crate::error::{Error, Result};
use crate::nn::{fan_in_normal, Linear, LEAKY_SLOPE};
use crate::render::{Camera, RenderedView};

/// Distances are divided by this before entering the condition vector.
pub const DISTANCE_SCALE: f64 = 4.0;

/// `g(x) = -log(1 + exp(-x))`, evaluated without overflow.
pub fn g_softplus(x: f64) -> f64 {
    -softplus(-x)
}

/// Camera encoding and sentence vector.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscCondition {
    /// `(sin a, cos a, sin e, cos e, distance / DISTANCE_SCALE)`.
    pub camera: [f64; 5],
    pub sentence: Vec<f64>,
}

impl DiscCondition {
    pub fn new(camera: &Camera, sentence: &[f64]) -> Self {
        Self {
            camera: [
                camera.azimuth.sin(),
                camera.azimuth.cos(),
                camera.elevation.sin(),
                camera.elevation.cos(),
                camera.distance / DISTANCE_SCALE,
            ],
            sentence: sentence.to_vec(),
        }
    }

    pub fn with_sentence(&self, sentence: &[f64]) -> Self {
        Self { camera: self.camera, sentence: sentence.to_vec() }
    }

    pub fn len(&self) -> usize {
        5 + self.sentence.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tensor(&self) -> Tensor {
        let v: Vec<f64> = self.camera.iter().chain(&self.sentence).copied().collect();
        Tensor::constant(Array::new([1, v.len()], v).expect("nonempty"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    pub base_channels: usize,
    pub max_channels: usize,
    pub feature_dim: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { base_channels: 16, max_channels: 64, feature_dim: 64 }
    }
}

#[derive(Debug)]
struct ConvStage {
    weight: Param,
    bias: Param,
}

/// Conv/pool stack down to 4x4, then a projection-conditioned score.
#[derive(Debug)]
pub struct Discriminator {
    stages: Vec<ConvStage>,
    pub fc: Linear,
    pub cond: Linear,
    pub out: Linear,
    in_channels: usize,
    resolution: usize,
}

impl Discriminator {
    pub fn new(
        name: &str,
        in_channels: usize,
        resolution: usize,
        cond_dim: usize,
        config: &DiscriminatorConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if resolution < 4 || !resolution.is_power_of_two() {
            return Err(Error::Config(format!("discriminator resolution {resolution} must be a power of two >= 4")));
        }
        let n_stages = (resolution / 4).trailing_zeros() as usize;
        let mut stages = Vec::with_capacity(n_stages);
        let mut c_in = in_channels;
        for j in 0..n_stages {
            let c_out = (config.base_channels << j).min(config.max_channels);
            stages.push(ConvStage {
                weight: Param::new(format!("{name}.conv{j}.weight"), fan_in_normal([c_out, c_in, 3, 3], 9 * c_in, rng)),
                bias: Param::new(format!("{name}.conv{j}.bias"), Array::zeros([c_out])),
            });
            c_in = c_out;
        }
        let flat = c_in * 16;
        let f = config.feature_dim;
        Ok(Self {
            stages,
            fc: Linear::new(&format!("{name}.fc"), flat, f, rng),
            cond: Linear::new(&format!("{name}.cond"), cond_dim, f, rng),
            out: Linear::new(&format!("{name}.out"), f, 1, rng),
            in_channels,
            resolution,
        })
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v: Vec<&Param> = self.stages.iter().flat_map(|s| [&s.weight, &s.bias]).collect();
        v.extend(self.fc.params());
        v.extend(self.cond.params());
        v.extend(self.out.params());
        v
    }

    /// Scalar logit for a `[C x P x P]` image.
    pub fn logit(&self, image: &Tensor, cond: &DiscCondition) -> Result<Tensor> {
        let s = image.shape();
        if s.len() != 3 || s[0] != self.in_channels {
            return Err(Error::Usage(format!("discriminator expects {} channels, got {:?}", self.in_channels, s)));
        }
        if s[1] != self.resolution || s[2] != self.resolution {
            return Err(Error::Usage(format!("discriminator expects {}px images, got {:?}", self.resolution, s)));
        }
        let mut h = image.clone();
        for stage in &self.stages {
            h = h.conv2d(&stage.weight.tensor())?.add_axis(&stage.bias.tensor(), 0)?.leaky_relu(LEAKY_SLOPE).avg_pool2()?;
        }
        let feature = self.fc.forward(&h.reshape(&[1, h.len()])?)?.leaky_relu(LEAKY_SLOPE);
        let embed = self.cond.forward(&cond.tensor())?;
        let f = feature.len() as f64;
        let projection = feature.dot(&embed)?.scale(1.0 / f.sqrt());
        Ok(self.out.forward(&feature)?.reshape(&[1])?.add(&projection)?)
    }
}

/// Independent discriminators for RGB images and masks.
#[derive(Debug)]
pub struct DiscriminatorPair {
    pub rgb: Discriminator,
    pub mask: Discriminator,
}

impl DiscriminatorPair {
    pub fn new(resolution: usize, sentence_dim: usize, config: &DiscriminatorConfig, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            rgb: Discriminator::new("disc.rgb", 3, resolution, 5 + sentence_dim, config, rng)?,
            mask: Discriminator::new("disc.mask", 1, resolution, 5 + sentence_dim, config, rng)?,
        })
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = self.rgb.params();
        v.extend(self.mask.params());
        v
    }
}

/// `||d D(x) / d x||^2` at `image`, built so it can itself be differentiated.
pub fn r1_penalty(disc: &Discriminator, image: &Tensor, cond: &DiscCondition) -> Result<Tensor> {
    gradient_penalty(|x| disc.logit(x, cond), image)
}

/// Squared input-gradient norm of any scalar critic at `image`.
pub fn gradient_penalty(critic: impl Fn(&Tensor) -> Result<Tensor>, image: &Tensor) -> Result<Tensor> {
    let _mode = set_grad_enabled(true);
    let x = Tensor::leaf(image.value().clone(), true);
    let logit = critic(&x)?;
    if !logit.requires_grad() {
        return Ok(Tensor::scalar(0.0));
    }
    let g = grad(&logit, &[&x], true)?.pop().flatten();
    let r1 = match g {
        Some(g) => g.square().sum(),
        None => Tensor::scalar(0.0),
    };
    if !r1.item().is_finite() {
        return Err(Error::NonFinite(format!("gradient penalty is {}", r1.item())));
    }
    Ok(r1)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    /// `g(D_rgb(fake)) + g(-D_rgb(real))`, ascended by the discriminator.
    pub d_rgb: f64,
    pub d_mask: f64,
    /// `g(-D_rgb(fake))`, ascended by the generator.
    pub g_rgb: f64,
    pub g_mask: f64,
    /// Sum of `g(D(., t'))` over fake/real and rgb/mask.
    pub mismatch: f64,
    pub clip_sim: f64,
    /// Sum of both gradient penalties (before the weight).
    pub r1: f64,
}

impl LossTerms {
    pub const FIELDS: [&'static str; 7] = ["d_rgb", "d_mask", "g_rgb", "g_mask", "mismatch", "clip_sim", "r1"];

    pub fn values(&self) -> [f64; 7] {
        [self.d_rgb, self.d_mask, self.g_rgb, self.g_mask, self.mismatch, self.clip_sim, self.r1]
    }

    pub fn all_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }

    pub fn add(&mut self, o: &LossTerms) {
        self.d_rgb += o.d_rgb;
        self.d_mask += o.d_mask;
        self.g_rgb += o.g_rgb;
        self.g_mask += o.g_mask;
        self.mismatch += o.mismatch;
        self.clip_sim += o.clip_sim;
        self.r1 += o.r1;
    }

    pub fn scaled(&self, c: f64) -> LossTerms {
        LossTerms {
            d_rgb: self.d_rgb * c,
            d_mask: self.d_mask * c,
            g_rgb: self.g_rgb * c,
            g_mask: self.g_mask * c,
            mismatch: self.mismatch * c,
            clip_sim: self.clip_sim * c,
            r1: self.r1 * c,
        }
    }
}

/// `(g(D(fake)), g(-D(real)))` for one discriminator.
pub fn adversarial_terms(disc: &Discriminator, real: &Tensor, fake: &Tensor, cond: &DiscCondition) -> Result<(Tensor, Tensor)> {
    let fake_term = disc.logit(fake, cond)?.log_sigmoid();
    let real_term = disc.logit(real, cond)?.neg().log_sigmoid();
    Ok((fake_term, real_term))
}

/// Discriminator-step objective: the value to minimize plus logged terms.
pub struct DiscriminatorLoss {
    pub objective: Tensor,
    pub terms: LossTerms,
}

/// `-(d_rgb + d_mask) + lambda * (r1_rgb + r1_mask)`. `fake` should be
/// detached from the generator.
pub fn loss_d(
    discs: &DiscriminatorPair,
    real: &RenderedView,
    fake: &RenderedView,
    cond: &DiscCondition,
    lambda_r1: f64,
) -> Result<DiscriminatorLoss> {
    let (f_rgb, r_rgb) = adversarial_terms(&discs.rgb, &real.rgb, &fake.rgb, cond)?;
    let (f_mask, r_mask) = adversarial_terms(&discs.mask, &real.mask, &fake.mask, cond)?;
    let d_rgb = f_rgb.add(&r_rgb)?;
    let d_mask = f_mask.add(&r_mask)?;
    let mut objective = d_rgb.add(&d_mask)?.neg();
    let mut r1 = 0.0;
    if lambda_r1 != 0.0 {
        let p = r1_penalty(&discs.rgb, &real.rgb, cond)?.add(&r1_penalty(&discs.mask, &real.mask, cond)?)?;
        r1 = p.item();
        objective = objective.add(&p.scale(lambda_r1))?;
    }
    let terms = LossTerms { d_rgb: d_rgb.item(), d_mask: d_mask.item(), r1, ..LossTerms::default() };
    Ok(DiscriminatorLoss { objective, terms })
}

/// The four terms `g(D(x, t'))` in the order fake-rgb, real-rgb, fake-mask, real-mask.
pub fn mismatch_terms(discs: &DiscriminatorPair, fake: &RenderedView, real: &RenderedView, cond: &DiscCondition) -> Result<[Tensor; 4]> {
    Ok([
        discs.rgb.logit(&fake.rgb, cond)?.log_sigmoid(),
        discs.rgb.logit(&real.rgb, cond)?.log_sigmoid(),
        discs.mask.logit(&fake.mask, cond)?.log_sigmoid(),
        discs.mask.logit(&real.mask, cond)?.log_sigmoid(),
    ])
}

/// Sum of [`mismatch_terms`] under the mismatched sentence; ascended by the
/// discriminator so mismatched pairs are pushed toward "fake".
pub fn loss_mismatch(
    discs: &DiscriminatorPair,
    fake: &RenderedView,
    real: &RenderedView,
    matched: &DiscCondition,
    mismatched: &DiscCondition,
) -> Result<Tensor> {
    if matched.sentence == mismatched.sentence {
        return Err(Error::Usage("mismatched condition equals the matched one".into()));
    }
    let [a, b, c, d] = mismatch_terms(discs, fake, real, mismatched)?;
    Ok(a.add(&b)?.add(&c)?.add(&d)?)
}

/// Maps an RGB image to a `[1 x D]` embedding.
pub trait ImageEmbedder {
    fn embed(&self, rgb: &Tensor) -> Result<Tensor>;
}

/// Frozen random conv encoder: three 3x3 conv layers with leaky ReLU,
/// pooling between them, global average pooling and a linear projection.
#[derive(Debug, Clone)]
pub struct DeskImageEmbedder {
    convs: Vec<Tensor>,
    projection: Tensor,
}

impl DeskImageEmbedder {
    pub const SEED: u64 = 0x7E57_1A6E;

    pub fn new(out_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = [3, 16, 32, 32];
        let convs = widths
            .windows(2)
            .map(|w| Tensor::constant(fan_in_normal([w[1], w[0], 3, 3], 9 * w[0], &mut rng)))
            .collect();
        let projection = Tensor::constant(fan_in_normal([32, out_dim], 32, &mut rng));
        Self { convs, projection }
    }
}

impl ImageEmbedder for DeskImageEmbedder {
    fn embed(&self, rgb: &Tensor) -> Result<Tensor> {
        let mut h = rgb.clone();
        let last = self.convs.len() - 1;
        for (i, k) in self.convs.iter().enumerate() {
            h = h.conv2d(k)?.leaky_relu(LEAKY_SLOPE);
            if i < last && h.shape()[1] % 2 == 0 {
                h = h.avg_pool2()?;
            }
        }
        let c = h.shape()[0];
        let pooled = h.sum_to_axis(0)?.scale(1.0 / (h.len() / c) as f64);
        Ok(pooled.reshape(&[1, c])?.matmul(&self.projection)?)
    }
}

/// `1 - cos(embed(rgb), t_s)` with `1e-8` guarding the norms.
pub fn loss_clip_sim(rgb: &Tensor, sentence: &[f64], embedder: &dyn ImageEmbedder) -> Result<Tensor> {
    let e = embedder.embed(rgb)?;
    clip_distance(&e, sentence)
}

/// `1 - cos(e, t)` for an embedding tensor.
pub fn clip_distance(e: &Tensor, sentence: &[f64]) -> Result<Tensor> {
    let t = Tensor::constant(Array::new(e.shape().to_vec(), sentence.to_vec())?);
    let t_norm = sentence.iter().map(|x| x * x).sum::<f64>().sqrt();
    // The inner epsilon keeps the norm differentiable at a zero embedding.
    let e_norm = e.square().sum().add_scalar(1e-16).sqrt();
    let cos = e.dot(&t)?.div(&e_norm.scale(t_norm).add_scalar(1e-8))?;
    Ok(cos.neg().add_scalar(1.0))
}

pub struct GeneratorLoss {
    pub objective: Tensor,
    pub terms: LossTerms,
}

/// `-(g(-D_rgb(fake)) + g(-D_mask(fake))) + w_clip * clip`. Discriminator
/// parameters should be frozen.
pub fn generator_loss(
    discs: &DiscriminatorPair,
    fake: &RenderedView,
    cond: &DiscCondition,
    clip: Option<(&dyn ImageEmbedder, f64)>,
) -> Result<GeneratorLoss> {
    let g_rgb = discs.rgb.logit(&fake.rgb, cond)?.neg().log_sigmoid();
    let g_mask = discs.mask.logit(&fake.mask, cond)?.neg().log_sigmoid();
    let mut objective = g_rgb.add(&g_mask)?.neg();
    let mut clip_sim = 0.0;
    if let Some((embedder, weight)) = clip {
        let c = loss_clip_sim(&fake.rgb, &cond.sentence, embedder)?;
        clip_sim = c.item();
        if weight != 0.0 {
            objective = objective.add(&c.scale(weight))?;
        }
    }
    let terms = LossTerms { g_rgb: g_rgb.item(), g_mask: g_mask.item(), clip_sim, ..LossTerms::default() };
    Ok(GeneratorLoss { objective, terms })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g_values() {
        assert!((g_softplus(0.0) + 2f64.ln()).abs() < 1e-12);
        assert!(g_softplus(50.0) > -1e-20 && g_softplus(50.0) < 0.0);
        assert!((g_softplus(-50.0) + 50.0).abs() < 1e-9);
        for x in [-3.0, -0.1, 0.0, 0.7, 12.0] {
            assert!(g_softplus(x) < 0.0);
            assert!(g_softplus(x + 1e-3) > g_softplus(x));
            assert!(((g_softplus(x) - g_softplus(-x)) - x).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_discriminator_gives_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Discriminator::new("d", 3, 8, 7, &DiscriminatorConfig::default(), &mut rng).unwrap();
        for p in d.params() {
            p.set_value(Array::zeros(p.shape())).unwrap();
        }
        d.out.bias.set_value(Array::from_vec(vec![0.37])).unwrap();
        let cond = DiscCondition { camera: [0.1, 0.2, 0.3, 0.4, 0.5], sentence: vec![1.0, 0.0] };
        let img = Tensor::constant(Array::uniform([3, 8, 8], 0.0, 1.0, &mut rng));
        assert_eq!(d.logit(&img, &cond).unwrap().item(), 0.37);
        assert!(matches!(d.logit(&Tensor::constant(Array::zeros([1, 8, 8])), &cond), Err(Error::Usage(_))));
    }

    #[test]
    fn sentence_changes_logit() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = Discriminator::new("d", 1, 8, 7, &DiscriminatorConfig::default(), &mut rng).unwrap();
        let img = Tensor::constant(Array::uniform([1, 8, 8], 0.0, 1.0, &mut rng));
        let a = DiscCondition { camera: [0.0, 1.0, 0.0, 1.0, 0.75], sentence: vec![1.0, 0.0] };
        let b = a.with_sentence(&[0.0, 1.0]);
        assert_ne!(d.logit(&img, &a).unwrap().item(), d.logit(&img, &b).unwrap().item());
    }

    #[test]
    fn clip_distance_extremes() {
        let e = Tensor::constant(Array::new([1, 3], vec![2.0, 0.0, 0.0]).unwrap());
        assert!(clip_distance(&e, &[1.0, 0.0, 0.0]).unwrap().item().abs() < 1e-8);
        assert!((clip_distance(&e, &[0.0, 1.0, 0.0]).unwrap().item() - 1.0).abs() < 1e-12);
        let z = Tensor::constant(Array::zeros([1, 3]));
        assert!(clip_distance(&z, &[0.0, 1.0, 0.0]).unwrap().item().is_finite());
    }
}
