//! Mapping network and the layered triplane generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use tpa3d_autodiff::{Array, Param, Tensor};

use crate::error::{Error, Result};
use crate::nn::{Linear, Mlp, LEAKY_SLOPE};
use crate::text::TextFeatures;
use crate::tpa::{compose_geo_input, compose_tex_input, Ablation, TpaBlock, TpaConfig};
use crate::triplane::Triplane;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub layers: usize,
    pub base_res: usize,
    /// Channels per plane.
    pub channels: usize,
    pub trunk_channels: usize,
    pub style_dim: usize,
    pub z_dim: usize,
    pub mapping_depth: usize,
    /// Weight of the refined geometry triplane in the texture input.
    pub alpha: f64,
    /// Per-layer switches for the geometry attention blocks; empty enables all.
    pub tpa_geo: Vec<bool>,
    pub tpa_tex: Vec<bool>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            base_res: 4,
            channels: 8,
            trunk_channels: 32,
            style_dim: 64,
            z_dim: 32,
            mapping_depth: 4,
            alpha: 0.5,
            tpa_geo: Vec::new(),
            tpa_tex: Vec::new(),
        }
    }
}

impl GeneratorConfig {
    pub fn paper_scale() -> Self {
        Self { layers: 6, ..Self::default() }
    }

    /// `H_i = base_res * 2^(i-1)` for 1-based `i`.
    pub fn layer_resolution(&self, layer: usize) -> usize {
        self.base_res << (layer - 1)
    }

    pub fn final_resolution(&self) -> usize {
        self.layer_resolution(self.layers)
    }

    pub fn tpa_enabled(&self, geometry: bool, layer: usize) -> bool {
        let flags = if geometry { &self.tpa_geo } else { &self.tpa_tex };
        flags.get(layer - 1).copied().unwrap_or(true)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.base_res == 0 || self.channels == 0 || self.trunk_channels == 0 {
            return Err(Error::Config("generator layers, resolution and channels must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.mapping_depth == 0 || self.style_dim == 0 || self.z_dim == 0 {
            return Err(Error::Config("mapping depth, style and noise dims must be positive".into()));
        }
        for flags in [&self.tpa_geo, &self.tpa_tex] {
            if !flags.is_empty() && flags.len() != self.layers {
                return Err(Error::Config(format!("{} attention flags for {} layers", flags.len(), self.layers)));
            }
        }
        Ok(())
    }
}

/// Noise pair drawn from a recorded seed.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentZ {
    pub geo: Vec<f64>,
    pub tex: Vec<f64>,
    pub seed: u64,
}

impl LatentZ {
    pub fn sample(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect::<Vec<f64>>();
        let geo = draw();
        let tex = draw();
        Self { geo, tex, seed }
    }
}

/// Style vectors, each `[1 x style_dim]`.
#[derive(Clone, Debug)]
pub struct LatentW {
    pub geo: Tensor,
    pub tex: Tensor,
}

impl LatentW {
    /// `a + t (b - a)`, with exact endpoints.
    pub fn lerp(a: &LatentW, b: &LatentW, t: f64) -> Result<LatentW> {
        if t == 0.0 {
            return Ok(a.clone());
        }
        if t == 1.0 {
            return Ok(b.clone());
        }
        let mix = |x: &Tensor, y: &Tensor| -> Result<Tensor> { Ok(x.add(&y.sub(x)?.scale(t))?) };
        Ok(LatentW { geo: mix(&a.geo, &b.geo)?, tex: mix(&a.tex, &b.tex)? })
    }
}

fn row(v: &[f64]) -> Tensor {
    Tensor::constant(Array::new([1, v.len()], v.to_vec()).expect("nonempty row"))
}

/// Two MLPs mapping `(z, t_s)` to geometry and texture styles.
#[derive(Debug)]
pub struct MappingNetwork {
    pub geo: Mlp,
    pub tex: Mlp,
    z_dim: usize,
    sentence_dim: usize,
}

impl MappingNetwork {
    pub fn new(config: &GeneratorConfig, sentence_dim: usize, rng: &mut impl Rng) -> Self {
        let mut widths = vec![config.z_dim + sentence_dim];
        widths.extend(std::iter::repeat_n(config.style_dim, config.mapping_depth));
        Self {
            geo: Mlp::new("map.geo", &widths, rng),
            tex: Mlp::new("map.tex", &widths, rng),
            z_dim: config.z_dim,
            sentence_dim,
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = self.geo.params();
        v.extend(self.tex.params());
        v
    }

    /// `sentence` is a `[1 x D_s]` row.
    pub fn map_latent(&self, z: &LatentZ, sentence: &Tensor) -> Result<LatentW> {
        if z.geo.len() != self.z_dim || z.tex.len() != self.z_dim || sentence.shape() != [1, self.sentence_dim] {
            return Err(Error::Config(format!(
                "mapping expects z of {} and a [1, {}] sentence, got {}/{} and {:?}",
                self.z_dim,
                self.sentence_dim,
                z.geo.len(),
                z.tex.len(),
                sentence.shape()
            )));
        }
        let geo = self.geo.forward(&Tensor::concat(&[row(&z.geo), sentence.clone()], 1)?)?;
        let tex = self.tex.forward(&Tensor::concat(&[row(&z.tex), sentence.clone()], 1)?)?;
        Ok(LatentW { geo, tex })
    }
}

/// Style-modulated, demodulated convolution.
#[derive(Debug)]
pub struct ModulatedConv {
    pub weight: Param,
    pub affine: Linear,
    pub bias: Param,
}

impl ModulatedConv {
    pub fn new(name: &str, c_in: usize, c_out: usize, kernel: usize, style_dim: usize, rng: &mut impl Rng) -> Self {
        let affine = Linear::new(&format!("{name}.affine"), style_dim, c_in, rng);
        affine.bias.set_value(Array::ones([c_in])).expect("shape");
        Self {
            weight: Param::new(format!("{name}.weight"), Array::randn([c_out, c_in, kernel, kernel], 1.0, rng)),
            affine,
            bias: Param::new(format!("{name}.bias"), Array::zeros([c_out])),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.affine.weight, &self.affine.bias, &self.bias]
    }

    fn fan_in(&self) -> usize {
        let s = self.weight.shape();
        s[1] * s[2] * s[3]
    }

    /// Kernel scaled per input channel by the style, then rescaled so each
    /// output channel has unit RMS.
    pub fn modulated_kernel(&self, style: &Tensor) -> Result<Tensor> {
        let scales = self.affine.forward(style)?;
        let c_in = scales.shape()[1];
        let k = self.weight.tensor().mul_axis(&scales.reshape(&[c_in])?, 1)?;
        let ms = k.square().sum_to_axis(0)?.scale(1.0 / self.fan_in() as f64);
        Ok(k.mul_axis(&ms.add_scalar(1e-10).powf(-0.5), 0)?)
    }

    pub fn forward(&self, x: &Tensor, style: &Tensor) -> Result<Tensor> {
        let kernel = self.modulated_kernel(style)?.scale(1.0 / (self.fan_in() as f64).sqrt());
        Ok(x.conv2d(&kernel)?.add_axis(&self.bias.tensor(), 0)?)
    }
}

/// Trunk convolution plus the two triplane heads of one layer.
#[derive(Debug)]
pub struct GeneratorLayer {
    pub index: usize,
    pub trunk: ModulatedConv,
    pub geo_head: ModulatedConv,
    pub tex_head: ModulatedConv,
}

/// Output of one generator layer.
#[derive(Clone, Debug)]
pub struct LayerOutput {
    pub features: Tensor,
    pub geo: Triplane,
    pub tex: Triplane,
}

impl GeneratorLayer {
    pub fn new(index: usize, config: &GeneratorConfig, rng: &mut impl Rng) -> Self {
        let name = format!("gen.layer{index}");
        let (ct, s, d) = (config.trunk_channels, config.style_dim, config.channels);
        Self {
            index,
            trunk: ModulatedConv::new(&format!("{name}.trunk"), ct, ct, 3, s, rng),
            geo_head: ModulatedConv::new(&format!("{name}.geo"), ct, 3 * d, 1, s, rng),
            tex_head: ModulatedConv::new(&format!("{name}.tex"), ct, 3 * d, 1, s, rng),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = self.trunk.params();
        v.extend(self.geo_head.params());
        v.extend(self.tex_head.params());
        v
    }

    /// Layers after the first upsample their input ×2 before the trunk.
    pub fn forward(&self, prev: &Tensor, w: &LatentW) -> Result<LayerOutput> {
        let x = if self.index > 1 { prev.bilinear_upsample(2)? } else { prev.clone() };
        let features = self.trunk.forward(&x, &w.geo)?.leaky_relu(LEAKY_SLOPE);
        let geo = Triplane::from_stacked(&self.geo_head.forward(&features, &w.geo)?)?;
        let tex = Triplane::from_stacked(&self.tex_head.forward(&features, &w.tex)?)?;
        Ok(LayerOutput { features, geo, tex })
    }
}

/// Word features as a constant `[L x D_w]` tensor plus mask.
#[derive(Clone, Debug)]
pub struct WordInput {
    pub words: Tensor,
    pub mask: Vec<bool>,
}

impl From<&TextFeatures> for WordInput {
    fn from(f: &TextFeatures) -> Self {
        Self { words: f.words_tensor(), mask: f.mask.clone() }
    }
}

#[derive(Clone, Debug)]
pub struct GeneratorOutput {
    pub geo: Triplane,
    pub tex: Triplane,
    /// Per-layer sentence-level triplanes.
    pub layer_geo: Vec<Triplane>,
    pub layer_tex: Vec<Triplane>,
}

fn attention_blocks(
    config: &GeneratorConfig,
    tpa: &TpaConfig,
    word_dim: usize,
    geometry: bool,
    rng: &mut impl Rng,
) -> Result<Vec<Option<TpaBlock>>> {
    let branch = if geometry { "geo" } else { "tex" };
    (1..=config.layers)
        .map(|i| {
            if !config.tpa_enabled(geometry, i) {
                return Ok(None);
            }
            Ok(Some(TpaBlock::new(&format!("tpa.{branch}.{i}"), config.channels, word_dim, tpa.clone(), rng)?))
        })
        .collect()
}

/// Sentence-level generator with per-layer attention refinement.
#[derive(Debug)]
pub struct TriplaneGenerator {
    config: GeneratorConfig,
    pub constant: Param,
    pub layers: Vec<GeneratorLayer>,
    /// Indexed by layer; `None` where the block is switched off.
    pub tpa_geo: Vec<Option<TpaBlock>>,
    pub tpa_tex: Vec<Option<TpaBlock>>,
}

impl TriplaneGenerator {
    pub fn new(config: &GeneratorConfig, tpa: &TpaConfig, word_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let (ct, r) = (config.trunk_channels, config.base_res);
        let constant = Param::new("gen.const", Array::randn([ct, r, r], 1.0, rng));
        let layers = (1..=config.layers).map(|i| GeneratorLayer::new(i, config, rng)).collect();
        let tpa_geo = attention_blocks(config, tpa, word_dim, true, rng)?;
        let tpa_tex = attention_blocks(config, tpa, word_dim, false, rng)?;
        Ok(Self { config: config.clone(), constant, layers, tpa_geo, tpa_tex })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = vec![&self.constant];
        for layer in &self.layers {
            v.extend(layer.params());
        }
        for block in self.tpa_geo.iter().chain(&self.tpa_tex).flatten() {
            v.extend(block.params());
        }
        v
    }

    /// Runs layer `index` (1-based).
    pub fn generator_layer(&self, prev: &Tensor, w: &LatentW, index: usize) -> Result<LayerOutput> {
        if index == 0 || index > self.layers.len() {
            return Err(Error::Usage(format!("layer {index} outside 1..={}", self.layers.len())));
        }
        self.layers[index - 1].forward(prev, w)
    }

    /// Final geometry and texture triplanes from styles and word features.
    ///
    /// With [`Ablation::Identity`] both branches reduce to the upsample-and-sum
    /// of their sentence-level triplanes.
    pub fn synthesize(&self, w: &LatentW, words: &WordInput, ablation: Ablation) -> Result<GeneratorOutput> {
        let alpha = if ablation == Ablation::Identity { 0.0 } else { self.config.alpha };
        let mut features = self.constant.tensor();
        let (mut f_geo, mut f_tex): (Option<Triplane>, Option<Triplane>) = (None, None);
        let (mut layer_geo, mut layer_tex) = (Vec::new(), Vec::new());
        for (i, layer) in self.layers.iter().enumerate() {
            let out = layer.forward(&features, w)?;
            features = out.features;
            let geo_in = compose_geo_input(f_geo.as_ref(), &out.geo)?;
            let geo = match &self.tpa_geo[i] {
                Some(block) => block.forward(&geo_in, &words.words, &words.mask, ablation)?,
                None => geo_in,
            };
            let tex_in = compose_tex_input(f_tex.as_ref(), &out.tex, &geo, alpha)?;
            let tex = match &self.tpa_tex[i] {
                Some(block) => block.forward(&tex_in, &words.words, &words.mask, ablation)?,
                None => tex_in,
            };
            layer_geo.push(out.geo);
            layer_tex.push(out.tex);
            f_geo = Some(geo);
            f_tex = Some(tex);
        }
        Ok(GeneratorOutput { geo: f_geo.expect("at least one layer"), tex: f_tex.expect("at least one layer"), layer_geo, layer_tex })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::triplane::aggregate_sentence_triplanes;

    fn small() -> GeneratorConfig {
        GeneratorConfig { layers: 2, base_res: 2, channels: 4, trunk_channels: 4, style_dim: 6, z_dim: 3, ..Default::default() }
    }

    fn styles(seed: u64, dim: usize) -> LatentW {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LatentW {
            geo: Tensor::constant(Array::randn([1, dim], 1.0, &mut rng)),
            tex: Tensor::constant(Array::randn([1, dim], 1.0, &mut rng)),
        }
    }

    #[test]
    fn zero_mapping_weights_give_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = small();
        let m = MappingNetwork::new(&cfg, 5, &mut rng);
        for layer in m.geo.layers.iter().chain(&m.tex.layers) {
            layer.weight.set_value(Array::zeros(layer.weight.shape())).unwrap();
        }
        let last = m.geo.layers.last().unwrap();
        last.bias.set_value(Array::from_vec(vec![0.5, -1.0, 2.0, 0.0, 1.0, 3.0])).unwrap();
        let z = LatentZ::sample(3, 9);
        let w = m.map_latent(&z, &Tensor::constant(Array::ones([1, 5]))).unwrap();
        assert_eq!(w.geo.data(), &[0.5, -1.0, 2.0, 0.0, 1.0, 3.0]);
        assert!(m.map_latent(&z, &Tensor::constant(Array::ones([1, 4]))).is_err());
    }

    #[test]
    fn demodulated_kernels_have_unit_rms() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = ModulatedConv::new("c", 3, 5, 3, 6, &mut rng);
        let w = styles(3, 6);
        let k = conv.modulated_kernel(&w.geo).unwrap();
        for o in 0..5 {
            let rows = &k.data()[o * 27..(o + 1) * 27];
            let rms = (rows.iter().map(|x| x * x).sum::<f64>() / 27.0).sqrt();
            assert!((rms - 1.0).abs() < 1e-9, "{rms}");
        }
    }

    #[test]
    fn unit_scales_reduce_to_plain_demodulated_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let conv = ModulatedConv::new("c", 2, 3, 3, 4, &mut rng);
        conv.affine.weight.set_value(Array::zeros([4, 2])).unwrap();
        let x = Tensor::constant(Array::randn([2, 5, 5], 1.0, &mut rng));
        let y = conv.forward(&x, &styles(5, 4).geo).unwrap();
        let w = conv.weight.value();
        let mut demod = w.clone();
        for o in 0..3 {
            let s = &w.data()[o * 18..(o + 1) * 18];
            let rms = (s.iter().map(|v| v * v).sum::<f64>() / 18.0 + 1e-10).sqrt();
            for (d, v) in demod.data_mut()[o * 18..(o + 1) * 18].iter_mut().zip(s) {
                *d = v / rms / 18f64.sqrt();
            }
        }
        let expect = x.conv2d(&Tensor::constant(demod)).unwrap();
        for (a, b) in y.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_resolutions_and_style_separation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = small();
        let g = TriplaneGenerator::new(&cfg, &TpaConfig { heads: 2, ..Default::default() }, 5, &mut rng).unwrap();
        let w1 = styles(7, 6);
        let mut w2 = styles(8, 6);
        w2.geo = w1.geo.clone();
        let a1 = g.generator_layer(&g.constant.tensor(), &w1, 1).unwrap();
        let b1 = g.generator_layer(&g.constant.tensor(), &w2, 1).unwrap();
        assert_eq!(a1.geo.resolution(), 2);
        assert_eq!(a1.geo.values(), b1.geo.values());
        assert_ne!(a1.tex.values(), b1.tex.values());
        let a2 = g.generator_layer(&a1.features, &w1, 2).unwrap();
        assert_eq!(a2.geo.resolution(), 4);
        assert!(matches!(g.generator_layer(&a1.features, &w1, 3), Err(Error::Usage(_))));
    }

    #[test]
    fn zero_heads_give_zero_triplanes() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let cfg = small();
        let layer = GeneratorLayer::new(1, &cfg, &mut rng);
        for head in [&layer.geo_head, &layer.tex_head] {
            head.weight.set_value(Array::zeros(head.weight.shape())).unwrap();
        }
        let x = Tensor::constant(Array::randn([4, 2, 2], 1.0, &mut rng));
        let out = layer.forward(&x, &styles(11, 6)).unwrap();
        assert!(out.geo.values().iter().chain(out.tex.values().iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn identity_ablation_is_the_baseline_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cfg = small();
        let g = TriplaneGenerator::new(&cfg, &TpaConfig { heads: 2, ..Default::default() }, 5, &mut rng).unwrap();
        let words = WordInput { words: Tensor::constant(Array::randn([3, 5], 1.0, &mut rng)), mask: vec![true, true, false] };
        let out = g.synthesize(&styles(13, 6), &words, Ablation::Identity).unwrap();
        assert_eq!(out.geo.values(), aggregate_sentence_triplanes(&out.layer_geo).unwrap().values());
        assert_eq!(out.tex.values(), aggregate_sentence_triplanes(&out.layer_tex).unwrap().values());
    }
}
