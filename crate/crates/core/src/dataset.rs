//! Synthetic captioned shapes rendered from analytic SDFs.

use std::f64::consts::PI;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::{render_view, AnalyticField, Camera, RenderSettings, RenderedView};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeClass {
    Sphere,
    Box,
    Capsule,
    Torus,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 4] = [ShapeClass::Sphere, ShapeClass::Box, ShapeClass::Capsule, ShapeClass::Torus];

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Sphere => "sphere",
            ShapeClass::Box => "box",
            ShapeClass::Capsule => "capsule",
            ShapeClass::Torus => "torus",
        }
    }

    /// Nominal size parameters: sphere `[r]`, box half-extents, capsule
    /// `[half length, r]`, torus `[ring radius, tube radius]`.
    pub fn base_size(self) -> Vec<f64> {
        match self {
            ShapeClass::Sphere => vec![0.5],
            ShapeClass::Box => vec![0.45, 0.35, 0.3],
            ShapeClass::Capsule => vec![0.35, 0.25],
            ShapeClass::Torus => vec![0.45, 0.18],
        }
    }
}

impl fmt::Display for ShapeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A shape class with concrete size parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    pub class: ShapeClass,
    pub size: Vec<f64>,
}

impl Shape {
    pub fn nominal(class: ShapeClass) -> Self {
        Self { class, size: class.base_size() }
    }

    pub fn sdf(&self, p: [f64; 3]) -> f64 {
        let len = |v: [f64; 3]| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let s = &self.size;
        match self.class {
            ShapeClass::Sphere => len(p) - s[0],
            ShapeClass::Box => {
                let q = [p[0].abs() - s[0], p[1].abs() - s[1], p[2].abs() - s[2]];
                len(q.map(|c| c.max(0.0))) + q[0].max(q[1]).max(q[2]).min(0.0)
            }
            ShapeClass::Capsule => {
                let z = p[2].clamp(-s[0], s[0]);
                len([p[0], p[1], p[2] - z]) - s[1]
            }
            ShapeClass::Torus => {
                let ring = (p[0] * p[0] + p[1] * p[1]).sqrt() - s[0];
                (ring * ring + p[2] * p[2]).sqrt() - s[1]
            }
        }
    }
}

pub const PALETTE: [(&str, [f64; 3]); 6] = [
    ("red", [0.9, 0.15, 0.12]),
    ("blue", [0.12, 0.25, 0.9]),
    ("green", [0.15, 0.75, 0.2]),
    ("yellow", [0.92, 0.85, 0.15]),
    ("white", [0.92, 0.92, 0.92]),
    ("purple", [0.55, 0.2, 0.75]),
];

pub fn color_rgb(name: &str) -> Result<[f64; 3]> {
    PALETTE
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, c)| *c)
        .ok_or_else(|| Error::Config(format!("unknown color `{name}`")))
}

pub const MODIFIER_WORDS: [&str; 8] = ["with", "smooth", "shiny", "matte", "surface", "finish", "large", "small"];

/// Every token the synthetic captions can produce.
pub fn toy_vocabulary() -> Vec<String> {
    let mut v: Vec<String> = ["a", "an", "the"].iter().map(|s| s.to_string()).collect();
    v.extend(ShapeClass::ALL.iter().map(|c| c.name().to_string()));
    v.extend(PALETTE.iter().map(|(n, _)| n.to_string()));
    v.extend(MODIFIER_WORDS.iter().map(|s| s.to_string()));
    v
}

pub fn caption_for(color: &str, class: ShapeClass, modifier: Option<&str>) -> String {
    match modifier {
        Some(m) => format!("a {color} {class} {m}"),
        None => format!("a {color} {class}"),
    }
}

/// The 4 x 4 class-by-color caption grid.
pub fn default_eval_captions() -> Vec<String> {
    let colors = ["red", "blue", "green", "yellow"];
    ShapeClass::ALL.iter().flat_map(|&c| colors.iter().map(move |col| caption_for(col, c, None))).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub classes: Vec<ShapeClass>,
    pub colors: Vec<String>,
    pub instances: usize,
    /// Views rendered per object.
    pub views: usize,
    /// Relative size perturbation per instance; zero keeps nominal sizes.
    pub size_jitter: f64,
    pub elevation_range: [f64; 2],
    pub camera_distance: f64,
    pub orthographic: bool,
    /// Appended to every caption when set.
    pub modifier: Option<String>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            classes: vec![ShapeClass::Sphere, ShapeClass::Box],
            colors: vec!["red".into(), "blue".into()],
            instances: 1,
            views: 4,
            size_jitter: 0.0,
            elevation_range: [-0.3, 0.6],
            camera_distance: 3.0,
            orthographic: true,
            modifier: None,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() || self.colors.is_empty() {
            return Err(Error::Config("dataset needs at least one class and one color".into()));
        }
        if self.instances == 0 || self.views == 0 {
            return Err(Error::Config("dataset needs at least one instance and one view".into()));
        }
        for c in &self.colors {
            color_rgb(c)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticSample {
    pub shape: Shape,
    pub color: String,
    pub rgb: [f64; 3],
    pub caption: String,
    pub views: Vec<RenderedView>,
}

fn sample_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Samples in class-major, then color, then instance order.
pub fn make_dataset(config: &DataConfig, resolution: usize, settings: &RenderSettings, seed: u64) -> Result<Vec<SyntheticSample>> {
    config.validate()?;
    let mut out = Vec::new();
    for &class in &config.classes {
        for color in &config.colors {
            for _ in 0..config.instances {
                let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed, out.len()));
                let mut shape = Shape::nominal(class);
                if config.size_jitter > 0.0 {
                    for s in shape.size.iter_mut() {
                        *s *= 1.0 + rng.random_range(-config.size_jitter..=config.size_jitter);
                    }
                }
                let rgb = color_rgb(color)?;
                let field = AnalyticField { sdf: |p| shape.sdf(p), color: rgb };
                let [lo, hi] = config.elevation_range;
                let views = (0..config.views)
                    .map(|_| {
                        let azimuth = rng.random_range(0.0..2.0 * PI);
                        let elevation = if hi > lo { rng.random_range(lo..hi) } else { lo };
                        let cam = Camera::new(azimuth, elevation, config.camera_distance, resolution, config.orthographic)?;
                        render_view(&field, &cam, settings)
                    })
                    .collect::<Result<Vec<_>>>()?;
                out.push(SyntheticSample {
                    caption: caption_for(color, class, config.modifier.as_deref()),
                    shape,
                    color: color.clone(),
                    rgb,
                    views,
                });
            }
        }
    }
    Ok(out)
}
