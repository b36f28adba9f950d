//! Cameras, rays and differentiable SDF compositing into RGB and mask images.
//!
//! Opacity follows the logistic-density construction: with
//! `l_j = log sigmoid(k * sdf_j)` the transmittance over interval `j` is
//! multiplied by `exp(min(l_j, l_{j+1}) - l_j)`, so it only drops where the
//! SDF decreases, and the mask of a ray that enters a solid approaches
//! `sigmoid(-k * min sdf)`. Colors are premultiplied over black.

use std::path::Path;
use std::rc::Rc;

use image::{GrayImage, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tpa3d_autodiff::{softplus, Array, Op, Tensor, TensorError};

use crate::error::{Error, Result};
use crate::surface::{sample_triplane, SurfaceHeads};
use crate::triplane::Triplane;

/// Half-width of the pinhole field of view measured at the look-at point.
pub const PINHOLE_HALF_EXTENT: f64 = 1.2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub azimuth: f64,
    pub elevation: f64,
    pub distance: f64,
    pub resolution: usize,
    pub orthographic: bool,
}

impl Camera {
    pub fn new(azimuth: f64, elevation: f64, distance: f64, resolution: usize, orthographic: bool) -> Result<Self> {
        let c = Self { azimuth, elevation, distance, resolution, orthographic };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.distance > 3f64.sqrt()) {
            return Err(Error::Config(format!("camera distance {} must exceed sqrt(3)", self.distance)));
        }
        if self.resolution < 8 {
            return Err(Error::Config(format!("image size {} is below 8", self.resolution)));
        }
        if !self.azimuth.is_finite() || !self.elevation.is_finite() {
            return Err(Error::Config("camera angles must be finite".into()));
        }
        Ok(())
    }

    pub fn with_resolution(&self, resolution: usize) -> Self {
        Self { resolution, ..*self }
    }

    /// `distance * (cos e cos a, cos e sin a, sin e)`.
    pub fn position(&self) -> [f64; 3] {
        let (ce, se) = (self.elevation.cos(), self.elevation.sin());
        [self.distance * ce * self.azimuth.cos(), self.distance * ce * self.azimuth.sin(), self.distance * se]
    }

    /// `(forward, right, up)`; forward looks at the origin, up leans to +z.
    pub fn basis(&self) -> ([f64; 3], [f64; 3], [f64; 3]) {
        let p = self.position();
        let f = normalize([-p[0], -p[1], -p[2]]);
        let mut r = cross(f, [0.0, 0.0, 1.0]);
        if dot(r, r) < 1e-18 {
            r = cross(f, [0.0, 1.0, 0.0]);
        }
        let r = normalize(r);
        (f, r, cross(r, f))
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: [f64; 3],
    /// Unit length.
    pub dir: [f64; 3],
}

impl Ray {
    pub fn at(&self, t: f64) -> [f64; 3] {
        [self.origin[0] + t * self.dir[0], self.origin[1] + t * self.dir[1], self.origin[2] + t * self.dir[2]]
    }

    /// Entry and exit parameters against `[-1, 1]^3` by the slab method.
    pub fn box_interval(&self) -> Option<(f64, f64)> {
        let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
        for k in 0..3 {
            if self.dir[k].abs() < 1e-15 {
                if self.origin[k].abs() > 1.0 {
                    return None;
                }
                continue;
            }
            let a = (-1.0 - self.origin[k]) / self.dir[k];
            let b = (1.0 - self.origin[k]) / self.dir[k];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
        (t1 > t0.max(0.0)).then_some((t0.max(0.0), t1))
    }
}

/// One ray per pixel center, row-major with row 0 at the top.
pub fn ray_grid(camera: &Camera) -> Vec<Ray> {
    let p = camera.resolution;
    let eye = camera.position();
    let (f, r, u) = camera.basis();
    let mut rays = Vec::with_capacity(p * p);
    for row in 0..p {
        for col in 0..p {
            let sx = (col as f64 + 0.5) / p as f64 * 2.0 - 1.0;
            let sy = 1.0 - (row as f64 + 0.5) / p as f64 * 2.0;
            let ray = if camera.orthographic {
                let origin = [0, 1, 2].map(|k| eye[k] + sx * r[k] + sy * u[k]);
                Ray { origin, dir: f }
            } else {
                let s = PINHOLE_HALF_EXTENT / camera.distance;
                let dir = normalize([0, 1, 2].map(|k| f[k] + s * (sx * r[k] + sy * u[k])));
                Ray { origin: eye, dir }
            };
            rays.push(ray);
        }
    }
    rays
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderSettings {
    pub k_sharp: f64,
    pub samples: usize,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self { k_sharp: 20.0, samples: 48 }
    }
}

impl RenderSettings {
    pub fn validate(&self) -> Result<()> {
        if self.samples < 16 {
            return Err(Error::Config(format!("{} samples per ray; at least 16 required", self.samples)));
        }
        if !(self.k_sharp > 0.0) {
            return Err(Error::Config("k_sharp must be positive".into()));
        }
        Ok(())
    }
}

/// A differentiable SDF with color.
pub trait Field {
    /// `(sdf [N], rgb [N x 3])` at `points`.
    fn eval(&self, points: &[[f64; 3]]) -> Result<(Tensor, Tensor)>;
}

/// Field decoded from geometry and texture triplanes.
pub struct TriplaneField<'a> {
    pub geo: &'a Triplane,
    pub tex: &'a Triplane,
    pub heads: &'a SurfaceHeads,
}

impl Field for TriplaneField<'_> {
    fn eval(&self, points: &[[f64; 3]]) -> Result<(Tensor, Tensor)> {
        let sdf = self.heads.sdf(&sample_triplane(self.geo, points)?, points)?;
        let rgb = self.heads.color_head(&sample_triplane(self.tex, points)?)?;
        Ok((sdf, rgb))
    }
}

/// Constant-color analytic SDF.
pub struct AnalyticField<F: Fn([f64; 3]) -> f64> {
    pub sdf: F,
    pub color: [f64; 3],
}

impl<F: Fn([f64; 3]) -> f64> Field for AnalyticField<F> {
    fn eval(&self, points: &[[f64; 3]]) -> Result<(Tensor, Tensor)> {
        let sdf = Array::from_vec(points.iter().map(|&p| (self.sdf)(p)).collect());
        let rgb = Array::new([points.len(), 3], points.iter().flat_map(|_| self.color).collect())?;
        Ok((Tensor::constant(sdf), Tensor::constant(rgb)))
    }
}

#[derive(Clone, Debug)]
pub struct RenderedView {
    /// `[3 x P x P]`, premultiplied over black.
    pub rgb: Tensor,
    /// `[1 x P x P]`.
    pub mask: Tensor,
    pub camera: Camera,
}

impl RenderedView {
    pub fn detach(&self) -> Self {
        Self { rgb: self.rgb.detach(), mask: self.mask.detach(), camera: self.camera }
    }
}

fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Log-transmittance at each sample, `A_0 = 0`.
fn log_transmittance(l: &[f64]) -> Vec<f64> {
    let mut acc = vec![0.0; l.len()];
    for m in 0..l.len() - 1 {
        acc[m + 1] = acc[m] + (l[m].min(l[m + 1]) - l[m]);
    }
    acc
}

fn composite_ray(sdf: &[f64], rgb: &[f64], k: f64, out: &mut [f64]) {
    let l: Vec<f64> = sdf.iter().map(|&s| log_sigmoid(k * s)).collect();
    let t: Vec<f64> = log_transmittance(&l).into_iter().map(f64::exp).collect();
    let s = sdf.len();
    out.fill(0.0);
    for m in 0..s - 1 {
        let w = t[m] - t[m + 1];
        for c in 0..3 {
            out[1 + c] += w * rgb[3 * (m + 1) + c];
        }
    }
    out[0] = 1.0 - t[s - 1];
}

fn composite_ray_backward(sdf: &[f64], rgb: &[f64], k: f64, g: &[f64], g_sdf: &mut [f64], g_rgb: &mut [f64]) {
    let s = sdf.len();
    let l: Vec<f64> = sdf.iter().map(|&v| log_sigmoid(k * v)).collect();
    let t: Vec<f64> = log_transmittance(&l).into_iter().map(f64::exp).collect();
    let gc = [g[1], g[2], g[3]];
    let mut g_t = vec![0.0; s];
    g_t[s - 1] -= g[0];
    g_rgb.fill(0.0);
    for m in 0..s - 1 {
        let c = &rgb[3 * (m + 1)..3 * (m + 2)];
        let gcc = gc[0] * c[0] + gc[1] * c[1] + gc[2] * c[2];
        g_t[m] += gcc;
        g_t[m + 1] -= gcc;
        let w = t[m] - t[m + 1];
        for ch in 0..3 {
            g_rgb[3 * (m + 1) + ch] = w * gc[ch];
        }
    }
    let mut g_l = vec![0.0; s];
    let mut suffix = 0.0;
    for m in (0..s - 1).rev() {
        suffix += g_t[m + 1] * t[m + 1];
        if l[m + 1] < l[m] {
            g_l[m + 1] += suffix;
            g_l[m] -= suffix;
        }
    }
    for j in 0..s {
        g_sdf[j] = g_l[j] * k * sigmoid(-k * sdf[j]);
    }
}

struct Composite {
    k: f64,
}

impl Op for Composite {
    fn name(&self) -> &'static str {
        "composite"
    }

    fn higher_order(&self) -> bool {
        false
    }

    fn backward(
        &self,
        inputs: &[Tensor],
        _output: &Tensor,
        grad: &Tensor,
    ) -> std::result::Result<Vec<Option<Tensor>>, TensorError> {
        let (sdf, rgb) = (&inputs[0], &inputs[1]);
        let (rays, s) = (sdf.shape()[0], sdf.shape()[1]);
        let mut g_sdf = vec![0.0; rays * s];
        let mut g_rgb = vec![0.0; rays * s * 3];
        let (sd, rd, gd) = (sdf.data(), rgb.data(), grad.data());
        g_sdf
            .par_chunks_mut(s)
            .zip(g_rgb.par_chunks_mut(3 * s))
            .enumerate()
            .for_each(|(r, (gs, gr))| {
                composite_ray_backward(&sd[r * s..(r + 1) * s], &rd[3 * r * s..3 * (r + 1) * s], self.k, &gd[4 * r..4 * r + 4], gs, gr);
            });
        Ok(vec![
            Some(Tensor::constant(Array::new([rays, s], g_sdf)?)),
            Some(Tensor::constant(Array::new([rays, s, 3], g_rgb)?)),
        ])
    }
}

/// Per-ray `(mask, r, g, b)` from SDF samples `[R x S]` and colors `[R x S x 3]`.
pub fn composite(sdf: &Tensor, rgb: &Tensor, k_sharp: f64) -> Result<Tensor> {
    let s = sdf.shape();
    if s.len() != 2 || s[1] < 2 || rgb.shape() != [s[0], s[1], 3] {
        return Err(Error::Usage(format!("composite needs [R, S] and [R, S, 3], got {:?} and {:?}", s, rgb.shape())));
    }
    let (rays, n) = (s[0], s[1]);
    let mut out = vec![0.0; rays * 4];
    let (sd, rd) = (sdf.data(), rgb.data());
    out.par_chunks_mut(4).enumerate().for_each(|(r, o)| {
        composite_ray(&sd[r * n..(r + 1) * n], &rd[3 * r * n..3 * (r + 1) * n], k_sharp, o);
    });
    Ok(Tensor::from_op(Array::new([rays, 4], out)?, Composite { k: k_sharp }, vec![sdf.clone(), rgb.clone()]))
}

/// Renders `field` from `camera`. Rays missing the unit box stay empty.
pub fn render_view(field: &dyn Field, camera: &Camera, settings: &RenderSettings) -> Result<RenderedView> {
    camera.validate()?;
    settings.validate()?;
    let p = camera.resolution;
    let s = settings.samples;
    let mut points = Vec::new();
    let mut pixels = Vec::new();
    for (pix, ray) in ray_grid(camera).iter().enumerate() {
        if let Some((t0, t1)) = ray.box_interval() {
            let dt = (t1 - t0) / s as f64;
            points.extend((0..s).map(|j| ray.at(t0 + (j as f64 + 0.5) * dt)));
            pixels.push(pix);
        }
    }
    if pixels.is_empty() {
        let zeros = |c| Tensor::constant(Array::zeros([c, p, p]));
        return Ok(RenderedView { rgb: zeros(3), mask: zeros(1), camera: *camera });
    }
    let rays = pixels.len();
    let (sdf, rgb) = field.eval(&points)?;
    let per_ray = composite(&sdf.reshape(&[rays, s])?, &rgb.reshape(&[rays, s, 3])?, settings.k_sharp)?;
    let index: Rc<[usize]> = (0..4).flat_map(|ch| pixels.iter().map(move |&pix| ch * p * p + pix)).collect();
    let flat = per_ray.transpose()?.reshape(&[4 * rays])?;
    let image = flat.scatter_add(&index, &[4 * p * p])?.reshape(&[4, p, p])?;
    Ok(RenderedView { rgb: image.narrow(0, 1, 3)?, mask: image.narrow(0, 0, 1)?, camera: *camera })
}

/// Mean binary entropy of mask pixels (natural log).
pub fn mask_entropy(mask: &[f64]) -> f64 {
    let h = |m: f64| {
        let m = m.clamp(0.0, 1.0);
        let term = |x: f64| if x > 0.0 { -x * x.ln() } else { 0.0 };
        term(m) + term(1.0 - m)
    };
    mask.iter().map(|&m| h(m)).sum::<f64>() / mask.len() as f64
}

/// Intersection over union of masks thresholded at 0.5.
pub fn mask_iou(a: &[f64], b: &[f64]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x > 0.5, y > 0.5);
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes `<stem>_rgb.png` and `<stem>_mask.png` (8-bit, linear).
pub fn save_view_png(view: &RenderedView, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
    let p = view.camera.resolution as u32;
    let n = (p * p) as usize;
    let rgb = view.rgb.data();
    let mut img = RgbImage::new(p, p);
    for (i, px) in img.pixels_mut().enumerate() {
        *px = image::Rgb([to_u8(rgb[i]), to_u8(rgb[n + i]), to_u8(rgb[2 * n + i])]);
    }
    img.save(dir.as_ref().join(format!("{stem}_rgb.png")))?;
    let mask = view.mask.data();
    let mut m = GrayImage::new(p, p);
    for (i, px) in m.pixels_mut().enumerate() {
        *px = image::Luma([to_u8(mask[i])]);
    }
    m.save(dir.as_ref().join(format!("{stem}_mask.png")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use tpa3d_autodiff::grad_check;

    fn sphere(r: f64) -> impl Fn([f64; 3]) -> f64 {
        move |p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - r
    }

    #[test]
    fn orthographic_front_view_looks_down_minus_x() {
        let cam = Camera::new(0.0, 0.0, 3.0, 8, true).unwrap();
        for ray in ray_grid(&cam) {
            assert!((ray.dir[0] + 1.0).abs() < 1e-15 && ray.dir[1].abs() < 1e-15 && ray.dir[2].abs() < 1e-15);
        }
        assert!(Camera::new(0.0, 0.0, 1.5, 8, true).is_err());
        assert!(Camera::new(0.0, 0.0, 3.0, 4, true).is_err());
    }

    #[test]
    fn pinhole_center_ray_hits_origin() {
        let cam = Camera::new(0.7, 0.3, 3.0, 9, false).unwrap();
        let ray = ray_grid(&cam)[4 * 9 + 4];
        let to_origin = normalize(cam.position().map(|v| -v));
        assert!((dot(ray.dir, to_origin) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_scene_has_empty_mask() {
        let cam = Camera::new(0.4, 0.2, 3.0, 16, true).unwrap();
        let field = AnalyticField { sdf: |_| 1.0, color: [1.0, 0.0, 0.0] };
        let v = render_view(&field, &cam, &RenderSettings::default()).unwrap();
        assert!(v.mask.data().iter().all(|&m| m < 1e-3));
    }

    #[test]
    fn sphere_mask_matches_disk_area() {
        let cam = Camera::new(0.3, 0.2, 3.0, 64, true).unwrap();
        let field = AnalyticField { sdf: sphere(0.5), color: [0.2, 0.4, 0.6] };
        let v = render_view(&field, &cam, &RenderSettings::default()).unwrap();
        let frac = v.mask.data().iter().sum::<f64>() / (64.0 * 64.0);
        let want = std::f64::consts::PI * 0.25 / 4.0;
        assert!((frac - want).abs() / want < 0.05, "{frac} vs {want}");
        assert!(v.rgb.data().iter().all(|&c| (0.0..=1.0).contains(&c)));
    }

    #[test]
    fn composite_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (rays, s) = (3, 6);
        let sdf = Array::randn([rays, s], 0.3, &mut rng);
        let rgb = Tensor::constant(Array::uniform([rays, s, 3], 0.0, 1.0, &mut rng));
        let w = Tensor::constant(Array::uniform([rays, 4], 0.5, 1.5, &mut rng));
        let err = grad_check(|x| Ok(composite(x, &rgb, 4.0)?.mul(&w)?.sum()), &sdf, 1e-6).unwrap();
        assert!(err < 1e-5, "{err}");
        let sdf_t = Tensor::constant(sdf.clone());
        let colors = Array::uniform([rays, s, 3], 0.0, 1.0, &mut rng);
        let err = grad_check(|c| Ok(composite(&sdf_t, c, 4.0)?.mul(&w)?.sum()), &colors, 1e-6).unwrap();
        assert!(err < 1e-6, "{err}");
    }
}
