//! End-to-end commands built on the model: dataset export, generation,
//! interpolation, retrieval evaluation, overfit metrics and timing.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use tpa3d_autodiff::no_grad;

use crate::adversarial::ImageEmbedder;
use crate::dataset::{make_dataset, SyntheticSample};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::{Generated, Tpa3d};
use crate::render::{mask_iou, save_view_png, Camera, RenderedView};
use crate::surface::{export_obj, write_obj, TetGrid, TexturedMesh};
use crate::text::TextFeatures;

pub const THREADS_ENV: &str = "TPA3D_THREADS";

/// Caps the worker pool at `TPA3D_THREADS` when set. Later calls are no-ops.
pub fn init_threads() -> Result<Option<usize>> {
    let Ok(raw) = std::env::var(THREADS_ENV) else { return Ok(None) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV}={raw} is not a positive integer")))?;
    // An already-initialized pool is kept as is.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(Some(n))
}

pub fn build_dataset(config: &RunConfig) -> Result<Vec<SyntheticSample>> {
    make_dataset(&config.data, config.render.img_res, &config.render.settings(), config.seed)
}

#[derive(Serialize)]
struct ManifestEntry<'a> {
    index: usize,
    caption: &'a str,
    class: &'a str,
    size: &'a [f64],
    color: &'a str,
    rgb: [f64; 3],
    cameras: Vec<Camera>,
}

/// Writes every view as PNG plus `dataset.json`.
pub fn export_dataset(samples: &[SyntheticSample], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        for (v, view) in s.views.iter().enumerate() {
            save_view_png(view, dir, &format!("sample{i:03}_view{v:02}"))?;
        }
        manifest.push(ManifestEntry {
            index: i,
            caption: &s.caption,
            class: s.shape.class.name(),
            size: &s.shape.size,
            color: &s.color,
            rgb: s.rgb,
            cameras: s.views.iter().map(|v| v.camera).collect(),
        });
    }
    fs::write(dir.join("dataset.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Fixed turntable used for exported renders and retrieval.
pub fn eval_cameras(config: &RunConfig, resolution: usize, count: usize) -> Result<Vec<Camera>> {
    (0..count)
        .map(|i| {
            let azimuth = PI / 4.0 + 2.0 * PI * i as f64 / count as f64;
            Camera::new(azimuth, 0.3, config.data.camera_distance, resolution, config.data.orthographic)
        })
        .collect()
}

pub struct Generation {
    pub generated: Generated,
    pub mesh: TexturedMesh,
    pub views: Vec<RenderedView>,
}

/// Triplanes, mesh and turntable renders, all without recording gradients.
pub fn generate(model: &Tpa3d, caption: &str, seed: u64, views: usize) -> Result<Generation> {
    let _guard = no_grad();
    let generated = model.generate(caption, seed)?;
    finish_generation(model, generated, views)
}

fn finish_generation(model: &Tpa3d, generated: Generated, views: usize) -> Result<Generation> {
    let (geo, tex) = (&generated.output.geo, &generated.output.tex);
    let mesh = model.mesh(geo, tex)?;
    let views = eval_cameras(&model.config, model.config.render.eval_img_res, views)?
        .iter()
        .map(|c| model.render(geo, tex, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(Generation { generated, mesh, views })
}

pub fn obj_bytes(mesh: &TexturedMesh) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_obj(&mut buf, mesh)?;
    Ok(buf)
}

/// `<stem>.obj` plus `<stem>_view{j}_rgb.png` / `_mask.png`.
pub fn write_generation(g: &Generation, dir: &Path, stem: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    export_obj(&g.mesh, dir.join(format!("{stem}.obj")))?;
    for (j, v) in g.views.iter().enumerate() {
        save_view_png(v, dir, &format!("{stem}_view{j}"))?;
    }
    Ok(())
}

/// Blends styles and word features between two captions under a shared noise
/// seed. `steps` frames, endpoints included.
pub fn interpolate(model: &Tpa3d, caption_a: &str, caption_b: &str, steps: usize, seed: u64, views: usize) -> Result<Vec<Generation>> {
    if steps < 2 {
        return Err(Error::Usage(format!("interpolation needs at least 2 steps, got {steps}")));
    }
    let _guard = no_grad();
    let (fa, fb) = (model.encode(caption_a)?, model.encode(caption_b)?);
    let (wa, wb) = (model.latent(&fa, seed)?, model.latent(&fb, seed)?);
    (0..steps)
        .map(|i| {
            let t = i as f64 / (steps - 1) as f64;
            let features = TextFeatures::lerp(&fa, &fb, t)?;
            let latent = crate::generator::LatentW::lerp(&wa, &wb, t)?;
            let output = model.synthesize(&latent, &features, model.config.ablation)?;
            finish_generation(model, Generated { features, latent, output }, views)
        })
        .collect()
}

/// Largest final-triplane distance between adjacent frames, geometry plus texture.
pub fn max_adjacent_distance(frames: &[Generation]) -> f64 {
    frames
        .windows(2)
        .map(|w| {
            let (a, b) = (&w[0].generated.output, &w[1].generated.output);
            (a.geo.distance(&b.geo).powi(2) + a.tex.distance(&b.tex).powi(2)).sqrt()
        })
        .fold(0.0, f64::max)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb + 1e-12)
}

/// Zero-based rank of caption `truth` by cosine to `embedding`. Ties rank
/// against the true caption.
pub fn retrieval_rank(embedding: &[f64], sentences: &[Vec<f64>], truth: usize) -> usize {
    let target = cosine(embedding, &sentences[truth]);
    sentences.iter().enumerate().filter(|&(j, s)| j != truth && cosine(embedding, s) >= target).count()
}

/// Fraction of embeddings whose true caption ranks in the top `k`.
pub fn retrieval_precision(embeddings: &[Vec<f64>], truths: &[usize], sentences: &[Vec<f64>], k: usize) -> f64 {
    if embeddings.is_empty() {
        return 0.0;
    }
    let hits = embeddings.iter().zip(truths).filter(|(e, &t)| retrieval_rank(e, sentences, t) < k).count();
    hits as f64 / embeddings.len() as f64
}

#[derive(Clone, Debug, Serialize)]
pub struct RetrievalReport {
    pub k: usize,
    pub precision: f64,
    pub captions: Vec<String>,
    pub seeds: Vec<u64>,
    /// `ranks[c][s]` for caption `c` and seed `s`.
    pub ranks: Vec<Vec<usize>>,
}

/// Toy precision@K: each generated render is embedded by the frozen image
/// embedder and ranked against every caption's sentence vector. Renders use
/// the first turntable camera at training resolution.
pub fn eval_retrieval(model: &Tpa3d, captions: &[String], seeds: &[u64], k: usize) -> Result<RetrievalReport> {
    let embedder = model
        .embedder
        .as_ref()
        .ok_or_else(|| Error::Config("retrieval needs the desk image embedder; imported embeddings have none".into()))?;
    if captions.len() < 2 * k {
        return Err(Error::Config(format!("{} captions for top-{k}; need at least {}", captions.len(), 2 * k)));
    }
    let _guard = no_grad();
    let sentences = captions.iter().map(|c| Ok(model.encode(c)?.sentence)).collect::<Result<Vec<_>>>()?;
    let camera = eval_cameras(&model.config, model.config.render.img_res, 1)?[0];
    let mut ranks = Vec::new();
    let (mut embeddings, mut truths) = (Vec::new(), Vec::new());
    for (ci, caption) in captions.iter().enumerate() {
        let mut row = Vec::new();
        for &seed in seeds {
            let g = model.generate(caption, seed)?;
            let view = model.render(&g.output.geo, &g.output.tex, &camera)?;
            let e = embedder.embed(&view.rgb)?.data().to_vec();
            row.push(retrieval_rank(&e, &sentences, ci));
            embeddings.push(e);
            truths.push(ci);
        }
        ranks.push(row);
    }
    Ok(RetrievalReport {
        k,
        precision: retrieval_precision(&embeddings, &truths, &sentences, k),
        captions: captions.to_vec(),
        seeds: seeds.to_vec(),
        ranks,
    })
}

/// Mean mask IoU between generations for each sample's caption and its
/// training views, over `seeds`.
pub fn training_view_iou(model: &Tpa3d, data: &[SyntheticSample], seeds: &[u64]) -> Result<f64> {
    let _guard = no_grad();
    let (mut total, mut count) = (0.0, 0usize);
    for sample in data {
        for &seed in seeds {
            let g = model.generate(&sample.caption, seed)?;
            for real in &sample.views {
                let fake = model.render(&g.output.geo, &g.output.tex, &real.camera)?;
                total += mask_iou(fake.mask.data(), real.mask.data());
                count += 1;
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SwapReport {
    pub geometry: f64,
    pub texture: f64,
}

/// Final-triplane difference norms between two captions at one seed.
pub fn caption_swap_difference(model: &Tpa3d, caption_a: &str, caption_b: &str, seed: u64) -> Result<SwapReport> {
    let _guard = no_grad();
    let (a, b) = (model.generate(caption_a, seed)?.output, model.generate(caption_b, seed)?.output);
    Ok(SwapReport { geometry: a.geo.distance(&b.geo), texture: a.tex.distance(&b.tex) })
}

#[derive(Clone, Debug, Serialize)]
pub struct Timing {
    pub samples: usize,
    pub mean_seconds: f64,
    pub median_seconds: f64,
}

impl Timing {
    pub fn from_samples(mut secs: Vec<f64>) -> Self {
        let n = secs.len();
        secs.sort_by(f64::total_cmp);
        let median = match n {
            0 => 0.0,
            _ if n % 2 == 1 => secs[n / 2],
            _ => 0.5 * (secs[n / 2 - 1] + secs[n / 2]),
        };
        Self { samples: n, mean_seconds: secs.iter().sum::<f64>() / n.max(1) as f64, median_seconds: median }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MachineInfo {
    pub os: &'static str,
    pub arch: &'static str,
    pub available_cores: usize,
    pub worker_threads: usize,
}

impl MachineInfo {
    pub fn current() -> Self {
        Self {
            os: std::env::consts::OS,
            arch: std::env::consts::ARCH,
            available_cores: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            worker_threads: rayon::current_num_threads(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub render_path: Timing,
    pub mesh_path: Timing,
    pub img_res: usize,
    pub tet_res: usize,
    pub machine: MachineInfo,
}

/// Times `samples` generations through (a) triplanes plus one render and
/// (b) triplanes plus mesh extraction and texturing.
pub fn bench(model: &Tpa3d, samples: usize) -> Result<BenchReport> {
    let _guard = no_grad();
    let captions = &model.config.eval.captions;
    let camera = eval_cameras(&model.config, model.config.render.img_res, 1)?[0];
    let grid = TetGrid::new(model.config.surface.tet_res)?;
    let (mut render, mut mesh) = (Vec::new(), Vec::new());
    for i in 0..samples {
        let caption = &captions[i % captions.len()];
        let t = Instant::now();
        let g = model.generate(caption, i as u64)?;
        model.render(&g.output.geo, &g.output.tex, &camera)?;
        render.push(t.elapsed().as_secs_f64());
        let t = Instant::now();
        let g = model.generate(caption, i as u64)?;
        model.mesh_on(&grid, &g.output.geo, &g.output.tex)?;
        mesh.push(t.elapsed().as_secs_f64());
    }
    Ok(BenchReport {
        render_path: Timing::from_samples(render),
        mesh_path: Timing::from_samples(mesh),
        img_res: model.config.render.img_res,
        tet_res: model.config.surface.tet_res,
        machine: MachineInfo::current(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_embedder_is_perfect() {
        let sentences: Vec<Vec<f64>> = (0..6).map(|i| (0..6).map(|j| if i == j { 1.0 } else { 0.1 }).collect()).collect();
        let truths: Vec<usize> = (0..6).collect();
        assert_eq!(retrieval_precision(&sentences, &truths, &sentences, 1), 1.0);
    }

    #[test]
    fn timing_median() {
        let t = Timing::from_samples(vec![3.0, 1.0, 2.0, 10.0]);
        assert_eq!(t.median_seconds, 2.5);
        assert_eq!(t.mean_seconds, 4.0);
    }
}
