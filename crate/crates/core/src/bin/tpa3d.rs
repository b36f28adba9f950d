use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tpa3d::config::RunConfig;
use tpa3d::diagnostics::gradient_suite;
use tpa3d::model::Tpa3d;
use tpa3d::pipeline::{
    bench, build_dataset, eval_retrieval, export_dataset, generate, init_threads, interpolate, max_adjacent_distance,
    training_view_iou, write_generation,
};
use tpa3d::tpa::Ablation;
use tpa3d::train::train;
use tpa3d::Result;

#[derive(Parser)]
#[command(name = "tpa3d", version, about = "Text-conditioned triplane generation: data, training, generation and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Options,
}

#[derive(Subcommand, Clone, Copy, PartialEq)]
enum Command {
    /// Render the synthetic dataset to PNGs plus a manifest.
    MakeData,
    /// Train on the synthetic dataset; writes the loss log and checkpoints.
    Train,
    /// Generate a mesh and turntable renders for one caption.
    Generate,
    /// Blend two captions under a shared noise seed.
    Interpolate,
    /// Toy retrieval precision on the eval captions and IoU against training views.
    Eval,
    /// Time the render and mesh paths.
    Bench,
    /// Finite-difference gradient checks over every differentiable operation.
    Gradcheck,
}

#[derive(Clone, Copy, ValueEnum)]
enum AblationArg {
    Full,
    NoCrossWord,
    NoCrossPlane,
    Identity,
}

impl From<AblationArg> for Ablation {
    fn from(a: AblationArg) -> Self {
        match a {
            AblationArg::Full => Ablation::Full,
            AblationArg::NoCrossWord => Ablation::NoCrossWord,
            AblationArg::NoCrossPlane => Ablation::NoCrossPlane,
            AblationArg::Identity => Ablation::Identity,
        }
    }
}

#[derive(clap::Args)]
struct Options {
    /// JSON run config, or `preset:default|overfit|paper`.
    #[arg(long, global = true, default_value = "preset:default")]
    config: PathBuf,
    #[arg(long, global = true)]
    caption: Option<String>,
    /// Second caption for `interpolate`.
    #[arg(long, global = true)]
    caption_b: Option<String>,
    /// Noise seed for generation; run seed for `make-data` and `train`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    ablation: Option<AblationArg>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Weights to load; `train` resumes from it.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Tetrahedral grid vertices per axis.
    #[arg(long, global = true)]
    tet_res: Option<usize>,
    /// Training resolution; export resolution for `generate` and `interpolate`.
    #[arg(long, global = true)]
    img_res: Option<usize>,
    #[arg(long, global = true)]
    k_sharp: Option<f64>,
    /// Samples per ray.
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Generations timed by `bench`.
    #[arg(long, global = true)]
    bench_samples: Option<usize>,
    /// Turntable renders per generation.
    #[arg(long, global = true, default_value_t = 4)]
    views: usize,
}

impl Options {
    fn run_config(&self, command: Command) -> Result<RunConfig> {
        let mut c = RunConfig::load(&self.config)?;
        if let Some(a) = self.ablation {
            c.ablation = a.into();
        }
        if let (Some(s), Command::MakeData | Command::Train) = (self.seed, command) {
            c.seed = s;
        }
        if let Some(t) = self.tet_res {
            c.surface.tet_res = t;
        }
        if let Some(r) = self.img_res {
            match command {
                Command::Generate | Command::Interpolate => c.render.eval_img_res = r,
                _ => c.render.img_res = r,
            }
        }
        if let Some(k) = self.k_sharp {
            c.render.k_sharp = k;
        }
        if let Some(s) = self.samples {
            c.render.samples = s;
        }
        if let Some(s) = self.steps {
            c.train.steps = s;
        }
        if let Some(n) = self.bench_samples {
            c.eval.bench_samples = n;
        }
        c.validate()?;
        Ok(c)
    }

    fn caption(&self) -> Result<&str> {
        self.caption.as_deref().ok_or_else(|| tpa3d::Error::Usage("--caption is required".into()))
    }
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(value)?)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn model(config: &RunConfig, checkpoint: Option<&Path>) -> Result<Tpa3d> {
    if checkpoint.is_none() {
        log::warn!("no --checkpoint given; using freshly initialized weights");
    }
    Tpa3d::load(config, checkpoint)
}

#[derive(Serialize)]
struct EvalReport {
    retrieval: tpa3d::pipeline::RetrievalReport,
    training_view_iou: f64,
}

#[derive(Serialize)]
struct InterpolationReport {
    caption_a: String,
    caption_b: String,
    steps: usize,
    seed: u64,
    max_adjacent_distance: f64,
}

fn run(cli: &Cli) -> Result<bool> {
    let o = &cli.opts;
    if let Some(n) = init_threads()? {
        log::info!("worker threads capped at {n}");
    }
    let config = o.run_config(cli.command)?;
    let seed = o.seed.unwrap_or(0);
    match cli.command {
        Command::MakeData => {
            let data = build_dataset(&config)?;
            export_dataset(&data, &o.out)?;
            config.save(o.out.join("config.json"))?;
            println!("{} samples written to {}", data.len(), o.out.display());
        }
        Command::Train => {
            let data = build_dataset(&config)?;
            let m = Tpa3d::load(&config, o.checkpoint.as_deref())?;
            std::fs::create_dir_all(&o.out)?;
            config.save(o.out.join("config.json"))?;
            let report = train(&m, &data, &o.out)?;
            write_json(&o.out, "train_report.json", &report)?;
        }
        Command::Generate => {
            let m = model(&config, o.checkpoint.as_deref())?;
            let caption = o.caption()?;
            for w in m.text.encode(caption)?.1 {
                log::warn!("{w}");
            }
            let g = generate(&m, caption, seed, o.views)?;
            let stem = format!("seed{seed}");
            write_generation(&g, &o.out, &stem)?;
            println!("{} vertices, {} faces in {}", g.mesh.vertices.len(), g.mesh.faces.len(), o.out.join(format!("{stem}.obj")).display());
        }
        Command::Interpolate => {
            let m = model(&config, o.checkpoint.as_deref())?;
            let (a, b) = (o.caption()?, o.caption_b.as_deref().ok_or_else(|| tpa3d::Error::Usage("--caption-b is required".into()))?);
            let steps = config.eval.interpolation_steps;
            let frames = interpolate(&m, a, b, steps, seed, o.views)?;
            for (i, f) in frames.iter().enumerate() {
                write_generation(f, &o.out, &format!("frame{i:02}"))?;
            }
            let report = InterpolationReport {
                caption_a: a.into(),
                caption_b: b.into(),
                steps,
                seed,
                max_adjacent_distance: max_adjacent_distance(&frames),
            };
            write_json(&o.out, "interpolation.json", &report)?;
        }
        Command::Eval => {
            let m = model(&config, o.checkpoint.as_deref())?;
            let retrieval = eval_retrieval(&m, &config.eval.captions, &config.eval.seeds, config.eval.top_k)?;
            let data = build_dataset(&config)?;
            let iou = training_view_iou(&m, &data, &config.eval.seeds)?;
            println!("toy precision@{}: {:.4}; training-view mask IoU: {iou:.4}", retrieval.k, retrieval.precision);
            write_json(&o.out, "eval_report.json", &EvalReport { retrieval, training_view_iou: iou })?;
        }
        Command::Bench => {
            let m = model(&config, o.checkpoint.as_deref())?;
            let report = bench(&m, config.eval.bench_samples)?;
            println!(
                "render path {:.4}s mean, mesh path {:.4}s mean over {} samples",
                report.render_path.mean_seconds, report.mesh_path.mean_seconds, report.mesh_path.samples
            );
            write_json(&o.out, "bench_report.json", &report)?;
        }
        Command::Gradcheck => {
            let report = gradient_suite()?;
            for e in &report.entries {
                println!(
                    "{} {:<44} {:.3e} (< {:.0e}) worst analytic {:.6e} numeric {:.6e}",
                    if e.passed { "ok  " } else { "FAIL" },
                    e.name,
                    e.max_rel_err,
                    e.tolerance,
                    e.worst.0,
                    e.worst.1
                );
            }
            println!("{} checks in {:.1}s", report.entries.len(), report.seconds);
            write_json(&o.out, "gradcheck.json", &report)?;
            return Ok(report.all_passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
