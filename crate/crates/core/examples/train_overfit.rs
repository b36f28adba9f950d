//! Overfits the reduced model to the synthetic set and reports the overfit
//! metrics: training-view IoU, toy precision@1 and the color-swap ordering.
//!
//! `cargo run --release --example train_overfit -- [steps] [out_dir]`

use std::path::PathBuf;

use tpa3d::config::RunConfig;
use tpa3d::model::Tpa3d;
use tpa3d::pipeline::{build_dataset, caption_swap_difference, eval_retrieval, training_view_iou};
use tpa3d::train::train;

fn main() -> tpa3d::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let mut config = RunConfig::overfit();
    if let Some(steps) = args.next() {
        config.train.steps = steps.parse().map_err(|_| tpa3d::Error::Usage(format!("bad step count `{steps}`")))?;
    }
    let out = PathBuf::from(args.next().unwrap_or_else(|| "out/overfit".into()));
    let data = build_dataset(&config)?;
    let model = Tpa3d::new(&config)?;
    let seeds = &config.eval.seeds;
    println!("untrained IoU {:.3}", training_view_iou(&model, &data, seeds)?);
    let report = train(&model, &data, &out)?;
    println!("{} steps in {:.1} min", report.steps, report.seconds / 60.0);
    println!("training-view IoU {:.3}", training_view_iou(&model, &data, seeds)?);
    let retrieval = eval_retrieval(&model, &config.eval.captions, seeds, 1)?;
    println!("toy precision@1 {:.3}", retrieval.precision);
    for class in ["sphere", "box"] {
        let s = caption_swap_difference(&model, &format!("a red {class}"), &format!("a blue {class}"), 0)?;
        println!("red -> blue {class}: texture {:.4}, geometry {:.4}", s.texture, s.geometry);
    }
    Ok(())
}
