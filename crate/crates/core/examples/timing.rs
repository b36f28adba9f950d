//! Times the render path and the mesh path at the desk configuration.

use tpa3d::config::RunConfig;
use tpa3d::model::Tpa3d;
use tpa3d::pipeline::{bench, init_threads};

fn main() -> tpa3d::Result<()> {
    init_threads()?;
    let model = Tpa3d::new(&RunConfig::default())?;
    let r = bench(&model, 5)?;
    println!("{}", serde_json::to_string_pretty(&r)?);
    Ok(())
}
