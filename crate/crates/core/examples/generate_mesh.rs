//! Generates a textured mesh and turntable renders for one caption.
//!
//! `cargo run --release --example generate_mesh -- "a red sphere" [checkpoint] [out_dir]`

use std::path::{Path, PathBuf};

use tpa3d::config::RunConfig;
use tpa3d::model::Tpa3d;
use tpa3d::pipeline::{generate, write_generation};

fn main() -> tpa3d::Result<()> {
    let mut args = std::env::args().skip(1);
    let caption = args.next().unwrap_or_else(|| "a red sphere".into());
    let checkpoint = args.next().map(PathBuf::from);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "out/generate".into()));
    let config = RunConfig::overfit();
    let model = Tpa3d::load(&config, checkpoint.as_deref())?;
    for w in model.text.encode(&caption)?.1 {
        eprintln!("warning: {w}");
    }
    let g = generate(&model, &caption, 0, 4)?;
    write_generation(&g, &out, "mesh")?;
    println!(
        "{} vertices, {} faces, watertight {}; written to {}",
        g.mesh.vertices.len(),
        g.mesh.faces.len(),
        g.mesh.is_watertight(),
        Path::new(&out).join("mesh.obj").display()
    );
    Ok(())
}
