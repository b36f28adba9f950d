//! Blends two captions under a shared noise seed and prints how far each
//! frame moves from the previous one.

use tpa3d::config::RunConfig;
use tpa3d::model::Tpa3d;
use tpa3d::pipeline::interpolate;

fn main() -> tpa3d::Result<()> {
    let mut config = RunConfig::overfit();
    config.surface.tet_res = 24;
    let model = Tpa3d::new(&config)?;
    let frames = interpolate(&model, "a red sphere", "a blue box", 8, 0, 0)?;
    for (i, w) in frames.windows(2).enumerate() {
        let (a, b) = (&w[0].generated.output, &w[1].generated.output);
        println!(
            "frame {i} -> {}: geometry {:.4}, texture {:.4}, faces {}",
            i + 1,
            a.geo.distance(&b.geo),
            a.tex.distance(&b.tex),
            w[1].mesh.faces.len()
        );
    }
    Ok(())
}
