//! Marching tetrahedra on an analytic sphere, written as OBJ, plus the
//! mesh statistics the extractor guarantees.

use tpa3d::surface::{export_obj, marching_tets, SurfaceField, TetGrid};

fn main() -> tpa3d::Result<()> {
    let (res, radius) = (32, 0.6);
    let grid = TetGrid::new(res)?;
    let field = SurfaceField::from_fn(&grid, |p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - radius);
    let mesh = marching_tets(&grid, &field)?;
    let err = mesh
        .vertices
        .iter()
        .map(|v| ((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt() - radius).abs())
        .fold(0.0, f64::max);
    println!(
        "{} vertices, {} faces, watertight {}, Euler {}, max radial error {:.4} ({:.3} cell diagonals)",
        mesh.vertices.len(),
        mesh.faces.len(),
        mesh.is_watertight(),
        mesh.euler_characteristic(),
        err,
        err / (grid.cell_size() * 3f64.sqrt())
    );
    export_obj(&mesh, "sphere.obj")?;
    Ok(())
}
