//! Triplane sampling, geometry/color decoders, marching tetrahedra and OBJ export.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use tpa3d_autodiff::{Array, Param, SampleGrid, Tensor};

use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::triplane::Triplane;

/// Replaces an exactly-zero SDF value so every vertex has a strict sign.
pub const ZERO_SDF_NUDGE: f64 = 1e-12;

const DEGENERATE_AREA: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurfaceConfig {
    /// Grid vertices per axis.
    pub tet_res: usize,
    pub hidden: usize,
    /// Adds `|p| - r` to the decoded SDF when set.
    pub sdf_prior_radius: Option<f64>,
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        Self { tet_res: 32, hidden: 32, sdf_prior_radius: None }
    }
}

/// Plane coordinates of points: xy -> (x, y), yz -> (y, z), xz -> (x, z).
/// The first coordinate indexes plane columns, the second rows.
pub fn plane_coords(points: &[[f64; 3]]) -> [Vec<[f64; 2]>; 3] {
    [
        points.iter().map(|p| [p[0], p[1]]).collect(),
        points.iter().map(|p| [p[1], p[2]]).collect(),
        points.iter().map(|p| [p[0], p[2]]).collect(),
    ]
}

/// Sum of the three bilinear plane samples, `[N x d]`. Points outside the
/// box are clamped to it.
pub fn sample_triplane(tp: &Triplane, points: &[[f64; 3]]) -> Result<Tensor> {
    let res = tp.resolution();
    let coords = plane_coords(points);
    let mut acc: Option<Tensor> = None;
    for (plane, c) in tp.planes().into_iter().zip(coords.iter()) {
        let s = plane.bilinear_sample(&SampleGrid::new(res, res, c))?;
        acc = Some(match acc {
            None => s,
            Some(a) => a.add(&s)?,
        });
    }
    Ok(acc.expect("three planes"))
}

/// SDF/deformation decoder and color decoder applied to triplane features.
#[derive(Debug)]
pub struct SurfaceHeads {
    pub geometry: Mlp,
    pub color: Mlp,
    prior_radius: Option<f64>,
}

impl SurfaceHeads {
    pub fn new(channels: usize, config: &SurfaceConfig, rng: &mut impl Rng) -> Self {
        Self {
            geometry: Mlp::new("head.geo", &[channels, config.hidden, 4], rng),
            color: Mlp::new("head.color", &[channels, config.hidden, 3], rng),
            prior_radius: config.sdf_prior_radius,
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = self.geometry.params();
        v.extend(self.color.params());
        v
    }

    /// `(sdf [N], deformation [N x 3])`; each deformation component is
    /// `limit * tanh(.)`.
    pub fn geometry_head(&self, features: &Tensor, limit: f64) -> Result<(Tensor, Tensor)> {
        let raw = self.geometry.forward(features)?;
        let n = raw.shape()[0];
        let sdf = raw.narrow(1, 0, 1)?.reshape(&[n])?;
        let deform = raw.narrow(1, 1, 3)?.tanh().scale(limit);
        Ok((sdf, deform))
    }

    /// Decoded SDF at `points` (including the optional radius prior), `[N]`.
    pub fn sdf(&self, features: &Tensor, points: &[[f64; 3]]) -> Result<Tensor> {
        let n = points.len();
        let raw = self.geometry.forward(features)?.narrow(1, 0, 1)?.reshape(&[n])?;
        self.with_prior(raw, points)
    }

    fn with_prior(&self, sdf: Tensor, points: &[[f64; 3]]) -> Result<Tensor> {
        match self.prior_radius {
            None => Ok(sdf),
            Some(r) => {
                let prior = points.iter().map(|p| norm(p) - r).collect();
                Ok(sdf.add(&Tensor::constant(Array::from_vec(prior)))?)
            }
        }
    }

    /// RGB in (0, 1), `[N x 3]`.
    pub fn color_head(&self, features: &Tensor) -> Result<Tensor> {
        Ok(self.color.forward(features)?.sigmoid())
    }

    /// SDF and deformation at every grid vertex.
    pub fn surface_field(&self, geo: &Triplane, grid: &TetGrid) -> Result<SurfaceField> {
        let feats = sample_triplane(geo, &grid.positions)?;
        let (sdf, deform) = self.geometry_head(&feats, grid.deform_limit())?;
        let sdf = self.with_prior(sdf, &grid.positions)?;
        let d = deform.data();
        Ok(SurfaceField {
            sdf: sdf.data().to_vec(),
            deform: (0..grid.positions.len()).map(|i| [d[3 * i], d[3 * i + 1], d[3 * i + 2]]).collect(),
        })
    }
}

fn norm(p: &[f64; 3]) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Six times the signed volume of a tetrahedron.
pub fn signed_volume(p: [[f64; 3]; 4]) -> f64 {
    dot(sub(p[1], p[0]), cross(sub(p[2], p[0]), sub(p[3], p[0])))
}

/// Twice the area and the unnormalized normal of a triangle.
pub fn triangle_normal(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> [f64; 3] {
    cross(sub(b, a), sub(c, a))
}

/// Regular grid over `[-1, 1]^3`, each cube split into six tetrahedra that
/// share the cube's main diagonal.
#[derive(Clone, Debug)]
pub struct TetGrid {
    pub resolution: usize,
    pub positions: Vec<[f64; 3]>,
    pub tets: Vec<[usize; 4]>,
}

/// Axis orders of the six tetrahedra of a cube; each walks from corner
/// (0,0,0) to (1,1,1) along one permutation of the axes.
const CUBE_PATHS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

impl TetGrid {
    pub fn new(resolution: usize) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::Config(format!("tet grid needs at least 2 vertices per axis, got {resolution}")));
        }
        let r = resolution;
        let cell = 2.0 / (r - 1) as f64;
        let coord = |i: usize| if i == r - 1 { 1.0 } else { -1.0 + i as f64 * cell };
        let mut positions = Vec::with_capacity(r * r * r);
        for i in 0..r {
            for j in 0..r {
                for k in 0..r {
                    positions.push([coord(i), coord(j), coord(k)]);
                }
            }
        }
        let index = |c: [usize; 3]| (c[0] * r + c[1]) * r + c[2];
        let mut tets = Vec::with_capacity(6 * (r - 1).pow(3));
        for i in 0..r - 1 {
            for j in 0..r - 1 {
                for k in 0..r - 1 {
                    for path in CUBE_PATHS {
                        let mut c = [i, j, k];
                        let mut tet = [index(c), 0, 0, 0];
                        for (step, &axis) in path.iter().enumerate() {
                            c[axis] += 1;
                            tet[step + 1] = index(c);
                        }
                        let p = tet.map(|v| positions[v]);
                        if signed_volume(p) < 0.0 {
                            tet.swap(2, 3);
                        }
                        tets.push(tet);
                    }
                }
            }
        }
        Ok(Self { resolution, positions, tets })
    }

    pub fn cell_size(&self) -> f64 {
        2.0 / (self.resolution - 1) as f64
    }

    /// Largest allowed deformation per axis: half a cell.
    pub fn deform_limit(&self) -> f64 {
        0.5 * self.cell_size()
    }
}

/// Per-vertex SDF and deformation on a [`TetGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceField {
    pub sdf: Vec<f64>,
    pub deform: Vec<[f64; 3]>,
}

impl SurfaceField {
    /// Undeformed field from an analytic SDF.
    pub fn from_fn(grid: &TetGrid, f: impl Fn([f64; 3]) -> f64) -> Self {
        Self { sdf: grid.positions.iter().map(|&p| f(p)).collect(), deform: vec![[0.0; 3]; grid.positions.len()] }
    }
}

/// Triangles for each inside/outside pattern of a positively oriented
/// tetrahedron. Bit `i` of the case index is set when vertex `i` is inside
/// (negative SDF). Entries are local edges `(a, b)`; normals point from
/// inside to outside.
pub const TET_CASES: [&[[(usize, usize); 3]]; 16] = [
    &[],
    &[[(0, 1), (0, 2), (0, 3)]],
    &[[(1, 0), (1, 3), (1, 2)]],
    &[[(0, 2), (0, 3), (1, 3)], [(0, 2), (1, 3), (1, 2)]],
    &[[(2, 0), (2, 1), (2, 3)]],
    &[[(0, 3), (0, 1), (2, 1)], [(0, 3), (2, 1), (2, 3)]],
    &[[(1, 0), (1, 3), (2, 3)], [(1, 0), (2, 3), (2, 0)]],
    &[[(3, 0), (3, 1), (3, 2)]],
    &[[(3, 0), (3, 2), (3, 1)]],
    &[[(0, 1), (0, 2), (3, 2)], [(0, 1), (3, 2), (3, 1)]],
    &[[(1, 2), (1, 0), (3, 0)], [(1, 2), (3, 0), (3, 2)]],
    &[[(2, 0), (2, 3), (2, 1)]],
    &[[(2, 0), (2, 1), (3, 1)], [(2, 0), (3, 1), (3, 0)]],
    &[[(1, 0), (1, 2), (1, 3)]],
    &[[(0, 1), (0, 3), (0, 2)]],
    &[],
];

/// Case index of four SDF values (after the zero nudge).
pub fn tet_case(sdf: [f64; 4]) -> usize {
    sdf.iter().enumerate().fold(0, |acc, (i, &s)| acc | (usize::from(nudge(s) < 0.0) << i))
}

fn nudge(s: f64) -> f64 {
    if s == 0.0 {
        ZERO_SDF_NUDGE
    } else {
        s
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TexturedMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
    /// Per-vertex RGB in `[0, 1]`.
    pub colors: Vec<[f64; 3]>,
}

impl TexturedMesh {
    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    /// Undirected edges with the number of faces using each.
    pub fn edge_counts(&self) -> HashMap<(usize, usize), usize> {
        let mut counts = HashMap::new();
        for f in &self.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Every edge borders exactly two faces.
    pub fn is_watertight(&self) -> bool {
        !self.faces.is_empty() && self.edge_counts().values().all(|&c| c == 2)
    }

    /// `V - E + F` over referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        self.faces.iter().flatten().for_each(|&v| used[v] = true);
        let v = used.iter().filter(|&&u| u).count() as i64;
        v - self.edge_counts().len() as i64 + self.faces.len() as i64
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if self.colors.len() != n {
            return Err(Error::Usage(format!("{} colors for {} vertices", self.colors.len(), n)));
        }
        if let Some(f) = self.faces.iter().find(|f| f.iter().any(|&i| i >= n)) {
            return Err(Error::Usage(format!("face {f:?} indexes past {n} vertices")));
        }
        Ok(())
    }
}

/// Mesh plus the grid edge each vertex was interpolated on.
#[derive(Clone, Debug)]
pub struct Extraction {
    pub mesh: TexturedMesh,
    /// Grid vertex pairs `(lo, hi)` with `lo < hi`, one per mesh vertex.
    pub edges: Vec<[usize; 2]>,
}

fn crossing(p_lo: [f64; 3], p_hi: [f64; 3], s_lo: f64, s_hi: f64) -> [f64; 3] {
    let t = s_lo / (s_lo - s_hi);
    [
        p_lo[0] + t * (p_hi[0] - p_lo[0]),
        p_lo[1] + t * (p_hi[1] - p_lo[1]),
        p_lo[2] + t * (p_hi[2] - p_lo[2]),
    ]
}

/// Marching tetrahedra; vertices on shared edges are merged and numbered in
/// order of first use. Colors are mid-gray until [`texture_mesh`].
pub fn marching_tets(grid: &TetGrid, field: &SurfaceField) -> Result<TexturedMesh> {
    Ok(marching_tets_with_edges(grid, field)?.mesh)
}

pub fn marching_tets_with_edges(grid: &TetGrid, field: &SurfaceField) -> Result<Extraction> {
    let n = grid.positions.len();
    if field.sdf.len() != n || field.deform.len() != n {
        return Err(Error::Usage(format!("field has {} values for {} grid vertices", field.sdf.len(), n)));
    }
    if field.sdf.iter().any(|s| !s.is_finite()) {
        return Err(Error::Usage("SDF contains non-finite values".into()));
    }
    let sdf: Vec<f64> = field.sdf.iter().map(|&s| nudge(s)).collect();
    let moved: Vec<[f64; 3]> = grid
        .positions
        .iter()
        .zip(&field.deform)
        .map(|(p, d)| [p[0] + d[0], p[1] + d[1], p[2] + d[2]])
        .collect();

    let mut index_of: HashMap<(usize, usize), usize> = HashMap::new();
    let mut mesh = TexturedMesh::default();
    let mut edges = Vec::new();
    for tet in &grid.tets {
        let case = tet_case(tet.map(|v| sdf[v]));
        for tri in TET_CASES[case] {
            let mut face = [0usize; 3];
            for (slot, &(a, b)) in face.iter_mut().zip(tri.iter()) {
                let (ga, gb) = (tet[a], tet[b]);
                let key = (ga.min(gb), ga.max(gb));
                *slot = *index_of.entry(key).or_insert_with(|| {
                    mesh.vertices.push(crossing(moved[key.0], moved[key.1], sdf[key.0], sdf[key.1]));
                    edges.push([key.0, key.1]);
                    mesh.vertices.len() - 1
                });
            }
            let [a, b, c] = face.map(|i| mesh.vertices[i]);
            let nrm = triangle_normal(a, b, c);
            if 0.5 * dot(nrm, nrm).sqrt() > DEGENERATE_AREA {
                mesh.faces.push(face);
            }
        }
    }
    mesh.colors = vec![[0.5; 3]; mesh.vertices.len()];
    Ok(Extraction { mesh, edges })
}

/// Mesh vertex positions as a differentiable function of per-grid-vertex SDF
/// `[Nv]` and deformed positions `[Nv x 3]`.
pub fn mesh_vertex_positions(edges: &[[usize; 2]], sdf: &Tensor, positions: &Tensor) -> Result<Tensor> {
    let m = edges.len();
    if m == 0 {
        return Err(Error::Usage("no crossing edges".into()));
    }
    let lo: Rc<[usize]> = edges.iter().map(|e| e[0]).collect();
    let hi: Rc<[usize]> = edges.iter().map(|e| e[1]).collect();
    let s_lo = sdf.gather(&lo)?;
    let s_hi = sdf.gather(&hi)?;
    let t = s_lo.div(&s_lo.sub(&s_hi)?)?;
    let flat = positions.reshape(&[positions.len()])?;
    let coords = |ends: &[usize]| -> Rc<[usize]> { ends.iter().flat_map(|&v| (0..3).map(move |c| 3 * v + c)).collect() };
    let p_lo = flat.gather(&coords(&lo))?.reshape(&[m, 3])?;
    let p_hi = flat.gather(&coords(&hi))?.reshape(&[m, 3])?;
    Ok(p_lo.add(&p_hi.sub(&p_lo)?.mul_axis(&t, 0)?)?)
}

/// Colors every vertex from the texture triplane.
pub fn texture_mesh(mesh: &TexturedMesh, tex: &Triplane, heads: &SurfaceHeads) -> Result<TexturedMesh> {
    let mut out = mesh.clone();
    if mesh.vertices.is_empty() {
        return Ok(out);
    }
    let rgb = heads.color_head(&sample_triplane(tex, &mesh.vertices)?)?;
    let d = rgb.data();
    out.colors = (0..mesh.vertices.len())
        .map(|i| [d[3 * i].clamp(0.0, 1.0), d[3 * i + 1].clamp(0.0, 1.0), d[3 * i + 2].clamp(0.0, 1.0)])
        .collect();
    Ok(out)
}

/// Wavefront OBJ with `v x y z r g b` lines and 1-based `f` lines.
pub fn write_obj(mut w: impl Write, mesh: &TexturedMesh) -> Result<()> {
    mesh.validate()?;
    writeln!(w, "# vertices {} faces {}", mesh.vertices.len(), mesh.faces.len())?;
    for (v, c) in mesh.vertices.iter().zip(&mesh.colors) {
        writeln!(w, "v {:.9} {:.9} {:.9} {:.6} {:.6} {:.6}", v[0], v[1], v[2], c[0], c[1], c[2])?;
    }
    for f in &mesh.faces {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}

pub fn export_obj(mesh: &TexturedMesh, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_obj(&mut w, mesh)?;
    w.flush()?;
    Ok(())
}

/// Reads the subset of OBJ written by [`write_obj`]; colors default to gray.
pub fn read_obj(r: impl BufRead) -> Result<TexturedMesh> {
    let mut mesh = TexturedMesh::default();
    let bad = |line: &str| Error::Format(format!("malformed OBJ line `{line}`"));
    for line in r.lines() {
        let line = line?;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let nums: Vec<f64> = parts.map(|p| p.parse::<f64>().map_err(|_| bad(&line))).collect::<Result<_>>()?;
                match nums.len() {
                    3 => mesh.colors.push([0.5; 3]),
                    6 => mesh.colors.push([nums[3], nums[4], nums[5]]),
                    _ => return Err(bad(&line)),
                }
                mesh.vertices.push([nums[0], nums[1], nums[2]]);
            }
            Some("f") => {
                let idx: Vec<usize> = parts
                    .map(|p| p.split('/').next().unwrap_or("").parse::<usize>().map_err(|_| bad(&line)))
                    .collect::<Result<_>>()?;
                if idx.len() != 3 || idx.contains(&0) {
                    return Err(bad(&line));
                }
                mesh.faces.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
            }
            _ => {}
        }
    }
    mesh.validate()?;
    Ok(mesh)
}

pub fn load_obj(path: impl AsRef<Path>) -> Result<TexturedMesh> {
    read_obj(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const UNIT_TET: [[f64; 3]; 4] = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    #[test]
    fn grid_tets_are_positive_and_cover_the_box() {
        let g = TetGrid::new(4).unwrap();
        assert_eq!(g.tets.len(), 6 * 27);
        for t in &g.tets {
            assert!(signed_volume(t.map(|v| g.positions[v])) > 0.0);
        }
        let total: f64 = g.tets.iter().map(|t| signed_volume(t.map(|v| g.positions[v])) / 6.0).sum();
        assert!((total - 8.0).abs() < 1e-12);
        assert_eq!(g.positions[0], [-1.0; 3]);
        assert_eq!(*g.positions.last().unwrap(), [1.0; 3]);
    }

    #[test]
    fn every_case_is_oriented_inside_to_outside() {
        for case in 0..16usize {
            let inside: Vec<usize> = (0..4).filter(|i| case >> i & 1 == 1).collect();
            let expected = match inside.len() {
                0 | 4 => 0,
                2 => 2,
                _ => 1,
            };
            assert_eq!(TET_CASES[case].len(), expected, "case {case}");
            if expected == 0 {
                continue;
            }
            let mean = |set: &[usize]| {
                let mut c = [0.0; 3];
                for &i in set {
                    (0..3).for_each(|k| c[k] += UNIT_TET[i][k] / set.len() as f64);
                }
                c
            };
            let outside: Vec<usize> = (0..4).filter(|i| case >> i & 1 == 0).collect();
            let dir = sub(mean(&outside), mean(&inside));
            for tri in TET_CASES[case] {
                for &(a, b) in tri {
                    assert_ne!(case >> a & 1, case >> b & 1, "edge ({a},{b}) of case {case} has no sign change");
                }
                let p = tri.map(|(a, b)| crossing(UNIT_TET[a], UNIT_TET[b], 0.5, -0.5));
                assert!(dot(triangle_normal(p[0], p[1], p[2]), dir) > 0.0, "case {case}");
            }
        }
    }

    #[test]
    fn single_negative_vertex_gives_one_triangle() {
        let grid = TetGrid { resolution: 2, positions: UNIT_TET.to_vec(), tets: vec![[0, 1, 2, 3]] };
        for v in 0..4 {
            let mut sdf = vec![1.0; 4];
            sdf[v] = -1.0;
            let field = SurfaceField { sdf, deform: vec![[0.0; 3]; 4] };
            let mesh = marching_tets(&grid, &field).unwrap();
            assert_eq!(mesh.faces.len(), 1);
            assert_eq!(mesh.vertices.len(), 3);
        }
        let empty = SurfaceField { sdf: vec![1.0; 4], deform: vec![[0.0; 3]; 4] };
        assert!(marching_tets(&grid, &empty).unwrap().is_empty());
    }

    #[test]
    fn box_sdf_is_watertight() {
        let grid = TetGrid::new(12).unwrap();
        let field = SurfaceField::from_fn(&grid, |p| {
            let q = p.map(|c| c.abs() - 0.55);
            let out = q.map(|c| c.max(0.0));
            norm(&out) + q[0].max(q[1]).max(q[2]).min(0.0)
        });
        let mesh = marching_tets(&grid, &field).unwrap();
        assert!(mesh.is_watertight());
        assert_eq!(mesh.euler_characteristic(), 2);
    }

    #[test]
    fn sampling_matches_scalar_bilinear() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let res = 5;
        let planes: Vec<Array> = (0..3).map(|_| Array::randn([2, res, res], 1.0, &mut rng)).collect();
        let tp = Triplane::new(
            Tensor::constant(planes[0].clone()),
            Tensor::constant(planes[1].clone()),
            Tensor::constant(planes[2].clone()),
        )
        .unwrap();
        let bilerp = |a: &Array, ch: usize, u: f64, v: f64| {
            let (fx, fy) = ((u + 1.0) / 2.0 * (res - 1) as f64, (v + 1.0) / 2.0 * (res - 1) as f64);
            let (x0, y0) = ((fx.floor() as usize).min(res - 2), (fy.floor() as usize).min(res - 2));
            let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
            let at = |y: usize, x: usize| a.at(&[ch, y, x]);
            (1.0 - ty) * ((1.0 - tx) * at(y0, x0) + tx * at(y0, x0 + 1))
                + ty * ((1.0 - tx) * at(y0 + 1, x0) + tx * at(y0 + 1, x0 + 1))
        };
        let pts: Vec<[f64; 3]> = (0..20).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let f = sample_triplane(&tp, &pts).unwrap();
        for (i, p) in pts.iter().enumerate() {
            for ch in 0..2 {
                let want = bilerp(&planes[0], ch, p[0], p[1]) + bilerp(&planes[1], ch, p[1], p[2]) + bilerp(&planes[2], ch, p[0], p[2]);
                assert!((f.value().at(&[i, ch]) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn obj_round_trip() {
        let mesh = TexturedMesh {
            vertices: vec![[0.1234567891, -0.5, 1.0], [0.0, 0.25, -0.75], [1.0, 1.0, 0.0]],
            faces: vec![[0, 1, 2]],
            colors: vec![[1.0, 0.0, 0.5]; 3],
        };
        let mut buf = Vec::new();
        write_obj(&mut buf, &mesh).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 3);
        assert_eq!(text.lines().filter(|l| l.starts_with("f ")).count(), 1);
        let back = read_obj(buf.as_slice()).unwrap();
        for (a, b) in mesh.vertices.iter().zip(&back.vertices) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-9);
            }
        }
        assert_eq!(back.faces, mesh.faces);
        let mut empty = Vec::new();
        write_obj(&mut empty, &TexturedMesh::default()).unwrap();
        assert!(read_obj(empty.as_slice()).unwrap().vertices.is_empty());
    }
}
