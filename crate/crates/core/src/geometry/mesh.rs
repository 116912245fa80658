//! Marching-cubes iso-surface extraction and OBJ export.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::geometry::grid::SdfGrid;
use crate::geometry::mc_tables::{CORNERS, EDGE_CONNECTION, TRIANGLE_CONNECTION};
use crate::lattice;
use crate::{Error, Result, Vec3};

const MIN_TRIANGLE_AREA: f64 = 1e-14;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle_area(&self, t: &[usize; 3]) -> f64 {
        let [a, b, c] = t.map(|i| self.vertices[i]);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn surface_area(&self) -> f64 {
        self.triangles.iter().map(|t| self.triangle_area(t)).sum()
    }

    pub fn write_obj(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        for v in &self.vertices {
            writeln!(w, "v {:.6} {:.6} {:.6}", v.x, v.y, v.z).map_err(io)?;
        }
        for t in &self.triangles {
            writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read_obj(path: &Path) -> Result<TriMesh> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |msg: String| Error::Format {
            path: path.to_path_buf(),
            msg,
        };
        let mut mesh = TriMesh::default();
        for (i, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            match it.next() {
                Some("v") => {
                    let c: Vec<f64> = it
                        .take(3)
                        .map(|s| s.parse().map_err(|_| bad(format!("line {}: bad vertex", i + 1))))
                        .collect::<Result<_>>()?;
                    if c.len() != 3 {
                        return Err(bad(format!("line {}: vertex needs 3 coordinates", i + 1)));
                    }
                    mesh.vertices.push(Vec3::new(c[0], c[1], c[2]));
                }
                Some("f") => {
                    let idx: Vec<usize> = it
                        .map(|s| {
                            s.split('/')
                                .next()
                                .and_then(|v| v.parse::<usize>().ok())
                                .filter(|v| *v >= 1)
                                .map(|v| v - 1)
                                .ok_or_else(|| bad(format!("line {}: bad face index", i + 1)))
                        })
                        .collect::<Result<_>>()?;
                    for k in 1..idx.len().saturating_sub(1) {
                        mesh.triangles.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        if mesh.triangles.iter().flatten().any(|i| *i >= mesh.vertices.len()) {
            return Err(bad("face index out of range".into()));
        }
        Ok(mesh)
    }
}

/// Marching cubes at level `iso`. A corner counts as inside when its value
/// is `<= iso`. Vertices are shared between cells through an edge map and
/// zero-area triangles are dropped.
pub fn extract_mesh(grid: &SdfGrid, iso: f64) -> TriMesh {
    let n = grid.resolution();
    let values = grid.values();
    let mut mesh = TriMesh::default();
    let mut edge_vertex: HashMap<(usize, usize), usize> = HashMap::new();

    for z in 0..n - 1 {
        for y in 0..n - 1 {
            for x in 0..n - 1 {
                let mut corner_idx = [0usize; 8];
                let mut corner_val = [0.0f64; 8];
                let mut case = 0usize;
                for (c, off) in CORNERS.iter().enumerate() {
                    let idx = lattice::flat_index(n, x + off[0], y + off[1], z + off[2]);
                    corner_idx[c] = idx;
                    corner_val[c] = values[idx];
                    if values[idx] <= iso {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let row = &TRIANGLE_CONNECTION[case];
                let mut k = 0;
                while k + 2 < row.len() && row[k] >= 0 {
                    let mut tri = [0usize; 3];
                    for j in 0..3 {
                        let [a, b] = EDGE_CONNECTION[row[k + j] as usize];
                        let (ia, ib) = (corner_idx[a], corner_idx[b]);
                        let key = (ia.min(ib), ia.max(ib));
                        tri[j] = *edge_vertex.entry(key).or_insert_with(|| {
                            let (va, vb) = (corner_val[a], corner_val[b]);
                            let pa = lattice::point_of_index(n, ia);
                            let pb = lattice::point_of_index(n, ib);
                            let denom = vb - va;
                            let t = if denom.abs() < 1e-300 {
                                0.5
                            } else {
                                ((iso - va) / denom).clamp(0.0, 1.0)
                            };
                            mesh.vertices.push(pa + (pb - pa) * t);
                            mesh.vertices.len() - 1
                        });
                    }
                    if tri[0] != tri[1]
                        && tri[1] != tri[2]
                        && tri[0] != tri[2]
                        && mesh.triangle_area(&tri) > MIN_TRIANGLE_AREA
                    {
                        mesh.triangles.push(tri);
                    }
                    k += 3;
                }
            }
        }
    }
    mesh
}
