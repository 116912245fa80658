//! Corner-inclusive cubic lattice over `[-1, 1]^3`.
//!
//! Point `i` on an axis sits at `-1 + 2 i / (N - 1)`; the flat index of
//! `(x, y, z)` is `x + N * (y + N * z)`.

use crate::Vec3;

#[inline]
pub fn flat_index(n: usize, x: usize, y: usize, z: usize) -> usize {
    x + n * (y + n * z)
}

#[inline]
pub fn unflatten(n: usize, idx: usize) -> (usize, usize, usize) {
    (idx % n, (idx / n) % n, idx / (n * n))
}

#[inline]
pub fn spacing(n: usize) -> f64 {
    2.0 / (n as f64 - 1.0)
}

#[inline]
pub fn coord(n: usize, i: usize) -> f64 {
    -1.0 + 2.0 * i as f64 / (n as f64 - 1.0)
}

#[inline]
pub fn point(n: usize, x: usize, y: usize, z: usize) -> Vec3 {
    Vec3::new(coord(n, x), coord(n, y), coord(n, z))
}

pub fn point_of_index(n: usize, idx: usize) -> Vec3 {
    let (x, y, z) = unflatten(n, idx);
    point(n, x, y, z)
}

/// The eight lattice nodes surrounding a point and their trilinear weights.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    pub idx: [usize; 8],
    pub w: [f64; 8],
}

impl Stencil {
    /// Points outside the cube are clamped to its boundary.
    pub fn new(n: usize, p: &Vec3) -> Self {
        let last = (n - 1) as f64;
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let g = ((p[a] + 1.0) * 0.5 * last).clamp(0.0, last);
            let i0 = (g.floor() as usize).min(n - 2);
            base[a] = i0;
            frac[a] = g - i0 as f64;
        }
        let mut idx = [0usize; 8];
        let mut w = [0.0f64; 8];
        for corner in 0..8 {
            let (dx, dy, dz) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
            idx[corner] = flat_index(n, base[0] + dx, base[1] + dy, base[2] + dz);
            let wx = if dx == 1 { frac[0] } else { 1.0 - frac[0] };
            let wy = if dy == 1 { frac[1] } else { 1.0 - frac[1] };
            let wz = if dz == 1 { frac[2] } else { 1.0 - frac[2] };
            w[corner] = wx * wy * wz;
        }
        Stencil { idx, w }
    }

    #[inline]
    pub fn apply(&self, values: &[f64]) -> f64 {
        let mut acc = 0.0;
        for k in 0..8 {
            acc += self.w[k] * values[self.idx[k]];
        }
        acc
    }

    #[inline]
    pub fn apply3(&self, values: &[[f64; 3]]) -> [f64; 3] {
        let mut acc = [0.0; 3];
        for k in 0..8 {
            let v = &values[self.idx[k]];
            for c in 0..3 {
                acc[c] += self.w[k] * v[c];
            }
        }
        acc
    }
}

/// 6-connected neighbors of a lattice node.
pub fn neighbors6(n: usize, idx: usize) -> impl Iterator<Item = usize> {
    let (x, y, z) = unflatten(n, idx);
    let offsets: [(i64, i64, i64); 6] = [
        (-1, 0, 0),
        (1, 0, 0),
        (0, -1, 0),
        (0, 1, 0),
        (0, 0, -1),
        (0, 0, 1),
    ];
    offsets.into_iter().filter_map(move |(dx, dy, dz)| {
        let (nx, ny, nz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
        let lim = n as i64;
        if nx < 0 || ny < 0 || nz < 0 || nx >= lim || ny >= lim || nz >= lim {
            None
        } else {
            Some(flat_index(n, nx as usize, ny as usize, nz as usize))
        }
    })
}

/// Binary dilation by one node over the 26-neighborhood.
pub fn dilate26(n: usize, mask: &[bool]) -> Vec<bool> {
    let mut out = mask.to_vec();
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                if !mask[flat_index(n, x, y, z)] {
                    continue;
                }
                for dz in -1i64..=1 {
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let (nx, ny, nz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                            let lim = n as i64;
                            if nx >= 0 && ny >= 0 && nz >= 0 && nx < lim && ny < lim && nz < lim {
                                out[flat_index(n, nx as usize, ny as usize, nz as usize)] = true;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}
