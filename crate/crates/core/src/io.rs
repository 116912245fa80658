//! Binary containers for grids and view sets.
//!
//! Grid container: magic `SDFG`, u32 version, u32 N, then for version 2 a
//! u32 channel count C, then C blocks of N³ little-endian f32 in lattice
//! order. Version 1 is the single-channel form without the C field.
//!
//! View container: magic `MVWS`, u32 version, u32 count, u32 width,
//! u32 height, u32 channels, then per view four f64 pose values (azimuth,
//! elevation, radius, fov) and width·height·channels f32 pixels.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::distill::HiResField;
use crate::geometry::{ColorGrid, SdfGrid};
use crate::priors::{PriorProvenance, RadiancePrior};
use crate::render::{CameraPose, ImageBuffer, MultiViewSet, SDensityParams};
use crate::{Error, Result};

pub const GRID_MAGIC: &[u8; 4] = b"SDFG";
pub const VIEWS_MAGIC: &[u8; 4] = b"MVWS";
pub const VIEWS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct GridFile {
    pub version: u32,
    pub n: usize,
    pub channels: Vec<Vec<f64>>,
}

impl GridFile {
    pub fn new(n: usize, channels: Vec<Vec<f64>>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::InvalidCount("grid file needs at least one channel".into()));
        }
        if let Some(c) = channels.iter().find(|c| c.len() != n * n * n) {
            return Err(Error::shape(n * n * n, c.len()));
        }
        Ok(GridFile {
            version: if channels.len() == 1 { 1 } else { 2 },
            n,
            channels,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let len = self.n.pow(3);
        let mut out = Vec::with_capacity(16 + 4 * len * self.channels.len());
        out.extend_from_slice(GRID_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.n as u32).to_le_bytes());
        if self.version >= 2 {
            out.extend_from_slice(&(self.channels.len() as u32).to_le_bytes());
        }
        for c in &self.channels {
            for v in c {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        if r.take(4)? != GRID_MAGIC {
            return Err(r.bad("missing SDFG magic"));
        }
        let version = r.u32()?;
        let n = r.u32()? as usize;
        let count = match version {
            1 => 1,
            2 => r.u32()? as usize,
            v => return Err(r.bad(&format!("unsupported grid version {v}"))),
        };
        if n == 0 || count == 0 {
            return Err(r.bad("empty grid"));
        }
        let len = n.checked_pow(3).ok_or_else(|| r.bad("grid too large"))?;
        if r.remaining() != 4 * len * count {
            return Err(r.bad(&format!("expected {} data bytes, found {}", 4 * len * count, r.remaining())));
        }
        let channels = (0..count).map(|_| r.f32s(len)).collect::<Result<Vec<_>>>()?;
        Ok(GridFile { version, n, channels })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }

    fn expect_channels(&self, count: usize, path: &Path) -> Result<()> {
        if self.channels.len() == count {
            Ok(())
        } else {
            Err(Error::Format {
                path: path.to_path_buf(),
                msg: format!("expected {count} channels, found {}", self.channels.len()),
            })
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Reader { bytes, pos: 0, path }
    }

    fn bad(&self, msg: &str) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            msg: msg.into(),
        }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        if self.remaining() < k {
            return Err(self.bad("truncated file"));
        }
        let s = &self.bytes[self.pos..self.pos + k];
        self.pos += k;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f64>> {
        let raw = self.take(4 * count)?;
        Ok(raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect())
    }
}

fn split_rgb(rgb: &[[f64; 3]]) -> Vec<Vec<f64>> {
    (0..3).map(|c| rgb.iter().map(|v| v[c]).collect()).collect()
}

fn join_rgb(r: &[f64], g: &[f64], b: &[f64]) -> Vec<[f64; 3]> {
    r.iter().zip(g).zip(b).map(|((r, g), b)| [*r, *g, *b]).collect()
}

pub fn save_sdf(path: &Path, grid: &SdfGrid) -> Result<()> {
    GridFile::new(grid.resolution(), vec![grid.values().to_vec()])?.write(path)
}

pub fn load_sdf(path: &Path) -> Result<SdfGrid> {
    let mut f = GridFile::read(path)?;
    f.expect_channels(1, path)?;
    SdfGrid::from_values(f.n, f.channels.remove(0))
}

pub fn save_colors(path: &Path, colors: &ColorGrid) -> Result<()> {
    GridFile::new(colors.resolution(), split_rgb(colors.values()))?.write(path)
}

pub fn load_colors(path: &Path) -> Result<ColorGrid> {
    let f = GridFile::read(path)?;
    f.expect_channels(3, path)?;
    ColorGrid::from_values(f.n, join_rgb(&f.channels[0], &f.channels[1], &f.channels[2]))
}

/// Channels: density, R, G, B, mask (0 or 1).
pub fn save_field(path: &Path, field: &HiResField) -> Result<()> {
    let mut channels = vec![field.density_values().to_vec()];
    channels.extend(split_rgb(field.color_values()));
    channels.push(field.mask().iter().map(|m| if *m { 1.0 } else { 0.0 }).collect());
    GridFile::new(field.resolution(), channels)?.write(path)
}

pub fn load_field(path: &Path, params: SDensityParams) -> Result<HiResField> {
    let f = GridFile::read(path)?;
    f.expect_channels(5, path)?;
    let ch = &f.channels;
    HiResField::from_parts(
        f.n,
        ch[0].clone(),
        join_rgb(&ch[1], &ch[2], &ch[3]),
        ch[4].iter().map(|m| *m > 0.5).collect(),
        params,
    )
}

/// Channels: density, R, G, B. Signal level and provenance go in the manifest.
pub fn save_prior(path: &Path, prior: &RadiancePrior) -> Result<()> {
    let mut channels = vec![prior.density().to_vec()];
    channels.extend(split_rgb(prior.colors().values()));
    GridFile::new(prior.resolution(), channels)?.write(path)
}

pub fn load_prior(path: &Path, signal: f64, provenance: PriorProvenance) -> Result<RadiancePrior> {
    let f = GridFile::read(path)?;
    f.expect_channels(4, path)?;
    let ch = &f.channels;
    let colors = ColorGrid::from_values(f.n, join_rgb(&ch[1], &ch[2], &ch[3]))?;
    RadiancePrior::from_parts(ch[0].clone(), colors, signal, provenance)
}

pub fn encode_views(views: &MultiViewSet) -> Vec<u8> {
    let first = &views.images()[0];
    let mut out = Vec::new();
    out.extend_from_slice(VIEWS_MAGIC);
    for v in [VIEWS_VERSION, views.len() as u32, first.width as u32, first.height as u32, first.channels as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for (pose, img) in views.poses().iter().zip(views.images()) {
        for v in [pose.azimuth, pose.elevation, pose.radius, pose.fov_y] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &img.data {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_views(bytes: &[u8], path: &Path) -> Result<MultiViewSet> {
    let mut r = Reader::new(bytes, path);
    if r.take(4)? != VIEWS_MAGIC {
        return Err(r.bad("missing MVWS magic"));
    }
    let version = r.u32()?;
    if version != VIEWS_VERSION {
        return Err(r.bad(&format!("unsupported view set version {version}")));
    }
    let (count, w, h, c) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let mut poses = Vec::with_capacity(count);
    let mut images = Vec::with_capacity(count);
    for _ in 0..count {
        let (az, el, radius, fov) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
        poses.push(CameraPose::new(az, el, radius, fov, w, h)?);
        images.push(ImageBuffer::from_data(w, h, c, r.f32s(w * h * c)?)?);
    }
    if r.remaining() != 0 {
        return Err(r.bad("trailing bytes"));
    }
    MultiViewSet::new(poses, images)
}

pub fn save_views(path: &Path, views: &MultiViewSet) -> Result<()> {
    std::fs::write(path, encode_views(views)).map_err(|e| Error::io(path, e))
}

/// 8-bit RGB previews `<stem>_KK.ppm` in `dir`.
pub fn write_previews(dir: &Path, stem: &str, views: &MultiViewSet) -> Result<()> {
    for k in 0..views.len() {
        views.rgb(k).write_ppm(&dir.join(format!("{stem}_{k:02}.ppm")))?;
    }
    Ok(())
}

pub fn load_views(path: &Path) -> Result<MultiViewSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_views(&bytes, path)
}

/// Hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Create `dir` and its parents.
pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}
