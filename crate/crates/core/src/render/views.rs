//! Posed image sets: the 2D diffusion state.
//!
//! Views are stored as RGB plus a silhouette channel, so that silhouettes
//! travel with the colors through noising and denoising.

use rayon::prelude::*;

use crate::render::camera::CameraPose;
use crate::render::image::ImageBuffer;
use crate::render::volume::{render_view, RadianceField, RenderConfig};
use crate::{Error, Result};

pub const VIEW_CHANNELS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewSet {
    poses: Vec<CameraPose>,
    images: Vec<ImageBuffer>,
}

/// Per-view render seed derived from a run seed.
pub fn view_seed(seed: u64, view: usize) -> u64 {
    seed ^ (view as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl MultiViewSet {
    pub fn new(poses: Vec<CameraPose>, images: Vec<ImageBuffer>) -> Result<Self> {
        if poses.is_empty() {
            return Err(Error::InvalidCount("view set needs at least one view".into()));
        }
        if poses.len() != images.len() {
            return Err(Error::shape(format!("{} images", poses.len()), images.len()));
        }
        let channels = images[0].channels;
        for (p, img) in poses.iter().zip(&images) {
            if img.width != p.width || img.height != p.height || img.channels != channels {
                return Err(Error::shape(
                    format!("{}x{}x{channels}", p.width, p.height),
                    format!("{}x{}x{}", img.width, img.height, img.channels),
                ));
            }
        }
        Ok(MultiViewSet { poses, images })
    }

    /// Render RGB + silhouette views of `field` from every pose.
    pub fn render<F: RadianceField + ?Sized>(
        field: &F,
        poses: &[CameraPose],
        cfg: &RenderConfig,
        seed: u64,
    ) -> Result<Self> {
        let images = poses
            .par_iter()
            .enumerate()
            .map(|(k, p)| render_view(field, p, cfg, view_seed(seed, k)).map(|v| v.rgbs()))
            .collect::<Result<Vec<_>>>()?;
        MultiViewSet::new(poses.to_vec(), images)
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn poses(&self) -> &[CameraPose] {
        &self.poses
    }

    pub fn images(&self) -> &[ImageBuffer] {
        &self.images
    }

    pub fn images_mut(&mut self) -> &mut [ImageBuffer] {
        &mut self.images
    }

    pub fn channels(&self) -> usize {
        self.images[0].channels
    }

    /// Color channels of view `k`.
    pub fn rgb(&self, k: usize) -> ImageBuffer {
        self.images[k].select_channels(&[0, 1, 2])
    }

    pub fn flat_len(&self) -> usize {
        self.images.iter().map(|i| i.data.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        for img in &self.images {
            out.extend_from_slice(&img.data);
        }
        out
    }

    /// Same poses and shapes, new pixel values.
    pub fn with_flat(&self, data: &[f64]) -> Result<Self> {
        if data.len() != self.flat_len() {
            return Err(Error::shape(self.flat_len(), data.len()));
        }
        let mut images = self.images.clone();
        let mut off = 0;
        for img in &mut images {
            let len = img.data.len();
            img.data.copy_from_slice(&data[off..off + len]);
            off += len;
        }
        Ok(MultiViewSet {
            poses: self.poses.clone(),
            images,
        })
    }

    pub fn map_images(&self, f: impl Fn(usize, &ImageBuffer) -> ImageBuffer) -> Result<Self> {
        MultiViewSet::new(self.poses.clone(), self.images.iter().enumerate().map(|(k, i)| f(k, i)).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.images.iter().all(|i| i.data.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::camera::make_camera_ring;
    use crate::render::volume::EmptyField;

    #[test]
    fn flat_round_trip_and_shape_checks() {
        let poses = make_camera_ring(3, 30.0, 3.0, 40.0, 8, 8).unwrap();
        let set = MultiViewSet::render(&EmptyField, &poses, &RenderConfig::default(), 1).unwrap();
        assert_eq!(set.channels(), VIEW_CHANNELS);
        let flat = set.to_flat();
        assert_eq!(flat.len(), 3 * 8 * 8 * 4);
        assert_eq!(set.with_flat(&flat).unwrap(), set);
        assert!(set.with_flat(&flat[1..]).is_err());
        // Empty field: white, fully transparent.
        assert!(set.images()[0].data.chunks(4).all(|p| p == [1.0, 1.0, 1.0, 0.0]));
        assert!(MultiViewSet::new(poses.clone(), vec![ImageBuffer::new(8, 8, 4)]).is_err());
        assert!(MultiViewSet::new(vec![], vec![]).is_err());
    }
}
