//! Cameras, images and volume rendering of radiance fields.

pub mod camera;
pub mod image;
pub mod views;
pub mod volume;

pub use camera::{make_camera_ring, random_pose, CameraPose, Projection, Ray};
pub use image::ImageBuffer;
pub use views::{MultiViewSet, VIEW_CHANNELS};
pub use volume::{
    composite, field_from_grid, pixel_rng, ray_interval, render_ray, render_view, sample_ray, sdf_to_density, Composite,
    EmptyField, GridField, RadianceField, RaySamples, RenderConfig, RenderedView, SDensityParams,
};
